//! Brute-force oracles and random instances shared by the integration tests.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sphconv::geometry::KernelGeometry;
use sphconv::spatial::{add, dist2};
use sphconv::Point3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-half..half)))
        .collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0..1.0))
}

/// Uniform point in the ball of radius `r` around `c`.
pub fn in_ball(rng: &mut ChaCha8Rng, c: Point3, r: f64) -> Point3 {
    loop {
        let p: Point3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if dist2(p, [0.0; 3]) <= 1.0 {
            return [c[0] + r * p[0], c[1] + r * p[1], c[2] + r * p[2]];
        }
    }
}

/// Greedy max-min selection recomputed from scratch at every step.
pub fn fps_oracle(points: &[Point3], m: usize, start: usize) -> Vec<usize> {
    let mut picked = vec![start];
    while picked.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked
                .iter()
                .map(|&j| dist2(*p, points[j]))
                .fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        picked.push(best.1);
    }
    picked
}

/// Points within `radius` of `center`, ascending, at most `k`.
pub fn ball_oracle(points: &[Point3], center: Point3, radius: f64, k: usize) -> Vec<u32> {
    (0..points.len())
        .filter(|&i| dist2(points[i], center) <= radius * radius)
        .take(k)
        .map(|i| i as u32)
        .collect()
}

/// Members of cell `k` around `center` by a full containment scan.
pub fn cell_oracle(points: &[Point3], center: Point3, geometry: &KernelGeometry, k: usize) -> Vec<u32> {
    let c = add(center, geometry.cell_offsets[k]);
    let r2 = geometry.cell_radius * geometry.cell_radius;
    (0..points.len())
        .filter(|&i| dist2(points[i], c) <= r2)
        .map(|i| i as u32)
        .collect()
}
