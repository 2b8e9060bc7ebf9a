//! Synthetic labelled scenes: a ground plane with raised shapes on it,
//! uneven sampling density and injected exact-duplicate points.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{indexed_seed, rng_for, Rng};
use crate::spatial::{dist, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Plane,
    SphereShell,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveSpec {
    pub shape: ShapeKind,
    pub class: u32,
    /// Share of the non-duplicate point budget.
    pub weight: f64,
    /// Density ratio between the high-x and low-x side of the scene (>= 1).
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<PrimitiveSpec>,
    /// Total points per scene, duplicates included.
    pub points: usize,
    /// Fraction of `points` that are exact copies of other points, in [0, 0.5].
    pub duplicate_fraction: f64,
    /// Side of the square ground plane.
    pub extent: f64,
}

impl SceneSpec {
    /// Plane (class 0), sphere shell (class 1) and box (class 2).
    pub fn three_class() -> Self {
        SceneSpec {
            primitives: vec![
                PrimitiveSpec {
                    shape: ShapeKind::Plane,
                    class: 0,
                    weight: 0.4,
                    density: 3.0,
                },
                PrimitiveSpec {
                    shape: ShapeKind::SphereShell,
                    class: 1,
                    weight: 0.3,
                    density: 2.0,
                },
                PrimitiveSpec {
                    shape: ShapeKind::Box,
                    class: 2,
                    weight: 0.3,
                    density: 2.0,
                },
            ],
            points: 2048,
            duplicate_fraction: 0.1,
            extent: 1.0,
        }
    }

    pub fn plane_sphere() -> Self {
        let mut s = Self::three_class();
        s.primitives.truncate(2);
        s.primitives[0].weight = 0.5;
        s.primitives[1].weight = 0.5;
        s
    }

    pub fn n_classes(&self) -> usize {
        self.primitives.iter().map(|p| p.class as usize + 1).max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() || self.points == 0 {
            return Err(Error::EmptySpec);
        }
        let planes = self.primitives.iter().filter(|p| p.shape == ShapeKind::Plane).count();
        if planes > 1 {
            return Err(Error::Config("a scene has at most one ground plane".into()));
        }
        if !(0.0..=0.5).contains(&self.duplicate_fraction) {
            return Err(Error::Config(format!(
                "duplicate fraction must lie in [0, 0.5], got {}",
                self.duplicate_fraction
            )));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Config(format!("extent must be positive, got {}", self.extent)));
        }
        for p in &self.primitives {
            if !(p.weight > 0.0 && p.weight.is_finite()) || !(p.density >= 1.0 && p.density.is_finite()) {
                return Err(Error::Config(format!(
                    "primitive weight must be positive and density at least 1, got {p:?}"
                )));
            }
        }
        Ok(())
    }
}

/// A placed surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Rectangle at height `z` spanning `[min, max]` in x and y.
    Plane { min: [f64; 2], max: [f64; 2], z: f64 },
    SphereShell { center: Point3, radius: f64 },
    Box { min: Point3, max: Point3 },
}

impl Primitive {
    /// Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: Point3) -> f64 {
        match *self {
            Primitive::Plane { min, max, z } => {
                let dx = (min[0] - p[0]).max(p[0] - max[0]).max(0.0);
                let dy = (min[1] - p[1]).max(p[1] - max[1]).max(0.0);
                (dx * dx + dy * dy + (p[2] - z).powi(2)).sqrt()
            }
            Primitive::SphereShell { center, radius } => (dist(p, center) - radius).abs(),
            Primitive::Box { min, max } => {
                let q: [f64; 3] = std::array::from_fn(|a| {
                    let c = 0.5 * (min[a] + max[a]);
                    (p[a] - c).abs() - 0.5 * (max[a] - min[a])
                });
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                if outside > 0.0 {
                    outside
                } else {
                    -q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                }
            }
        }
    }

    /// Uniform sample on the surface.
    fn sample(&self, rng: &mut Rng) -> Point3 {
        match *self {
            Primitive::Plane { min, max, z } => [rng.random_range(min[0]..=max[0]), rng.random_range(min[1]..=max[1]), z],
            Primitive::SphereShell { center, radius } => {
                let cz: f64 = rng.random_range(-1.0..=1.0);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - cz * cz).max(0.0).sqrt();
                [
                    center[0] + radius * s * phi.cos(),
                    center[1] + radius * s * phi.sin(),
                    center[2] + radius * cz,
                ]
            }
            Primitive::Box { min, max } => {
                let side: [f64; 3] = std::array::from_fn(|a| max[a] - min[a]);
                // face pair normal to axis a has area side[b] * side[c]
                let areas = [side[1] * side[2], side[0] * side[2], side[0] * side[1]];
                let mut pick = rng.random_range(0.0..areas.iter().sum::<f64>());
                let mut axis = 2;
                for (a, &area) in areas.iter().enumerate() {
                    if pick < area {
                        axis = a;
                        break;
                    }
                    pick -= area;
                }
                let mut p: Point3 = std::array::from_fn(|a| rng.random_range(min[a]..=max[a]));
                p[axis] = if rng.random_bool(0.5) { min[axis] } else { max[axis] };
                p
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    /// Positions and labels; no feature channels.
    pub cloud: PointCloud,
    /// Placed primitives with their class ids.
    pub primitives: Vec<(Primitive, u32)>,
}

impl SynthScene {
    /// Class of the primitive closest to `p`; ties go to the first listed.
    pub fn nearest_class(&self, p: Point3) -> u32 {
        let mut best = (f64::INFINITY, 0);
        for (prim, class) in &self.primitives {
            let d = prim.distance(p);
            if d < best.0 {
                best = (d, *class);
            }
        }
        best.1
    }
}

/// Place the primitives: the plane covers the ground, every other shape gets
/// its own slot along x and floats a small gap above the plane.
fn layout(spec: &SceneSpec, rng: &mut Rng) -> Vec<Primitive> {
    let e = spec.extent;
    let raised = spec.primitives.iter().filter(|p| p.shape != ShapeKind::Plane).count();
    let mut slots: Vec<usize> = (0..raised).collect();
    slots.shuffle(rng);
    let width = e / raised.max(1) as f64;
    let mut next = 0;
    spec.primitives
        .iter()
        .map(|p| {
            if p.shape == ShapeKind::Plane {
                return Primitive::Plane {
                    min: [0.0, 0.0],
                    max: [e, e],
                    z: 0.0,
                };
            }
            let slot = slots[next];
            next += 1;
            let gap = e * rng.random_range(0.05..=0.15);
            // half extent in x and y, kept clear of the slot walls
            let half = match p.shape {
                ShapeKind::SphereShell => width * rng.random_range(0.3..=0.4),
                _ => width * rng.random_range(0.15..=0.3),
            }
            .min(0.4 * e);
            let margin = 0.05 * width;
            let x_lo = slot as f64 * width + margin + half;
            let x_hi = (slot + 1) as f64 * width - margin - half;
            let cx = if x_hi > x_lo { rng.random_range(x_lo..=x_hi) } else { 0.5 * (x_lo + x_hi) };
            let cy = rng.random_range(half..=(e - half).max(half));
            match p.shape {
                ShapeKind::SphereShell => Primitive::SphereShell {
                    center: [cx, cy, gap + half],
                    radius: half,
                },
                _ => {
                    let height = e * rng.random_range(0.15..=0.3);
                    Primitive::Box {
                        min: [cx - half, cy - half, gap],
                        max: [cx + half, cy + half, gap + height],
                    }
                }
            }
        })
        .collect()
}

/// Split `total` by weight with largest remainders.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// The `index`-th scene of the stream seeded by `seed`.
pub fn synth_scene(seed: u64, index: u64, spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = rng_for(indexed_seed(seed, "scene", index), "layout");
    let placed = layout(spec, &mut rng);

    let n_dup = (spec.duplicate_fraction * spec.points as f64).round() as usize;
    let n_base = spec.points - n_dup;
    let budgets = apportion(n_base, &spec.primitives.iter().map(|p| p.weight).collect::<Vec<_>>());

    let mut positions = Vec::with_capacity(spec.points);
    let mut labels = Vec::with_capacity(spec.points);
    for ((prim, ps), &budget) in placed.iter().zip(&spec.primitives).zip(&budgets) {
        let mut kept = 0;
        while kept < budget {
            let p = prim.sample(&mut rng);
            // density grows linearly from 1 at x = 0 to `ps.density` at x = extent
            let t = (p[0] / spec.extent).clamp(0.0, 1.0);
            if rng.random_range(0.0..ps.density) < 1.0 + (ps.density - 1.0) * t {
                positions.push(p);
                labels.push(ps.class);
                kept += 1;
            }
        }
    }
    for i in sample(&mut rng, n_base, n_dup.min(n_base)).into_iter() {
        positions.push(positions[i]);
        labels.push(labels[i]);
    }

    let mut perm: Vec<usize> = (0..positions.len()).collect();
    perm.shuffle(&mut rng);
    let cloud = PointCloud::from_positions(perm.iter().map(|&i| positions[i]).collect())?;
    let cloud = PointCloud {
        labels: Some(perm.iter().map(|&i| labels[i]).collect()),
        ..cloud
    };
    Ok(SynthScene {
        cloud,
        primitives: placed.into_iter().zip(spec.primitives.iter().map(|p| p.class)).collect(),
    })
}

/// `count` scenes; scene `i` depends only on `seed`, `i` and `spec`.
pub fn synth_scenes(seed: u64, count: usize, spec: &SceneSpec) -> Result<Vec<SynthScene>> {
    spec.validate()?;
    (0..count as u64).map(|i| synth_scene(seed, i, spec)).collect()
}
