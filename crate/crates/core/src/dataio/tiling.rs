//! Sliding-window tiling of large scenes and stitching of per-tile logits.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spatial::{Point3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTile {
    pub cube_min: Point3,
    pub cube_size: [f64; 3],
    /// Ascending indices into the parent scene.
    pub point_indices: Vec<usize>,
}

impl SceneTile {
    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| p[a] >= self.cube_min[a] && p[a] <= self.cube_min[a] + self.cube_size[a])
    }
}

/// Indoor-room window: 3 x 1.5 x 1.5 m cubes overlapping by 0.5 m.
pub const ROOM_PRESET: ([f64; 3], f64) = ([3.0, 1.5, 1.5], 0.5);
/// Street-scene window: 10 x 5 x 5 m cubes overlapping by 2.5 m.
pub const STREET_PRESET: ([f64; 3], f64) = ([10.0, 5.0, 5.0], 2.5);

/// Number of window positions along one axis of length `extent`.
pub fn windows_along(extent: f64, size: f64, stride: f64) -> usize {
    if extent <= size {
        1
    } else {
        ((extent - size) / stride).ceil() as usize + 1
    }
}

/// Axis-aligned windows with stride `size - overlap` over the scene's
/// bounding box. Windows are closed boxes; empty ones are dropped. Tiles
/// come in x-major, then y, then z order.
pub fn tile_scene(scene: &PointCloud, cube_size: [f64; 3], overlap: f64) -> Result<Vec<SceneTile>> {
    let (lo, hi) = scene.bounds().ok_or(Error::EmptyCloud)?;
    if cube_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("cube size must be positive, got {cube_size:?}")));
    }
    let min_side = cube_size.iter().copied().fold(f64::INFINITY, f64::min);
    if !(0.0..min_side).contains(&overlap) {
        return Err(Error::Config(format!(
            "overlap must lie in [0, {min_side}), got {overlap}"
        )));
    }
    let stride: [f64; 3] = std::array::from_fn(|a| cube_size[a] - overlap);
    let counts: [usize; 3] = std::array::from_fn(|a| windows_along(hi[a] - lo[a], cube_size[a], stride[a]));
    let origin = |a: usize, i: usize| lo[a] + i as f64 * stride[a];

    // windows along axis `a` whose closed interval holds `x`
    let axis_windows = |a: usize, x: f64| -> Vec<usize> {
        let last = counts[a] - 1;
        let rel = x - lo[a];
        let from = (((rel - cube_size[a]) / stride[a]).floor().max(0.0) as usize).min(last);
        let to = ((rel / stride[a]).ceil().max(0.0) as usize).min(last);
        let hits: Vec<usize> = (from..=to)
            .filter(|&i| x >= origin(a, i) && x <= origin(a, i) + cube_size[a])
            .collect();
        if hits.is_empty() {
            // only reachable through rounding at the far edge of the box
            vec![to]
        } else {
            hits
        }
    };

    let mut tiles: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    for (idx, p) in scene.positions.iter().enumerate() {
        let w: [Vec<usize>; 3] = std::array::from_fn(|a| axis_windows(a, p[a]));
        for &i in &w[0] {
            for &j in &w[1] {
                for &k in &w[2] {
                    tiles.entry([i, j, k]).or_default().push(idx);
                }
            }
        }
    }
    Ok(tiles
        .into_iter()
        .map(|(key, point_indices)| SceneTile {
            cube_min: std::array::from_fn(|a| origin(a, key[a])),
            cube_size,
            point_indices,
        })
        .collect())
}

/// Per-point class from summed tile logits; ties go to the lowest class.
/// `logits[t]` has one row per index of `tiles[t]`.
pub fn stitch_predictions(n_points: usize, tiles: &[SceneTile], logits: &[Array2<f64>]) -> Result<Vec<u32>> {
    if tiles.len() != logits.len() {
        return Err(Error::shape("tile logits", tiles.len(), logits.len()));
    }
    let classes = logits.first().map_or(0, |l| l.ncols());
    let mut sum = Array2::<f64>::zeros((n_points, classes));
    let mut covered = vec![false; n_points];
    for (tile, l) in tiles.iter().zip(logits) {
        if l.nrows() != tile.point_indices.len() || l.ncols() != classes {
            return Err(Error::shape(
                "tile logits rows x classes",
                format!("{}x{classes}", tile.point_indices.len()),
                format!("{}x{}", l.nrows(), l.ncols()),
            ));
        }
        for (row, &i) in tile.point_indices.iter().enumerate() {
            if i >= n_points {
                return Err(Error::IndexOutOfRange { index: i, len: n_points });
            }
            covered[i] = true;
            let mut dst = sum.row_mut(i);
            dst += &l.row(row);
        }
    }
    if let Some(i) = covered.iter().position(|&c| !c) {
        return Err(Error::Uncovered(i));
    }
    Ok(crate::network::argmax_rows(sum.view()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_count_closed_form() {
        assert_eq!(windows_along(10.0, 3.0, 2.5), 4);
        assert_eq!(windows_along(3.0, 3.0, 2.5), 1);
        assert_eq!(windows_along(0.0, 3.0, 2.5), 1);
    }

    #[test]
    fn stitch_sums_then_argmax() {
        let tiles = vec![
            SceneTile {
                cube_min: [0.0; 3],
                cube_size: [1.0; 3],
                point_indices: vec![0],
            },
            SceneTile {
                cube_min: [0.0; 3],
                cube_size: [1.0; 3],
                point_indices: vec![0, 1],
            },
        ];
        let logits = vec![ndarray::array![[1.0, 0.0]], ndarray::array![[0.0, 2.0], [3.0, 3.0]]];
        assert_eq!(stitch_predictions(2, &tiles, &logits).unwrap(), vec![1, 0]);
        assert!(matches!(
            stitch_predictions(3, &tiles, &logits),
            Err(Error::Uncovered(2))
        ));
    }
}
