use super::{dist2, Point3};

/// Uniform grid over a point set, stored as point indices sorted by bucket
/// key `(x, y, z)`. A run of buckets along z is then one contiguous slice.
#[derive(Debug, Clone)]
pub struct UniformGrid {
    cell: f64,
    keys: Vec<[i64; 3]>,
    order: Vec<u32>,
}

impl UniformGrid {
    pub fn build(points: &[Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell edge must be positive");
        let mut entries: Vec<([i64; 3], u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (key(*p, cell), i as u32))
            .collect();
        entries.sort_unstable();
        let (keys, order) = entries.into_iter().unzip();
        UniformGrid { cell, keys, order }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Indices of every point within `radius` of `center` (inclusive), in
    /// ascending order.
    pub fn within(&self, points: &[Point3], center: Point3, radius: f64, out: &mut Vec<u32>) {
        out.clear();
        let r2 = radius * radius;
        let lo = key([center[0] - radius, center[1] - radius, center[2] - radius], self.cell);
        let hi = key([center[0] + radius, center[1] + radius, center[2] + radius], self.cell);
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                let start = self.keys.partition_point(|k| *k < [x, y, lo[2]]);
                let end = start + self.keys[start..].partition_point(|k| *k <= [x, y, hi[2]]);
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| dist2(points[i as usize], center) <= r2),
                );
            }
        }
        out.sort_unstable();
    }
}

#[inline]
fn key(p: Point3, cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_points_across_bucket_boundaries() {
        let pts = vec![[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.95, 0.0], [3.0, 0.0, 0.0]];
        let grid = UniformGrid::build(&pts, 0.5);
        let mut out = Vec::new();
        grid.within(&pts, [0.0, 0.0, 0.0], 1.0, &mut out);
        assert_eq!(out, vec![0, 1, 2]);
    }

    #[test]
    fn empty_grid_returns_nothing() {
        let grid = UniformGrid::build(&[], 1.0);
        let mut out = vec![7];
        grid.within(&[], [0.0; 3], 1.0, &mut out);
        assert!(out.is_empty());
    }
}
