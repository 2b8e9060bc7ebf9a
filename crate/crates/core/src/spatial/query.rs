use crate::error::{Error, Result};
use crate::geometry::KernelGeometry;

use super::{add, dist2, Point3, UniformGrid};

/// Greedy max-min subset selection.
///
/// The first pick is `start`; every later pick maximises the distance to the
/// closest point already picked, ties going to the lowest index. Points
/// already picked are never picked again, so `m == N` yields a permutation.
pub fn farthest_point_sample(positions: &[Point3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if m == 0 || m > n {
        return Err(Error::SampleTooLarge {
            requested: m,
            available: n,
        });
    }
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, len: n });
    }
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut picked = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = start;
    for _ in 0..m {
        out.push(current);
        picked[current] = true;
        let c = positions[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            if picked[i] {
                continue;
            }
            let d = dist2(*p, c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// Fixed-size neighbourhoods from [`ball_query`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    /// `centers x k`, row-major.
    pub indices: Vec<u32>,
    /// Genuine (non-padded) entries per row.
    pub valid_counts: Vec<u32>,
    pub k: usize,
}

impl NeighborTable {
    /// Fill value for rows whose ball holds no point.
    pub const EMPTY: u32 = u32::MAX;

    pub fn row(&self, center: usize) -> &[u32] {
        &self.indices[center * self.k..(center + 1) * self.k]
    }

    /// The genuine neighbours of `center`.
    pub fn valid(&self, center: usize) -> &[u32] {
        &self.row(center)[..self.valid_counts[center] as usize]
    }

    pub fn centers(&self) -> usize {
        self.valid_counts.len()
    }
}

/// Up to `k` points within `radius` of each center, lowest indices first.
///
/// Over-full balls keep the `k` lowest indices; under-full rows are padded by
/// repeating the first neighbour; empty rows hold [`NeighborTable::EMPTY`].
pub fn ball_query(positions: &[Point3], centers: &[Point3], radius: f64, k: usize) -> Result<NeighborTable> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidRadius(radius));
    }
    if k == 0 {
        return Err(Error::Config("ball query needs k >= 1".into()));
    }
    let grid = UniformGrid::build(positions, radius);
    let mut indices = Vec::with_capacity(centers.len() * k);
    let mut valid_counts = Vec::with_capacity(centers.len());
    let mut found = Vec::new();
    for c in centers {
        grid.within(positions, *c, radius, &mut found);
        found.truncate(k);
        valid_counts.push(found.len() as u32);
        let fill = found.first().copied().unwrap_or(NeighborTable::EMPTY);
        indices.extend_from_slice(&found);
        indices.extend(std::iter::repeat_n(fill, k - found.len()));
    }
    Ok(NeighborTable {
        indices,
        valid_counts,
        k,
    })
}

/// Members of every (kernel center, cell) pair, stored compactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMembership {
    pub centers: usize,
    pub cells: usize,
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl CellMembership {
    /// Indices (ascending) of the points inside cell `k` of kernel `j`.
    pub fn members(&self, j: usize, k: usize) -> &[u32] {
        let slot = j * self.cells + k;
        &self.members[self.offsets[slot]..self.offsets[slot + 1]]
    }

    /// Flat slot index of `(j, k)` and the range of its entries in
    /// [`CellMembership::flat_members`].
    pub fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        self.offsets[slot]..self.offsets[slot + 1]
    }

    pub fn flat_members(&self) -> &[u32] {
        &self.members
    }

    pub fn total_entries(&self) -> usize {
        self.members.len()
    }

    pub fn occupancy(&self) -> Vec<u32> {
        self.offsets.windows(2).map(|w| (w[1] - w[0]) as u32).collect()
    }
}

/// For kernel center `x_j` and cell offset `dx_k`, every point within the
/// cell radius of `x_j + dx_k`. Cells overlap, so a point may appear in
/// several lists.
pub fn assign_cells(positions: &[Point3], centers: &[Point3], geometry: &KernelGeometry) -> CellMembership {
    let r = geometry.cell_radius;
    let cells = geometry.len();
    let mut offsets = Vec::with_capacity(centers.len() * cells + 1);
    let mut members = Vec::new();
    offsets.push(0);
    if positions.is_empty() {
        offsets.resize(centers.len() * cells + 1, 0);
        return CellMembership {
            centers: centers.len(),
            cells,
            offsets,
            members,
        };
    }
    let grid = UniformGrid::build(positions, r);
    let mut found = Vec::new();
    for c in centers {
        for dx in &geometry.cell_offsets {
            grid.within(positions, add(*c, *dx), r, &mut found);
            members.extend_from_slice(&found);
            offsets.push(members.len());
        }
    }
    CellMembership {
        centers: centers.len(),
        cells,
        offsets,
        members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_kernel, KernelKind, LayoutPreset};

    fn line(n: usize) -> Vec<Point3> {
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn fps_on_a_line_breaks_ties_low() {
        assert_eq!(farthest_point_sample(&line(10), 3, 0).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn fps_two_points() {
        assert_eq!(farthest_point_sample(&line(2), 2, 1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn fps_full_selection_is_a_permutation() {
        let mut pts = line(6);
        pts.push([2.0, 0.0, 0.0]); // duplicate
        let mut got = farthest_point_sample(&pts, 7, 3).unwrap();
        got.sort_unstable();
        assert_eq!(got, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn fps_errors() {
        assert!(matches!(farthest_point_sample(&[], 1, 0), Err(Error::EmptyCloud)));
        assert!(matches!(
            farthest_point_sample(&line(3), 4, 0),
            Err(Error::SampleTooLarge { .. })
        ));
        assert!(farthest_point_sample(&line(3), 1, 3).is_err());
    }

    #[test]
    fn ball_query_self_neighbourhood_is_padded() {
        let pts = line(5);
        let t = ball_query(&pts, &[pts[2]], 1e-9, 4).unwrap();
        assert_eq!(t.row(0), &[2, 2, 2, 2]);
        assert_eq!(t.valid_counts, vec![1]);
    }

    #[test]
    fn ball_query_empty_ball() {
        let pts = line(5);
        let t = ball_query(&pts, &[[0.5, 0.5, 0.5]], 0.1, 3).unwrap();
        assert_eq!(t.valid_counts, vec![0]);
        assert!(t.row(0).iter().all(|&i| i == NeighborTable::EMPTY));
    }

    #[test]
    fn ball_query_keeps_lowest_indices_when_full() {
        let pts = line(10);
        let t = ball_query(&pts, &[[5.0, 0.0, 0.0]], 3.0, 3).unwrap();
        assert_eq!(t.row(0), &[2, 3, 4]);
    }

    #[test]
    fn point_at_cell_center_is_a_member() {
        let k = build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::K15).unwrap();
        let center = [1.0, 2.0, 3.0];
        let target = add(center, k.cell_offsets[4]);
        let m = assign_cells(&[target], &[center], &k);
        assert_eq!(m.members(0, 4), &[0]);
        // cells are 1.633 apart with radius 1: only the home cell holds an exact center
        let total: usize = (0..k.len()).map(|c| m.members(0, c).len()).sum();
        assert_eq!(total, 1);
    }

    #[test]
    fn empty_cloud_gives_empty_cells() {
        let k = build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::K15).unwrap();
        let m = assign_cells(&[], &[[0.0; 3], [1.0; 3]], &k);
        assert_eq!(m.total_entries(), 0);
        assert!(m.occupancy().iter().all(|&c| c == 0));
        assert!(m.members(1, 14).is_empty());
    }
}
