//! Inverse-square-distance interpolation of point features onto kernel cells.
//!
//! Each member `i` of cell `(j, k)` gets weight `w = 1 / (d^2 + eps)`, with
//! `d` its distance to the cell center and `eps = 1e-6 r^2`. When a density
//! `rho` is supplied the weight becomes `w / rho_i`. The cell feature is the
//! normalised weighted mean of its members; empty cells are zero.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::geometry::KernelGeometry;
use crate::spatial::{add, assign_cells, dist2, CellMembership, Point3};

/// Regulariser added to every squared distance, relative to `r^2`.
pub const WEIGHT_EPS: f64 = 1e-6;

#[inline]
pub fn interp_weight(d2: f64, r: f64) -> f64 {
    1.0 / (d2 + WEIGHT_EPS * r * r)
}

/// Interpolated features for `M` kernels of `K` cells each.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatures {
    /// `M x (K * c_in)`: row `j` holds cell 0's channels, then cell 1's, ...
    pub values: Array2<f64>,
    /// Member count per `(j, k)`, row-major.
    pub occupancy: Vec<u32>,
    pub cells: usize,
    pub channels: usize,
}

impl CellFeatures {
    pub fn zeros(centers: usize, cells: usize, channels: usize) -> Self {
        CellFeatures {
            values: Array2::zeros((centers, cells * channels)),
            occupancy: vec![0; centers * cells],
            cells,
            channels,
        }
    }

    pub fn centers(&self) -> usize {
        self.values.nrows()
    }

    pub fn cell(&self, j: usize, k: usize) -> ArrayView1<'_, f64> {
        let c = self.channels;
        self.values.slice(ndarray::s![j, k * c..(k + 1) * c])
    }
}

#[derive(Debug, Clone)]
pub struct InterpCache {
    pub membership: CellMembership,
    /// Normalised weight of every membership entry.
    coeffs: Vec<f64>,
    rho: Option<Vec<f64>>,
    features: Array2<f64>,
    cells: Array2<f64>,
}

impl InterpCache {
    /// Normalised weights of the members of cell `(j, k)`, in member order.
    pub fn weights(&self, j: usize, k: usize) -> &[f64] {
        let slot = j * self.membership.cells + k;
        &self.coeffs[self.membership.slot_range(slot)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpGrads {
    pub features: Array2<f64>,
    /// Present when the forward pass used a density.
    pub rho: Option<Vec<f64>>,
}

/// Interpolate `features` (one row per position) onto the cells of the
/// kernels centred at `centers`.
pub fn interpolate(
    positions: &[Point3],
    features: ArrayView2<f64>,
    centers: &[Point3],
    geometry: &KernelGeometry,
    rho: Option<&[f64]>,
) -> Result<(CellFeatures, InterpCache)> {
    let membership = assign_cells(positions, centers, geometry);
    interpolate_with(positions, features, centers, geometry, rho, membership)
}

/// Same as [`interpolate`] with a precomputed membership.
pub fn interpolate_with(
    positions: &[Point3],
    features: ArrayView2<f64>,
    centers: &[Point3],
    geometry: &KernelGeometry,
    rho: Option<&[f64]>,
    membership: CellMembership,
) -> Result<(CellFeatures, InterpCache)> {
    let n = positions.len();
    if features.nrows() != n {
        return Err(Error::shape("interpolation features", n, features.nrows()));
    }
    if membership.centers != centers.len() || membership.cells != geometry.len() {
        return Err(Error::shape(
            "cell membership",
            format!("{}x{}", centers.len(), geometry.len()),
            format!("{}x{}", membership.centers, membership.cells),
        ));
    }
    if let Some(rho) = rho {
        if rho.len() != n {
            return Err(Error::shape("rho", n, rho.len()));
        }
        if let Some((index, &value)) = rho.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveDensity { index, value });
        }
    }

    let c = features.ncols();
    let kk = geometry.len();
    let r = geometry.cell_radius;
    let mut out = CellFeatures::zeros(centers.len(), kk, c);
    out.occupancy = membership.occupancy();
    let mut coeffs = vec![0.0; membership.total_entries()];
    let members = membership.flat_members();

    for (j, x) in centers.iter().enumerate() {
        let mut row = out.values.row_mut(j);
        for (k, dx) in geometry.cell_offsets.iter().enumerate() {
            let range = membership.slot_range(j * kk + k);
            if range.is_empty() {
                continue;
            }
            let center = add(*x, *dx);
            let mut total = 0.0;
            for e in range.clone() {
                let i = members[e] as usize;
                let mut w = interp_weight(dist2(positions[i], center), r);
                if let Some(rho) = rho {
                    w /= rho[i];
                }
                coeffs[e] = w;
                total += w;
            }
            for e in range {
                coeffs[e] /= total;
                let i = members[e] as usize;
                let a = coeffs[e];
                for ch in 0..c {
                    row[k * c + ch] += a * features[[i, ch]];
                }
            }
        }
    }

    let cache = InterpCache {
        membership,
        coeffs,
        rho: rho.map(<[f64]>::to_vec),
        features: features.to_owned(),
        cells: out.values.clone(),
    };
    Ok((out, cache))
}

/// Gradients of `sum <dcells, cells>` with respect to the input features and
/// (when used) `rho`. Positions are constants.
pub fn interpolate_backward(cache: &InterpCache, dcells: ArrayView2<f64>) -> Result<InterpGrads> {
    let m = &cache.membership;
    if dcells.dim() != cache.cells.dim() {
        return Err(Error::CacheMismatch(format!(
            "cell gradient {:?} vs cached {:?}",
            dcells.dim(),
            cache.cells.dim()
        )));
    }
    let n = cache.features.nrows();
    let c = cache.features.ncols();
    let members = m.flat_members();
    let mut dfeat = Array2::zeros((n, c));
    let mut drho = cache.rho.as_ref().map(|_| vec![0.0; n]);

    for j in 0..m.centers {
        for k in 0..m.cells {
            let range = m.slot_range(j * m.cells + k);
            if range.is_empty() {
                continue;
            }
            let g = dcells.slice(ndarray::s![j, k * c..(k + 1) * c]);
            let f_cell = cache.cells.slice(ndarray::s![j, k * c..(k + 1) * c]);
            let g_dot_cell = g.dot(&f_cell);
            for e in range {
                let i = members[e] as usize;
                let a = cache.coeffs[e];
                let mut g_dot_f = 0.0;
                for ch in 0..c {
                    dfeat[[i, ch]] += a * g[ch];
                    g_dot_f += g[ch] * cache.features[[i, ch]];
                }
                // d cell / d w'_i = (f_i - cell) / S and d w'_i / d rho_i = -w'_i / rho_i
                if let (Some(drho), Some(rho)) = (drho.as_mut(), cache.rho.as_ref()) {
                    drho[i] -= a / rho[i] * (g_dot_f - g_dot_cell);
                }
            }
        }
    }
    Ok(InterpGrads {
        features: dfeat,
        rho: drho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_kernel, KernelKind, LayoutPreset};
    use ndarray::array;

    fn single_cell(r: f64) -> KernelGeometry {
        build_kernel(KernelKind::SpherePacked, r, &LayoutPreset::Explicit(vec![[0.0; 3]])).unwrap()
    }

    #[test]
    fn near_delta_at_cell_center() {
        let g = single_cell(1.0);
        let pos = vec![[0.0; 3], [0.6, 0.0, 0.0], [0.0, -0.7, 0.0]];
        let f = array![[2.0], [10.0], [-5.0]];
        let (cells, _) = interpolate(&pos, f.view(), &[[0.0; 3]], &g, None).unwrap();
        assert!((cells.values[[0, 0]] - 2.0).abs() / 2.0 < 1e-4);
    }

    #[test]
    fn equidistant_members_average() {
        let g = single_cell(1.0);
        let pos = vec![[0.5, 0.0, 0.0], [0.0, 0.0, -0.5]];
        let f = array![[1.0, 4.0], [3.0, -2.0]];
        let (cells, _) = interpolate(&pos, f.view(), &[[0.0; 3]], &g, Some(&[0.7, 0.7])).unwrap();
        assert_eq!(cells.values.row(0).to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn empty_cell_is_zero() {
        let g = single_cell(0.1);
        let f = array![[1.0]];
        let (cells, _) = interpolate(&[[5.0, 5.0, 5.0]], f.view(), &[[0.0; 3]], &g, None).unwrap();
        assert_eq!(cells.values[[0, 0]], 0.0);
        assert_eq!(cells.occupancy, vec![0]);
    }

    #[test]
    fn single_member_passes_gradient_through() {
        let g = single_cell(1.0);
        let f = array![[1.0, 2.0]];
        let (_, cache) = interpolate(&[[0.2, 0.0, 0.0]], f.view(), &[[0.0; 3]], &g, None).unwrap();
        let up = array![[0.25, -3.0]];
        let grads = interpolate_backward(&cache, up.view()).unwrap();
        assert_eq!(grads.features, up);
        let zero = interpolate_backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert!(zero.features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_positive_rho() {
        let g = single_cell(1.0);
        let f = array![[1.0], [1.0]];
        let err = interpolate(&[[0.0; 3], [0.1, 0.0, 0.0]], f.view(), &[[0.0; 3]], &g, Some(&[1.0, 0.0]));
        assert!(matches!(err, Err(Error::NonPositiveDensity { index: 1, .. })));
    }
}
