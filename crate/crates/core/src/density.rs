//! Learned distance-feature density.
//!
//! For every point, the ball-query neighbourhood is lifted by a shared 1x1
//! layer over `[x_nb - x_i, f_nb]`, passed through ReLU and max-pooled over
//! the neighbour slots. A two-layer MLP and a sigmoid turn the pooled vector
//! into `rho_i`, which later divides the point's interpolation weight.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spatial::{ball_query, sub, NeighborTable, Point3};

/// Floor applied to `rho` before it is used as a divisor.
pub const RHO_MIN: f64 = 1e-3;
/// Neighbours gathered per point.
pub const DEFAULT_NEIGHBORS: usize = 64;
/// Channel widths of the 1x1 layer and the hidden MLP layer.
pub const DEFAULT_HIDDEN: (usize, usize) = (32, 16);

#[derive(Debug, Clone, PartialEq)]
pub struct DensityParams {
    /// `(3 + c_in) x h1`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h1 x h2`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// `h2 x 1`
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub density_scale: f64,
}

impl DensityParams {
    pub fn zeros(c_in: usize, hidden: (usize, usize)) -> Self {
        DensityParams {
            w1: Array2::zeros((3 + c_in, hidden.0)),
            b1: Array1::zeros(hidden.0),
            w2: Array2::zeros((hidden.0, hidden.1)),
            b2: Array1::zeros(hidden.1),
            w3: Array2::zeros((hidden.1, 1)),
            b3: Array1::zeros(1),
            density_scale: 1.0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(c_in: usize, hidden: (usize, usize), density_scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(c_in, hidden);
        for w in [&mut p.w1, &mut p.w2, &mut p.w3] {
            let bound = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p.density_scale = density_scale;
        p
    }

    pub fn in_channels(&self) -> usize {
        self.w1.nrows() - 3
    }

    pub fn hidden(&self) -> (usize, usize) {
        (self.w1.ncols(), self.w2.ncols())
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }
}

/// Intermediates kept by [`density_forward`] for the exact backward pass.
#[derive(Debug, Clone)]
pub struct DensityCache {
    pub table: NeighborTable,
    /// `row_start[i]..row_start[i + 1]` are point `i`'s rows in `lifted_in`.
    row_start: Vec<usize>,
    /// Neighbour index of every row.
    row_neighbor: Vec<u32>,
    /// Concatenated `[offset, feature]` inputs, one row per genuine neighbour.
    lifted_in: Array2<f64>,
    /// Row (into `lifted_in`) that won the max-pool, per point and channel.
    argmax: Array2<usize>,
    /// Whether the winning pre-activation was positive.
    pool_active: Array2<bool>,
    pooled: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    sigmoid: Vec<f64>,
    clamped: Vec<bool>,
    n: usize,
    c_in: usize,
}

impl DensityCache {
    pub fn points(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub features: Array2<f64>,
    pub positions: Vec<Point3>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-point density `rho` in `[RHO_MIN, density_scale]`.
///
/// Padded ball-query slots repeat the first neighbour, so they never change
/// the max-pool (the first slot already wins any tie); only genuine slots are
/// evaluated.
pub fn density_forward(
    positions: &[Point3],
    features: ArrayView2<f64>,
    params: &DensityParams,
    radius: f64,
    k: usize,
) -> Result<(Vec<f64>, DensityCache)> {
    let n = positions.len();
    let c_in = features.ncols();
    if c_in == 0 {
        return Err(Error::NoFeatures);
    }
    if features.nrows() != n {
        return Err(Error::shape("density features", n, features.nrows()));
    }
    if params.in_channels() != c_in {
        return Err(Error::shape("density w1 rows", 3 + c_in, params.w1.nrows()));
    }
    let table = ball_query(positions, positions, radius, k)?;

    let mut row_start = Vec::with_capacity(n + 1);
    row_start.push(0);
    let mut row_neighbor = Vec::new();
    for i in 0..n {
        row_neighbor.extend_from_slice(table.valid(i));
        row_start.push(row_neighbor.len());
    }
    let rows = row_neighbor.len();
    let mut lifted_in = Array2::zeros((rows, 3 + c_in));
    for i in 0..n {
        for row in row_start[i]..row_start[i + 1] {
            let nb = row_neighbor[row] as usize;
            let rel = sub(positions[nb], positions[i]);
            let mut dst = lifted_in.row_mut(row);
            for a in 0..3 {
                dst[a] = rel[a];
            }
            for c in 0..c_in {
                dst[3 + c] = features[[nb, c]];
            }
        }
    }

    let mut pre = lifted_in.dot(&params.w1);
    pre += &params.b1;

    let h1 = params.w1.ncols();
    let mut pooled = Array2::zeros((n, h1));
    let mut argmax = Array2::zeros((n, h1));
    let mut pool_active = Array2::from_elem((n, h1), false);
    for i in 0..n {
        let (lo, hi) = (row_start[i], row_start[i + 1]);
        for c in 0..h1 {
            let mut best = lo;
            let mut best_v = pre[[lo, c]].max(0.0);
            for row in lo + 1..hi {
                let v = pre[[row, c]].max(0.0);
                if v > best_v {
                    best_v = v;
                    best = row;
                }
            }
            pooled[[i, c]] = best_v;
            argmax[[i, c]] = best;
            pool_active[[i, c]] = pre[[best, c]] > 0.0;
        }
    }

    let mut hidden_pre = pooled.dot(&params.w2);
    hidden_pre += &params.b2;
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let logits = hidden.dot(&params.w3);

    let mut rho = Vec::with_capacity(n);
    let mut sig = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    for i in 0..n {
        let s = sigmoid(logits[[i, 0]] + params.b3[0]);
        let value = params.density_scale * s;
        sig.push(s);
        clamped.push(value < RHO_MIN);
        rho.push(value.max(RHO_MIN));
    }

    Ok((
        rho,
        DensityCache {
            table,
            row_start,
            row_neighbor,
            lifted_in,
            argmax,
            pool_active,
            pooled,
            hidden_pre,
            hidden,
            sigmoid: sig,
            clamped,
            n,
            c_in,
        },
    ))
}

/// Exact gradients of `sum_i drho_i * rho_i` with respect to the parameters,
/// the input features and the positions.
pub fn density_backward(cache: &DensityCache, params: &DensityParams, drho: &[f64]) -> Result<DensityGrads> {
    let n = cache.n;
    if drho.len() != n {
        return Err(Error::CacheMismatch(format!(
            "{} density gradients for {n} points",
            drho.len()
        )));
    }
    if params.in_channels() != cache.c_in || params.w1.ncols() != cache.pooled.ncols() {
        return Err(Error::CacheMismatch("density parameters changed shape".into()));
    }

    let dz = Array2::from_shape_fn((n, 1), |(i, _)| {
        if cache.clamped[i] {
            0.0
        } else {
            let s = cache.sigmoid[i];
            drho[i] * params.density_scale * s * (1.0 - s)
        }
    });
    let w3 = cache.hidden.t().dot(&dz);
    let b3 = dz.sum_axis(Axis(0));
    let mut d_hidden = dz.dot(&params.w3.t());
    d_hidden.zip_mut_with(&cache.hidden_pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    let w2 = cache.pooled.t().dot(&d_hidden);
    let b2 = d_hidden.sum_axis(Axis(0));
    let d_pooled = d_hidden.dot(&params.w2.t());

    let rows = cache.lifted_in.nrows();
    let h1 = params.w1.ncols();
    let mut d_pre = Array2::zeros((rows, h1));
    for i in 0..n {
        for c in 0..h1 {
            if cache.pool_active[[i, c]] {
                d_pre[[cache.argmax[[i, c]], c]] += d_pooled[[i, c]];
            }
        }
    }
    let w1 = cache.lifted_in.t().dot(&d_pre);
    let b1 = d_pre.sum_axis(Axis(0));
    let d_in = d_pre.dot(&params.w1.t());

    let mut features = Array2::zeros((n, cache.c_in));
    let mut positions = vec![[0.0; 3]; n];
    for i in 0..n {
        for row in cache.row_start[i]..cache.row_start[i + 1] {
            let nb = cache.row_neighbor[row] as usize;
            let g = d_in.row(row);
            for a in 0..3 {
                positions[nb][a] += g[a];
                positions[i][a] -= g[a];
            }
            for c in 0..cache.c_in {
                features[[nb, c]] += g[3 + c];
            }
        }
    }

    Ok(DensityGrads {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        features,
        positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cloud(n: usize, c: usize, seed: u64) -> (Vec<Point3>, Array2<f64>) {
        let mut rng = Rng::seed_from_u64(seed);
        let pos = (0..n)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let f = Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0..1.0));
        (pos, f)
    }

    #[test]
    fn zero_parameters_give_half_scale() {
        let (pos, f) = cloud(20, 2, 1);
        let mut p = DensityParams::zeros(2, DEFAULT_HIDDEN);
        p.density_scale = 2.0;
        let (rho, _) = density_forward(&pos, f.view(), &p, 0.3, 64).unwrap();
        assert!(rho.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn translation_invariant() {
        let (pos, f) = cloud(30, 3, 2);
        let p = DensityParams::init(3, DEFAULT_HIDDEN, 1.0, &mut Rng::seed_from_u64(3));
        let shifted: Vec<Point3> = pos.iter().map(|q| [q[0] + 4.0, q[1] - 2.0, q[2] + 0.5]).collect();
        let (a, _) = density_forward(&pos, f.view(), &p, 0.4, 64).unwrap();
        let (b, _) = density_forward(&shifted, f.view(), &p, 0.4, 64).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn range_is_within_floor_and_scale() {
        let (pos, f) = cloud(40, 2, 4);
        let mut p = DensityParams::init(2, DEFAULT_HIDDEN, 1.0, &mut Rng::seed_from_u64(5));
        p.w3.mapv_inplace(|v| v * 40.0);
        let (rho, _) = density_forward(&pos, f.view(), &p, 0.5, 64).unwrap();
        assert!(rho.iter().all(|&r| (RHO_MIN..=1.0).contains(&r)));
    }

    #[test]
    fn needs_features() {
        let (pos, _) = cloud(5, 0, 6);
        let f = Array2::zeros((5, 0));
        let p = DensityParams::zeros(0, DEFAULT_HIDDEN);
        assert!(matches!(
            density_forward(&pos, f.view(), &p, 0.5, 8),
            Err(Error::NoFeatures)
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (pos, f) = cloud(25, 2, 7);
        let p = DensityParams::init(2, DEFAULT_HIDDEN, 1.0, &mut Rng::seed_from_u64(8));
        let (_, cache) = density_forward(&pos, f.view(), &p, 0.4, 64).unwrap();
        let g = density_backward(&cache, &p, &vec![0.0; 25]).unwrap();
        assert!(g.w1.iter().chain(g.features.iter()).all(|&v| v == 0.0));
        assert!(density_backward(&cache, &p, &[1.0]).is_err());
    }
}
