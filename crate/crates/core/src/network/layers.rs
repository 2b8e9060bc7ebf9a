//! Per-point building blocks: linear layers, batch norm, ReLU and dropout.
//!
//! Activations of a batch are kept as one matrix per item so clouds of
//! different sizes can share a pass. Batch norm pools its statistics over
//! every row of every item.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::rng::{indexed_seed, Rng};

pub const BN_EPS: f64 = 1e-5;

pub type Batch = Vec<Array2<f64>>;

/// Per-point affine map `x W (+ b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `c_in x c_out`
    pub w: Array2<f64>,
    pub b: Option<Array1<f64>>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init(c_in: usize, c_out: usize, bias: bool, rng: &mut Rng) -> Self {
        let bound = (6.0 / (c_in + c_out) as f64).sqrt();
        Linear {
            w: Array2::from_shape_simple_fn((c_in, c_out), || rng.random_range(-bound..bound)),
            b: bias.then(|| Array1::zeros(c_out)),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.w.nrows() {
            return Err(Error::shape("linear input width", self.w.nrows(), x.ncols()));
        }
        let mut y = x.dot(&self.w);
        if let Some(b) = &self.b {
            y += b;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        if let Some(gb) = grad.b.as_mut() {
            *gb += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    /// Unbiased estimate of the per-channel variance.
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Batch,
    inv_std: Array1<f64>,
    rows: usize,
    train: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalise with batch statistics (`train`) or the running estimates.
    /// Running estimates move by `1 - momentum` toward each batch.
    pub fn forward(&mut self, xs: &[Array2<f64>], train: bool, momentum: f64) -> Result<(Batch, BnCache)> {
        let c = self.channels();
        if let Some(x) = xs.iter().find(|x| x.ncols() != c) {
            return Err(Error::shape("batch norm width", c, x.ncols()));
        }
        let rows: usize = xs.iter().map(|x| x.nrows()).sum();
        let (mean, var) = if train {
            if rows == 0 {
                return Err(Error::EmptyCloud);
            }
            let mut mean = Array1::<f64>::zeros(c);
            for x in xs {
                mean += &x.sum_axis(Axis(0));
            }
            mean /= rows as f64;
            let mut var = Array1::<f64>::zeros(c);
            for x in xs {
                for row in x.rows() {
                    let d = &row - &mean;
                    var += &(&d * &d);
                }
            }
            var /= rows as f64;
            let unbiased = if rows > 1 {
                &var * (rows as f64 / (rows - 1) as f64)
            } else {
                var.clone()
            };
            self.running_mean = &self.running_mean * momentum + &mean * (1.0 - momentum);
            self.running_var = &self.running_var * momentum + &unbiased * (1.0 - momentum);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat: Batch = xs.iter().map(|x| (x - &mean) * &inv_std).collect();
        let ys = xhat.iter().map(|h| h * &self.gamma + &self.beta).collect();
        Ok((
            ys,
            BnCache {
                xhat,
                inv_std,
                rows,
                train,
            },
        ))
    }

    /// Accumulates `dgamma`, `dbeta` into `grad` and returns `dx` per item.
    pub fn backward(&self, cache: &BnCache, dys: &[Array2<f64>], grad: &mut BatchNorm) -> Batch {
        let c = self.channels();
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        for (dy, h) in dys.iter().zip(&cache.xhat) {
            dgamma += &(dy * h).sum_axis(Axis(0));
            dbeta += &dy.sum_axis(Axis(0));
        }
        grad.gamma += &dgamma;
        grad.beta += &dbeta;
        let scale = &self.gamma * &cache.inv_std;
        if !cache.train {
            return dys.iter().map(|dy| dy * &scale).collect();
        }
        // dx = gamma inv_std (dy - mean(dy) - xhat mean(dy xhat))
        let n = cache.rows as f64;
        let mean_dy = &dbeta / n;
        let mean_dy_xhat = &dgamma / n;
        dys.iter()
            .zip(&cache.xhat)
            .map(|(dy, h)| (dy - &mean_dy - &(h * &mean_dy_xhat)) * &scale)
            .collect()
    }
}

pub fn relu(xs: Batch) -> Batch {
    xs.into_iter().map(|x| x.mapv_into(|v| v.max(0.0))).collect()
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &[Array2<f64>], dy: Batch) -> Batch {
    dy.into_iter()
        .zip(out)
        .map(|(mut d, o)| {
            d.zip_mut_with(o, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            });
            d
        })
        .collect()
}

/// Inverted-dropout masks (entries `0` or `1 / (1 - p)`), one per item,
/// each drawn from its own stream so masks do not depend on thread count.
pub fn dropout_masks(shapes: &[(usize, usize)], p: f64, seed: u64) -> Batch {
    shapes
        .iter()
        .enumerate()
        .map(|(b, &shape)| {
            let mut rng = Rng::seed_from_u64(indexed_seed(seed, "dropout", b as u64));
            let keep = 1.0 / (1.0 - p);
            Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
        })
        .collect()
}

/// `[a | b]` row by row.
pub fn hconcat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape("skip connection rows", a.nrows(), b.nrows()));
    }
    Ok(concatenate(Axis(1), &[a, b]).expect("row counts checked"))
}

/// Split a gradient of `[a | b]` back into its two parts.
pub fn hsplit(d: &Array2<f64>, left: usize) -> (Array2<f64>, Array2<f64>) {
    (d.slice(s![.., ..left]).to_owned(), d.slice(s![.., left..]).to_owned())
}
