//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check builds a random instance from a seed, contracts the operator's
//! output with a random upstream tensor to get a scalar, and compares every
//! analytic gradient entry with `(L(x + h) - L(x - h)) / 2h`.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::convop::{conv_backward, conv_forward, ConvLayerParams};
use crate::density::{density_backward, density_forward, DensityParams};
use crate::error::Result;
use crate::geometry::{build_kernel, KernelKind, LayoutPreset};
use crate::interp::{interpolate, interpolate_backward, CellFeatures};
use crate::network::layers::Batch;
use crate::network::{cross_entropy, Mode, Network, NetworkConfig};
use crate::rng::{rng_for, Rng};
use crate::spatial::{Point3, PointCloud};

pub const STEP: f64 = 1e-5;
/// Entries of the full-network check that fail at [`STEP`] are probed again
/// at `STEP / 10`. The network has far more ReLU and max-pool kinks than a
/// single operator, and a difference straddling one does not estimate the
/// derivative; the refined probe steps inside the smooth region.
pub const NETWORK_REFINE: f64 = 10.0;
pub const OPERATOR_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub operator: &'static str,
    pub entries: usize,
    pub worst: f64,
    /// Name of the tensor holding the worst entry.
    pub worst_at: String,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }

    fn merge(&mut self, other: CheckResult) {
        self.entries += other.entries;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<12} {:>8} {:>12.3e} {:>10.0e}  {:<4} {}",
            self.operator,
            self.entries,
            self.worst,
            self.tolerance,
            if self.passed() { "ok" } else { "FAIL" },
            self.worst_at
        )
    }
}

/// Compare `analytic` with central differences of `loss` around `x`.
/// Returns the worst relative error and its index.
pub fn compare(x: &[f64], analytic: &[f64], loss: impl FnMut(&[f64]) -> Result<f64>) -> Result<(f64, usize)> {
    compare_with_step(x, analytic, STEP, loss)
}

pub fn compare_with_step(
    x: &[f64],
    analytic: &[f64],
    step: f64,
    loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(f64, usize)> {
    compare_refined(x, analytic, step, None, loss)
}

/// Like [`compare`]; entries whose error exceeds `refine.0` are probed again
/// with `step / refine.1` and keep the smaller error.
pub fn compare_refined(
    x: &[f64],
    analytic: &[f64],
    step: f64,
    refine: Option<(f64, f64)>,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(f64, usize)> {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut probe = x.to_vec();
    let mut central = |probe: &mut Vec<f64>, i: usize, h: f64| -> Result<f64> {
        probe[i] = x[i] + h;
        let up = loss(probe)?;
        probe[i] = x[i] - h;
        let down = loss(probe)?;
        probe[i] = x[i];
        Ok((up - down) / (2.0 * h))
    };
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        let mut e = rel_err(analytic[i], central(&mut probe, i, step)?);
        if let Some((tol, factor)) = refine {
            if e > tol {
                e = e.min(rel_err(analytic[i], central(&mut probe, i, step / factor)?));
            }
        }
        if e > worst.0 {
            worst = (e, i);
        }
    }
    Ok(worst)
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn random_cloud(rng: &mut Rng, n: usize, extent: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
            ]
        })
        .collect()
}

fn flat2(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn unflat2(v: &[f64], shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, v.to_vec()).expect("shape matches")
}

fn density_flat(p: &DensityParams) -> Vec<f64> {
    p.w1.iter()
        .chain(&p.b1)
        .chain(&p.w2)
        .chain(&p.b2)
        .chain(&p.w3)
        .chain(&p.b3)
        .copied()
        .collect()
}

fn density_unflat(template: &DensityParams, v: &[f64]) -> DensityParams {
    let mut p = template.clone();
    let mut off = 0;
    for dst in [
        p.w1.as_slice_mut().unwrap(),
        p.b1.as_slice_mut().unwrap(),
        p.w2.as_slice_mut().unwrap(),
        p.b2.as_slice_mut().unwrap(),
        p.w3.as_slice_mut().unwrap(),
        p.b3.as_slice_mut().unwrap(),
    ] {
        let n = dst.len();
        dst.copy_from_slice(&v[off..off + n]);
        off += n;
    }
    p
}

/// Density: gradients of `sum_i c_i rho_i` for parameters, features and positions.
pub fn check_density(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_for(seed, "gradcheck-density");
    let (n, c_in, radius, k) = (24, 3, 0.45, 8);
    let pos = random_cloud(&mut rng, n, 1.0);
    let feats = random_matrix(&mut rng, n, c_in, 1.0);
    let params = DensityParams::init(c_in, (6, 4), 1.0, &mut rng);
    let upstream: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let contract = |rho: &[f64]| rho.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>();

    let (_, cache) = density_forward(&pos, feats.view(), &params, radius, k)?;
    let g = density_backward(&cache, &params, &upstream)?;

    let mut result = CheckResult {
        operator: "density",
        entries: 0,
        worst: 0.0,
        worst_at: String::new(),
        tolerance: OPERATOR_TOLERANCE,
    };
    let analytic = density_flat(&DensityParams {
        w1: g.w1.clone(),
        b1: g.b1.clone(),
        w2: g.w2.clone(),
        b2: g.b2.clone(),
        w3: g.w3.clone(),
        b3: g.b3.clone(),
        density_scale: 1.0,
    });
    let x = density_flat(&params);
    let (w, _) = compare(&x, &analytic, |v| {
        let p = density_unflat(&params, v);
        Ok(contract(&density_forward(&pos, feats.view(), &p, radius, k)?.0))
    })?;
    result.merge(CheckResult {
        operator: "density",
        entries: x.len(),
        worst: w,
        worst_at: "params".into(),
        tolerance: OPERATOR_TOLERANCE,
    });

    let (w, _) = compare(&flat2(&feats), &flat2(&g.features), |v| {
        let f = unflat2(v, (n, c_in));
        Ok(contract(&density_forward(&pos, f.view(), &params, radius, k)?.0))
    })?;
    result.merge(CheckResult {
        operator: "density",
        entries: n * c_in,
        worst: w,
        worst_at: "features".into(),
        tolerance: OPERATOR_TOLERANCE,
    });

    let x: Vec<f64> = pos.iter().flatten().copied().collect();
    let analytic: Vec<f64> = g.positions.iter().flatten().copied().collect();
    let (w, _) = compare(&x, &analytic, |v| {
        let p: Vec<Point3> = v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(contract(&density_forward(&p, feats.view(), &params, radius, k)?.0))
    })?;
    result.merge(CheckResult {
        operator: "density",
        entries: x.len(),
        worst: w,
        worst_at: "positions".into(),
        tolerance: OPERATOR_TOLERANCE,
    });
    Ok(result)
}

/// Interpolation: gradients of `<G, cells>` for features and rho.
pub fn check_interp(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_for(seed, "gradcheck-interp");
    let (n, m, c) = (60, 4, 3);
    let geometry = build_kernel(KernelKind::SpherePacked, 0.3, &LayoutPreset::K15)?;
    let pos = random_cloud(&mut rng, n, 1.0);
    let centers = random_cloud(&mut rng, m, 1.0);
    let feats = random_matrix(&mut rng, n, c, 1.0);
    let rho: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let upstream = random_matrix(&mut rng, m, geometry.len() * c, 1.0);
    let contract = |cells: &CellFeatures| (&cells.values * &upstream).sum();

    let (_, cache) = interpolate(&pos, feats.view(), &centers, &geometry, Some(&rho))?;
    let g = interpolate_backward(&cache, upstream.view())?;

    let (wf, _) = compare(&flat2(&feats), &flat2(&g.features), |v| {
        let f = unflat2(v, (n, c));
        Ok(contract(&interpolate(&pos, f.view(), &centers, &geometry, Some(&rho))?.0))
    })?;
    let (wr, _) = compare(&rho, g.rho.as_deref().unwrap_or(&[]), |v| {
        Ok(contract(&interpolate(&pos, feats.view(), &centers, &geometry, Some(v))?.0))
    })?;
    let (worst, at) = if wr > wf { (wr, "rho") } else { (wf, "features") };
    Ok(CheckResult {
        operator: "interp",
        entries: n * c + n,
        worst,
        worst_at: at.into(),
        tolerance: OPERATOR_TOLERANCE,
    })
}

/// Convolution: gradients of `<G, out>` for weights, bias and cells.
pub fn check_conv(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_for(seed, "gradcheck-conv");
    let (m, c_in, c_out) = (5, 4, 8);
    let geometry = build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::K15)?;
    let kk = geometry.len();
    let mut params = ConvLayerParams::init(geometry, c_in, c_out, true, &mut rng);
    params.bias = Array1::from_shape_simple_fn(c_out, || rng.random_range(-1.0..1.0));
    let mut cells = CellFeatures::zeros(m, kk, c_in);
    cells.values = random_matrix(&mut rng, m, kk * c_in, 1.0);
    let upstream = random_matrix(&mut rng, m, c_out, 1.0);
    let contract = |out: &Array2<f64>| (out * &upstream).sum();

    let (_, cache) = conv_forward(&cells, &params)?;
    let g = conv_backward(&cache, &params, upstream.view())?;

    let wshape = params.weights.dim();
    let (ww, _) = compare(&flat2(&params.weights), &flat2(&g.weights), |v| {
        let mut p = params.clone();
        p.weights = unflat2(v, wshape);
        Ok(contract(&conv_forward(&cells, &p)?.0))
    })?;
    let (wb, _) = compare(params.bias.as_slice().unwrap(), g.bias.as_slice().unwrap(), |v| {
        let mut p = params.clone();
        p.bias = Array1::from(v.to_vec());
        Ok(contract(&conv_forward(&cells, &p)?.0))
    })?;
    let (wc, _) = compare(&flat2(&cells.values), &flat2(&g.cells), |v| {
        let mut cf = cells.clone();
        cf.values = unflat2(v, (m, kk * c_in));
        Ok(contract(&conv_forward(&cf, &params)?.0))
    })?;
    let (worst, at) = [(ww, "weights"), (wb, "bias"), (wc, "cells")]
        .into_iter()
        .fold((0.0, ""), |acc, x| if x.0 > acc.0 { x } else { acc });
    Ok(CheckResult {
        operator: "conv",
        entries: params.weights.len() + c_out + cells.values.len(),
        worst,
        worst_at: at.into(),
        tolerance: OPERATOR_TOLERANCE,
    })
}

/// The two-layer network used by the full-network check.
pub fn reduced_config() -> NetworkConfig {
    NetworkConfig {
        n_points: 64,
        n_classes: 3,
        in_channels: 3,
        encoder_channels: vec![4, 5],
        encoder_points: vec![16, 6],
        base_radius: 0.2,
        density_hidden: (4, 3),
        density_neighbors: 8,
        fc_hidden: 5,
        batch_size: 2,
        ..NetworkConfig::default()
    }
}

/// Full network: gradients of the mean cross-entropy of a two-item batch
/// with respect to every trainable parameter, in train mode with a fixed
/// dropout mask.
pub fn check_network(seed: u64) -> Result<CheckResult> {
    check_network_with(&reduced_config(), seed)
}

/// A random labelled batch and a network with randomised biases, ready for
/// finite differences in train mode with a fixed dropout mask.
pub struct NetworkProbe {
    pub net: Network,
    pub batch: Vec<PointCloud>,
    pub dropout_seed: u64,
}

impl NetworkProbe {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, "gradcheck-network");
        let batch: Vec<PointCloud> = (0..config.batch_size.max(1))
            .map(|_| {
                let pos = random_cloud(&mut rng, config.n_points, 1.0);
                let labels = (0..config.n_points)
                    .map(|_| rng.random_range(0..config.n_classes as u32))
                    .collect();
                let mut cloud = PointCloud::from_positions(pos)?;
                cloud.labels = Some(labels);
                Ok(cloud)
            })
            .collect::<Result<_>>()?;
        let mut net = Network::new(config, seed)?;
        // zero biases over all-zero ReLU outputs put pre-activations exactly on
        // the kink, where the function has no derivative
        for t in net.tensors_mut() {
            let name = t.name.rsplit('.').next().unwrap_or("");
            if matches!(name, "b" | "b1" | "b2" | "b3" | "bias" | "beta") {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
            }
        }
        Ok(NetworkProbe {
            net,
            batch,
            dropout_seed: seed ^ 0xD0,
        })
    }

    fn run(&self, net: &mut Network) -> Result<(f64, Batch, crate::network::model::Forward)> {
        let fwd = net.forward(&self.batch, Mode::Train, self.dropout_seed)?;
        let labels: Vec<&[u32]> = self.batch.iter().map(|c| c.labels.as_deref().unwrap_or(&[])).collect();
        let (loss, dl) = cross_entropy(&fwd.logits, &labels, net.config.ignore_label)?;
        Ok((loss, dl, fwd))
    }

    /// Loss of `net` on the probe batch.
    pub fn loss(&self, net: &mut Network) -> Result<f64> {
        Ok(self.run(net)?.0)
    }

    /// Analytic gradient of the loss at `self.net`, flattened in tensor order.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        let mut net = self.net.clone();
        let (_, dl, fwd) = self.run(&mut net)?;
        Ok(net.backward(&fwd, &dl)?.flat())
    }
}

pub fn check_network_with(config: &NetworkConfig, seed: u64) -> Result<CheckResult> {
    let probe_set = NetworkProbe::new(config, seed)?;
    let net = &probe_set.net;
    let analytic = probe_set.gradient()?;
    let names: Vec<(String, usize)> = net.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let x = net.flat();
    let mut probe = net.clone();
    let (worst, at) = compare_refined(&x, &analytic, STEP, Some((NETWORK_TOLERANCE, NETWORK_REFINE)), |v| {
        let mut off = 0;
        for t in probe.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        probe_set.loss(&mut probe)
    })?;
    let mut off = 0;
    let mut worst_at = String::new();
    for (name, len) in names {
        if at < off + len {
            worst_at = format!("{name}[{}]", at - off);
            break;
        }
        off += len;
    }
    Ok(CheckResult {
        operator: "network",
        entries: x.len(),
        worst,
        worst_at,
        tolerance: NETWORK_TOLERANCE,
    })
}

/// Run every check over `seeds`, keeping the worst result per operator.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let checks: [fn(u64) -> Result<CheckResult>; 4] = [check_density, check_interp, check_conv, check_network];
    let mut rows = Vec::new();
    for check in checks {
        let mut acc: Option<CheckResult> = None;
        for &s in seeds {
            let r = check(s)?;
            match acc.as_mut() {
                Some(a) => a.merge(r),
                None => acc = Some(r),
            }
        }
        rows.extend(acc);
    }
    Ok(rows)
}

pub fn table_header() -> String {
    format!(
        "{:<12} {:>8} {:>12} {:>10}  {:<4} {}",
        "operator", "entries", "worst_rel", "tol", "pass", "worst_at"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operators_pass_one_seed() {
        for r in [check_density(1).unwrap(), check_interp(1).unwrap(), check_conv(1).unwrap()] {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn network_passes_one_seed() {
        let r = check_network(1).unwrap();
        assert!(r.passed(), "{r}");
    }
}
