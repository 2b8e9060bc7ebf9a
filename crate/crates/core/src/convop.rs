//! The per-cell convolution over interpolated cell features.
//!
//! `out_j = sum_k f_k(j) W_k + b`, with one `c_in x c_out` matrix per cell.
//! The weights of all cells are stacked into a single `(K * c_in) x c_out`
//! matrix whose row order matches [`CellFeatures::values`], so the forward
//! pass is one matrix product.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{build_kernel, KernelGeometry, KernelKind};
use crate::interp::CellFeatures;
use crate::network::NetworkConfig;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    /// `(K * c_in) x c_out`; rows `k * c_in .. (k + 1) * c_in` are `W_k`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub geometry: KernelGeometry,
    pub use_bias: bool,
}

impl ConvLayerParams {
    pub fn zeros(geometry: KernelGeometry, c_in: usize, c_out: usize, use_bias: bool) -> Self {
        ConvLayerParams {
            weights: Array2::zeros((geometry.len() * c_in, c_out)),
            bias: Array1::zeros(c_out),
            geometry,
            use_bias,
        }
    }

    /// Uniform init in `+-sqrt(6 / (K c_in + c_out))`, zero bias.
    pub fn init(geometry: KernelGeometry, c_in: usize, c_out: usize, use_bias: bool, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(geometry, c_in, c_out, use_bias);
        let bound = (6.0 / (p.weights.nrows() + c_out) as f64).sqrt();
        p.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
        p
    }

    pub fn cells(&self) -> usize {
        self.geometry.len()
    }

    pub fn c_in(&self) -> usize {
        self.weights.nrows() / self.geometry.len().max(1)
    }

    pub fn c_out(&self) -> usize {
        self.weights.ncols()
    }

    /// `W_k` as a `c_in x c_out` view.
    pub fn weight(&self, k: usize) -> ArrayView2<'_, f64> {
        let c = self.c_in();
        self.weights.slice(ndarray::s![k * c..(k + 1) * c, ..])
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + if self.use_bias { self.bias.len() } else { 0 }
    }

    fn check(&self) -> Result<()> {
        let kk = self.geometry.len();
        if kk == 0 {
            return Err(Error::EmptyKernel);
        }
        if self.weights.nrows() % kk != 0 {
            return Err(Error::shape("conv weight rows", format!("multiple of {kk}"), self.weights.nrows()));
        }
        if self.bias.len() != self.c_out() {
            return Err(Error::shape("conv bias", self.c_out(), self.bias.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cells: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Array2<f64>,
    /// Zero when the layer has no bias.
    pub bias: Array1<f64>,
    /// Same layout as [`CellFeatures::values`].
    pub cells: Array2<f64>,
}

pub fn conv_forward(cells: &CellFeatures, params: &ConvLayerParams) -> Result<(Array2<f64>, ConvCache)> {
    params.check()?;
    if cells.cells != params.cells() || cells.channels != params.c_in() {
        return Err(Error::shape(
            "cell features (cells x channels)",
            format!("{}x{}", params.cells(), params.c_in()),
            format!("{}x{}", cells.cells, cells.channels),
        ));
    }
    let mut out = cells.values.dot(&params.weights);
    if params.use_bias {
        out += &params.bias;
    }
    Ok((
        out,
        ConvCache {
            cells: cells.values.clone(),
        },
    ))
}

pub fn conv_backward(cache: &ConvCache, params: &ConvLayerParams, dout: ArrayView2<f64>) -> Result<ConvGrads> {
    let expected = (cache.cells.nrows(), params.c_out());
    if dout.dim() != expected {
        return Err(Error::CacheMismatch(format!(
            "conv upstream gradient {:?} vs output {:?}",
            dout.dim(),
            expected
        )));
    }
    if cache.cells.ncols() != params.weights.nrows() {
        return Err(Error::CacheMismatch(format!(
            "cached cell width {} vs weight rows {}",
            cache.cells.ncols(),
            params.weights.nrows()
        )));
    }
    let bias = if params.use_bias {
        dout.sum_axis(Axis(0))
    } else {
        Array1::zeros(params.c_out())
    };
    Ok(ConvGrads {
        weights: cache.cells.t().dot(&dout),
        bias,
        cells: dout.dot(&params.weights.t()),
    })
}

/// Counts for one layer of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCount {
    pub name: String,
    /// Kernel cells; 1 for per-point linear layers.
    pub cells: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub points: usize,
    pub weights: usize,
    pub bias: usize,
    /// Multiply-adds of one forward pass over `points` outputs.
    pub flops: u64,
}

impl LayerCount {
    pub fn params(&self) -> usize {
        self.weights + self.bias
    }
}

/// Parameter and multiply-add totals of one kernel variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantCount {
    pub kind: KernelKind,
    pub layers: Vec<LayerCount>,
    /// Density sub-network parameters over all convolutions (0 without density).
    pub density_params: usize,
    /// Batch-norm scale and shift parameters.
    pub norm_params: usize,
}

impl VariantCount {
    /// Kernel weights of the spherical (or cube) convolutions only.
    pub fn conv_weights(&self) -> usize {
        self.layers.iter().filter(|l| l.name.contains("conv")).map(|l| l.weights).sum()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(LayerCount::params).sum::<usize>() + self.density_params + self.norm_params
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamReport {
    pub sphere: VariantCount,
    pub cube: VariantCount,
}

impl ParamReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("variant,layer,cells,c_in,c_out,points,weights,bias,flops\n");
        for v in [&self.sphere, &self.cube] {
            for l in &v.layers {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    v.kind, l.name, l.cells, l.c_in, l.c_out, l.points, l.weights, l.bias, l.flops
                ));
            }
            s.push_str(&format!(
                "{},total,,,,,{},,{}\n",
                v.kind,
                v.total_params(),
                v.total_flops()
            ));
        }
        s
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>6} {:>12} {:>12} {:>16} {:>16}",
            "layer", "c_in", "c_out", "points", "sphere params", "cube params"
        )?;
        for (s, c) in self.sphere.layers.iter().zip(&self.cube.layers) {
            writeln!(
                f,
                "{:<12} {:>6} {:>12} {:>12} {:>16} {:>16}",
                s.name,
                s.c_in,
                s.c_out,
                s.points,
                s.params(),
                c.params()
            )?;
        }
        writeln!(
            f,
            "{:<12} {:>6} {:>12} {:>12} {:>16} {:>16}",
            "conv weights",
            "",
            "",
            "",
            self.sphere.conv_weights(),
            self.cube.conv_weights()
        )?;
        writeln!(
            f,
            "{:<12} {:>6} {:>12} {:>12} {:>16} {:>16}",
            "total",
            "",
            "",
            "",
            self.sphere.total_params(),
            self.cube.total_params()
        )?;
        write!(
            f,
            "{:<12} {:>6} {:>12} {:>12} {:>16} {:>16}",
            "mult-adds",
            "",
            "",
            "",
            self.sphere.total_flops(),
            self.cube.total_flops()
        )
    }
}

/// Per-layer parameter and multiply-add counts of `config` for both kernel
/// kinds. Convolutions carry no bias (each is followed by batch norm).
pub fn count_params_flops(config: &NetworkConfig) -> ParamReport {
    let variant = |kind: KernelKind| -> VariantCount {
        let cells = build_kernel(kind, 1.0, &kind.default_preset())
            .map(|g| g.len())
            .unwrap_or(0);
        let mut layers = Vec::new();
        let mut density_params = 0;
        let mut norm_params = 0;
        let (h1, h2) = config.density_hidden;
        for conv in config.conv_plan() {
            let weights = cells * conv.c_in * conv.c_out;
            layers.push(LayerCount {
                name: conv.name,
                cells,
                c_in: conv.c_in,
                c_out: conv.c_out,
                points: conv.points_out,
                weights,
                bias: 0,
                flops: (conv.points_out * weights) as u64,
            });
            norm_params += 2 * conv.c_out;
            if config.use_density {
                density_params += (3 + conv.c_in) * h1 + h1 + h1 * h2 + h2 + h2 + 1;
            }
        }
        for lin in config.linear_plan() {
            let weights = lin.c_in * lin.c_out;
            let is_mlp = lin.name.contains("mlp");
            layers.push(LayerCount {
                name: lin.name,
                cells: 1,
                c_in: lin.c_in,
                c_out: lin.c_out,
                points: lin.points,
                weights,
                bias: if is_mlp { 0 } else { lin.c_out },
                flops: (lin.points * weights) as u64,
            });
            if is_mlp {
                norm_params += 2 * lin.c_out;
            }
        }
        VariantCount {
            kind,
            layers,
            density_params,
            norm_params,
        }
    };
    ParamReport {
        sphere: variant(KernelKind::SpherePacked),
        cube: variant(KernelKind::CubeGrid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LayoutPreset;
    use crate::rng::rng_for;
    use ndarray::array;

    fn one_cell() -> KernelGeometry {
        build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::Explicit(vec![[0.0; 3]])).unwrap()
    }

    #[test]
    fn zero_cells_give_bias() {
        let g = build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::K15).unwrap();
        let mut p = ConvLayerParams::init(g, 2, 3, true, &mut rng_for(1, "t"));
        p.bias = array![0.5, -1.0, 2.0];
        let cells = CellFeatures::zeros(4, 15, 2);
        let (out, _) = conv_forward(&cells, &p).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn single_cell_hand_gradients() {
        let mut p = ConvLayerParams::zeros(one_cell(), 2, 2, true);
        p.weights = array![[1.0, 2.0], [3.0, 4.0]];
        let mut cells = CellFeatures::zeros(1, 1, 2);
        cells.values = array![[0.5, -1.0]];
        let (out, cache) = conv_forward(&cells, &p).unwrap();
        assert_eq!(out, array![[-2.5, -3.0]]);
        let g = conv_backward(&cache, &p, array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(g.weights, array![[0.5, 1.0], [-1.0, -2.0]]);
        assert_eq!(g.bias, array![1.0, 2.0]);
        assert_eq!(g.cells, array![[5.0, 11.0]]);
    }

    #[test]
    fn layer_ratio_is_15_to_27() {
        let cfg = NetworkConfig {
            n_points: 64,
            encoder_channels: vec![64],
            encoder_points: vec![16],
            in_channels: 64,
            ..NetworkConfig::default()
        };
        let r = count_params_flops(&cfg);
        assert_eq!(r.sphere.layers[0].weights, 61_440);
        assert_eq!(r.cube.layers[0].weights, 110_592);
        assert_eq!(r.sphere.layers[0].weights * 27, r.cube.layers[0].weights * 15);
    }

    #[test]
    fn zero_layer_config_has_no_conv_weights() {
        let cfg = NetworkConfig {
            encoder_channels: vec![],
            encoder_points: vec![],
            ..NetworkConfig::default()
        };
        let r = count_params_flops(&cfg);
        assert_eq!(r.sphere.conv_weights(), 0);
        assert_eq!(r.cube.conv_weights(), 0);
    }
}
