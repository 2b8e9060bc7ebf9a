//! One spherical convolution: optional density, interpolation, cell conv.

use ndarray::{Array1, Array2, ArrayView2};

use crate::convop::{conv_backward, conv_forward, ConvCache, ConvLayerParams};
use crate::density::{density_backward, density_forward, DensityCache, DensityParams};
use crate::error::Result;
use crate::interp::{interpolate, interpolate_backward, InterpCache};
use crate::spatial::Point3;

#[derive(Debug, Clone, PartialEq)]
pub struct SphConv {
    /// Geometry is already scaled to `radius`.
    pub conv: ConvLayerParams,
    pub density: Option<DensityParams>,
    pub radius: f64,
    pub neighbors: usize,
}

#[derive(Debug, Clone)]
pub struct SphConvCache {
    density: Option<DensityCache>,
    interp: InterpCache,
    conv: ConvCache,
}

/// Gradients of one item; `input` is the gradient of the input features.
#[derive(Debug, Clone)]
pub struct SphConvGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub density: Option<crate::density::DensityGrads>,
    pub input: Array2<f64>,
}

impl SphConv {
    pub fn forward(
        &self,
        positions: &[Point3],
        features: ArrayView2<f64>,
        centers: &[Point3],
    ) -> Result<(Array2<f64>, SphConvCache)> {
        let (rho, dcache) = match &self.density {
            Some(p) => {
                let (rho, c) = density_forward(positions, features, p, self.radius, self.neighbors)?;
                (Some(rho), Some(c))
            }
            None => (None, None),
        };
        let (cells, icache) = interpolate(positions, features, centers, &self.conv.geometry, rho.as_deref())?;
        let (out, ccache) = conv_forward(&cells, &self.conv)?;
        Ok((
            out,
            SphConvCache {
                density: dcache,
                interp: icache,
                conv: ccache,
            },
        ))
    }

    pub fn backward(&self, cache: &SphConvCache, dout: ArrayView2<f64>) -> Result<SphConvGrads> {
        let cg = conv_backward(&cache.conv, &self.conv, dout)?;
        let ig = interpolate_backward(&cache.interp, cg.cells.view())?;
        let mut input = ig.features;
        let density = match (&self.density, &cache.density, ig.rho) {
            (Some(p), Some(dc), Some(drho)) => {
                let g = density_backward(dc, p, &drho)?;
                input += &g.features;
                Some(g)
            }
            _ => None,
        };
        Ok(SphConvGrads {
            weights: cg.weights,
            bias: cg.bias,
            density,
            input,
        })
    }
}
