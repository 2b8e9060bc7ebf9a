//! Point clouds and the spatial queries the operators are built on.

mod grid;
mod query;

pub use grid::UniformGrid;
pub use query::{
    assign_cells, ball_query, farthest_point_sample, CellMembership, NeighborTable,
};

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn dist(a: Point3, b: Point3) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Positions, per-point features and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3>,
    /// `N x c_in`; zero columns means a positions-only cloud.
    pub features: Array2<f64>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>, features: Array2<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if features.nrows() != positions.len() {
            return Err(Error::shape("features rows", positions.len(), features.nrows()));
        }
        if let Some(l) = &labels {
            if l.len() != positions.len() {
                return Err(Error::shape("labels", positions.len(), l.len()));
            }
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Config(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            positions,
            features,
            labels,
        })
    }

    /// Cloud with no feature channels.
    pub fn from_positions(positions: Vec<Point3>) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, Array2::zeros((n, 0)), None)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }

    /// Raw coordinates as a 3-channel feature matrix.
    pub fn xyz_features(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), 3), |(i, c)| self.positions[i][c])
    }

    /// Features for the network input: the stored features, or xyz when the
    /// cloud has none.
    pub fn input_features(&self) -> Array2<f64> {
        if self.channels() == 0 {
            self.xyz_features()
        } else {
            self.features.clone()
        }
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        PointCloud {
            positions,
            features,
            labels,
        }
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.positions.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }
}
