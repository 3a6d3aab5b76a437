//! Multi-channel scalar fields on uniform 2D grids.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rectangular domain bounds `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Domain {
    pub const UNIT: Domain = Domain {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub const SYMMETRIC: Domain = Domain {
        x0: -1.0,
        x1: 1.0,
        y0: -1.0,
        y1: 1.0,
    };
}

/// A real-valued multi-channel field sampled on a uniform `H × W` grid,
/// stored channels-first as `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub data: Tensor,
    pub domain: Domain,
}

impl GridField {
    pub fn new(data: Tensor, domain: Domain) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::invalid(format!(
                "grid field must be [C, H, W], got {:?}",
                data.shape()
            )));
        }
        Ok(GridField { data, domain })
    }

    /// Single-channel field from an `H × W` tensor.
    pub fn from_plane(plane: Tensor, domain: Domain) -> Result<Self> {
        let shape = plane.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid(format!(
                "expected [H, W] plane, got {:?}",
                shape
            )));
        }
        let data = Tensor::new(vec![1, shape[0], shape[1]], plane.into_data())?;
        Ok(GridField { data, domain })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}
