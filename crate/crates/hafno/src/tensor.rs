//! Dense row-major f64 tensors.
//!
//! Data lives behind an `Arc` so that cloning a tensor into a computation
//! graph is O(1); mutation goes through [`Tensor::data_mut`] which copies
//! only when the buffer is shared.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {:?} implies {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Consumes the tensor, returning the underlying buffer (copies if shared).
    pub fn into_data(self) -> Vec<f64> {
        match Arc::try_unwrap(self.data) {
            Ok(v) => v,
            Err(arc) => (*arc).clone(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "tensor add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "tensor sub", |a, b| a - b)
    }

    pub fn zip(&self, other: &Tensor, context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    /// In-place `self += c * other`. Shapes must match.
    pub fn axpy(&mut self, c: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        let dst = self.data_mut();
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += c * s;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.numel() as f64).sqrt()
    }

    /// Cyclic shift of the last two axes: `out[.., i, j] = in[.., i - si, j - sj]`
    /// with indices taken modulo the axis length. Shifts may be negative.
    pub fn cyclic_shift2(&self, si: i64, sj: i64) -> Tensor {
        let rank = self.shape.len();
        assert!(rank >= 2, "cyclic_shift2 needs at least 2 axes");
        let h = self.shape[rank - 2];
        let w = self.shape[rank - 1];
        let planes = self.numel() / (h * w);
        let si = si.rem_euclid(h as i64) as usize;
        let sj = sj.rem_euclid(w as i64) as usize;
        let src = self.data();
        let mut out = vec![0.0; self.numel()];
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..h {
                let isrc = (i + h - si) % h;
                for j in 0..w {
                    let jsrc = (j + w - sj) % w;
                    out[base + i * w + j] = src[base + isrc * w + jsrc];
                }
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(out),
        }
    }

    /// Zero-pad the last two axes on the bottom/right to `(h, w)`.
    pub fn pad_bottom_right(&self, h: usize, w: usize) -> Tensor {
        let rank = self.shape.len();
        let h0 = self.shape[rank - 2];
        let w0 = self.shape[rank - 1];
        assert!(h >= h0 && w >= w0);
        let planes = self.numel() / (h0 * w0);
        let mut shape = self.shape.clone();
        shape[rank - 2] = h;
        shape[rank - 1] = w;
        let mut out = vec![0.0; planes * h * w];
        let src = self.data();
        for p in 0..planes {
            for i in 0..h0 {
                let s = p * h0 * w0 + i * w0;
                let d = p * h * w + i * w;
                out[d..d + w0].copy_from_slice(&src[s..s + w0]);
            }
        }
        Tensor {
            shape,
            data: Arc::new(out),
        }
    }

    /// Crop the last two axes to their top-left `(h, w)` corner.
    pub fn crop_top_left(&self, h: usize, w: usize) -> Tensor {
        let rank = self.shape.len();
        let h0 = self.shape[rank - 2];
        let w0 = self.shape[rank - 1];
        assert!(h <= h0 && w <= w0);
        let planes = self.numel() / (h0 * w0);
        let mut shape = self.shape.clone();
        shape[rank - 2] = h;
        shape[rank - 1] = w;
        let mut out = vec![0.0; planes * h * w];
        let src = self.data();
        for p in 0..planes {
            for i in 0..h {
                let s = p * h0 * w0 + i * w0;
                let d = p * h * w + i * w;
                out[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
        Tensor {
            shape,
            data: Arc::new(out),
        }
    }
}
