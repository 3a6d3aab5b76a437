//! Hierarchical attentive Fourier neural operator for 2D PDE surrogate
//! modeling, built from first principles: a minimal reverse-mode autodiff
//! engine, a radix-2 real FFT with learnable truncated frequency kernels,
//! equivariant channel/spatial attention, a multiscale encoder–decoder,
//! seeded PDE data generators with reference solvers, a training loop, and
//! a diagnostics suite for the equivariance and frequency-domain claims.
//!
//! See the `book/` directory for a guided tour; its code snippets compile
//! as doctests of this crate.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod field;
pub mod layers;
pub mod model;
pub mod seed;
pub mod spectral;
pub mod tensor;
pub(crate) mod wire;

pub use error::{Error, Result};
pub use tensor::Tensor;
