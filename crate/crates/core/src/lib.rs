//! Frequency-guided representation learning for cross-domain few-shot
//! classification.
//!
//! The crate bundles a small reverse-mode autodiff engine, 2D Fourier
//! tooling (spectra, centered Chebyshev masks, band reconstruction),
//! low-frequency replacement augmentation, differentiable high-frequency
//! enhancement and global frequency filter layers, a residual few-shot
//! network with prototypical and graph heads, an episodic training and
//! evaluation engine, domain-gap and frequency-probe analyses, and a
//! synthetic cross-domain benchmark.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod episode;
pub mod error;
pub mod frequency;
pub mod gradcheck;
pub mod layers;
pub mod lfr;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use autodiff::{Gradients, Reduction, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Precision, Tensor};
