//! Regularized 3D MRI reconstruction from under-sampled Cartesian k-space.
//!
//! The solver alternates ancestral DDPM sampling steps with a few
//! proximal-gradient iterations on a data-consistency loss. Besides the usual
//! k-space fidelity term, the loss constrains the zero-frequency row and
//! column of every slice spectrum through the discrete Fourier slice
//! theorem, which ties each slice to its axis projections.
//!
//! Module map:
//! - [`volume`]: complex volumes and unitary, centered FFTs
//! - [`masks`]: column-wise undersampling masks
//! - [`forward`]: acquisition, zero-filling, projections, slice residuals
//! - [`regularization`]: l1 prox and approximated total variation
//! - [`optimizer`]: smooth loss, gradient, proximal-gradient solver
//! - [`diffusion`]: noise schedule, score models, sampling step, Tweedie mean
//! - [`r3dm`]: the alternating reconstruction loop
//! - [`spectral`]: power iteration and operator-spectrum checks
//! - [`metrics`]: SSIM / PSNR in 3D and per axis
//! - [`phantoms`]: synthetic ground-truth volumes
//! - [`io`], [`render`], [`cli`]: files, figures and the command line

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod forward;
pub mod io;
pub mod masks;
pub mod metrics;
pub mod optimizer;
pub mod phantoms;
pub mod r3dm;
pub mod regularization;
pub mod render;
pub mod spectral;
pub mod volume;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use volume::{ImageVolume, KSpaceVolume, Shape};
