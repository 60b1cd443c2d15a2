//! Desk-scale laboratory for tree-ring watermarking of ODE-based generative
//! models.
//!
//! The generative models here are Gaussian mixtures whose rectified-flow
//! velocity and DDIM noise prediction are available in closed form, so the
//! whole generate → attack → invert → recover → score pipeline can run on a
//! laptop while still exhibiting the inversion error that real text-to-image
//! models show.
//!
//! Module map:
//!
//! * [`grid`]: latent tensors, complex planes, seeded Gaussian streams, 2D FFT
//!   and the `RLT1`/`RLC1` file formats.
//! * [`watermark`]: ring masks, ring keys, Fourier-space embedding and key
//!   recovery.
//! * [`model`]: analytic mixture models, conditions and guidance.
//! * [`solvers`]: Euler / DDIM samplers and their naive, implicit and exact
//!   inversions, plus DPM-Solver++ steps.
//! * [`attacks`]: blur and additive noise applied to generated latents.
//! * [`stats`]: ROC/AUC, TPR at fixed FPR, symmetric KL divergence.
//! * [`lab`]: experiment configuration, trial pipeline, CSV and report output.

pub mod attacks;
pub mod error;
pub mod grid;
pub mod lab;
pub mod model;
pub mod solvers;
pub mod stats;
pub mod watermark;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, LatentGrid, RngStream};
