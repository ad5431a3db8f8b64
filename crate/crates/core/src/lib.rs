//! Set-to-set forecasting for irregularly sampled spatial data.
//!
//! The crate provides a family of forecasters that condition on a set of
//! (position, value) measurements and produce readouts at arbitrary query
//! positions: joint self-attention (MSA), an encoder-decoder transformer
//! (TFS), graph element networks (GEN), conditional neural processes (CNP),
//! two hybrids probing latent bottlenecks (GNG, PER) and a Gaussian kernel
//! averaging baseline (GKA). Everything runs on an in-crate reverse-mode
//! autodiff engine in 64-bit floats, with deterministic training, synthetic
//! dataset generators backed by a finite-difference Poisson oracle, forecast
//! metrics, and the bottleneck diagnostic experiments.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod encoding;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod params;
pub mod rng;
pub mod training;

pub use autodiff::{Tape, Tensor};
pub use error::{Error, Result};
