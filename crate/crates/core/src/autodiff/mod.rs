//! Dense-tensor numerical core with reverse-mode automatic differentiation.
//!
//! All model arithmetic in this crate runs through these ops, in 64-bit
//! floats, on a per-forward [`Tape`]. See [`tape`] for the recording scheme.

pub mod check;
pub mod kernels;
mod ops;
mod tape;

pub use ops::concat;
pub use tape::{profile_report as tape_profile_report, profile_start as tape_profile_start, Tape, Tensor};

impl Tensor {
    /// Accumulated gradient, or zeros when no gradient ever reached this node.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }
}
