//! Kernel-regularized prediction-error identification of high-order MAX
//! models `y(t) = B(z) u(t-1) + C(z) e(t)`.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece:
//! signal generation and filtering, TC/DC2 kernel priors, the MAP estimator,
//! Laplace-approximated evidence, the hyperparameter search and the Monte
//! Carlo benchmark primitives. File formats, the CLI and the parallel
//! benchmark driver live in the companion `kpem` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod benchmark;
pub mod error;
pub mod estimator;
pub mod evidence;
pub mod kernels;
pub mod model;
pub mod nelder_mead;
pub mod pipeline;
pub mod signals;

pub use error::{Error, Result};
