//! Joint design of sample selections and reduced operators ("sketches") for
//! streams of bandlimited graph signals.
//!
//! Given a linear operator `H`, a signal covariance `R_x` induced by a
//! bandlimited model on a graph, and a noise covariance `R_w`, the crate
//! picks `p` of the `n` signal entries and a matching `m × p` operator so that
//! applying it to the samples approximates `H x` (direct problem) or the
//! least-squares estimate of the input (inverse problem) with minimal
//! mean-squared error.
//!
//! Modules, bottom-up:
//! - [`linalg`]: dense matrices and the factorizations everything else uses.
//! - [`graph`]: graph ensembles and spectral bases.
//! - [`signal`]: bandlimited signal model, sampling, noise.
//! - [`sketch`]: closed-form sketches, MSE objectives and the smooth relaxation.
//! - [`samplers`]: selection strategies (greedy, relaxation, heuristics, baselines).
//! - [`lmi`]: semidefinite reformulations and SDPA export.
//! - [`harness`]: streaming evaluation and experiment sweeps.

pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod lmi;
pub mod rng;
pub mod samplers;
pub mod signal;
pub mod sketch;
mod timing;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
