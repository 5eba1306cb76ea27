//! Simulation and verification toolkit for discrete-time quantum trajectories
//! driven by disordered quantum instruments.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: complex matrices, states, superoperators, trace norm and the
//!   projective metric.
//! * [`instrument`]: Kraus instruments, Born probabilities, posterior updates,
//!   strict positivity and eventual-strict-positivity probes.
//! * [`environment`]: stationary two-sided disorder processes.
//! * [`trajectory`]: quenched and annealed sampling, pattern counting and exact
//!   enumeration.
//! * [`stationary`]: dynamically stationary states and forgetting rates.
//! * [`clt`]: mean, asymptotic variance and normality checks for pattern counts.
//! * [`coupling`]: basis-label structure, block couplings and coalescence.
//! * [`zoo`]: the catalogue of example models with their declared constants.
//! * [`config`] and [`runner`]: experiment configuration and report emission.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks, and
// index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clt;
pub mod config;
pub mod coupling;
pub mod environment;
pub mod error;
pub mod instrument;
pub mod linalg;
pub mod rng;
pub mod runner;
pub mod stationary;
pub mod trajectory;
pub mod zoo;

pub use error::{Error, Result};

/// Numerical tolerances shared across modules.
pub mod tol {
    /// Smallest admissible eigenvalue of a PSD matrix is `-PSD`.
    pub const PSD: f64 = 1e-10;
    /// Max entry of `|M − M†|` for Hermitian matrices.
    pub const HERM: f64 = 1e-10;
    /// Trace deviation for states.
    pub const TRACE: f64 = 1e-10;
    /// Deviation of `Σ V†V` from the identity.
    pub const TP: f64 = 1e-9;
    /// Traces below this trigger the reference-state fallback.
    pub const ZERO: f64 = 1e-12;
    /// Cauchy gap for backward iteration.
    pub const STATIONARY: f64 = 1e-9;
}
