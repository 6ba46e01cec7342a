//! Constant-modulus MIMO waveform design for dual-function radar-communication.
//!
//! The crate designs an `N_T x L` unit-modulus transmit block that trades off
//! spatial beam-pattern matching against space-time auto/cross-correlation
//! sidelobes, subject to per-user constructive-interference (CI) constraints.
//! Two solvers are provided:
//!
//! * [`mm`]: majorization-minimization with a row-absolute-sum diagonal
//!   majorizer and per-subpulse dual bisection.
//! * [`ladmm`]: linearized ADMM with FFT-accelerated gradients.
//!
//! [`radar`] synthesizes echoes and scores designs (Capon imaging, CA-CFAR,
//! target SINR), and [`experiment`] drives complete runs from JSON configs.

pub mod ci;
pub mod costs;
pub mod error;
pub mod experiment;
pub mod ladmm;
pub mod lags;
pub mod mm;
pub mod radar;
pub mod scenario;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Complex sample type used throughout the crate.
pub type C64 = Complex64;
