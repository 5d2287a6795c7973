//! Simulation engine for multimode Gaussian continuous-variable quantum systems
//! under continuous homodyne probing.
//!
//! The state of `n` bosonic modes is carried entirely by a mean vector and a
//! covariance matrix in the convention `gamma_ij = 2 Re<dy_i dy_j>` over the
//! interleaved quadrature vector `(x1, p1, ..., xn, pn)`, so the vacuum
//! covariance is the identity. The engine propagates states through symplectic
//! interaction steps, diagonal loss/noise channels, and homodyne measurement
//! conditioning (Schur-complement covariance update plus a stochastic mean
//! shift), and drives the spin-squeezing, magnetometry, and entanglement
//! scenarios built on top of that update loop.
//!
//! Modules:
//! - [`gstate`]: mode layouts, Gaussian states, physicality validation
//! - [`channels`]: symplectic / loss / noise propagation and the scenario
//!   coupling-matrix builders
//! - [`measure`]: homodyne conditioning and the per-segment probe cycle
//! - [`riccati`]: continuous-limit matrix Riccati dynamics and closed forms
//! - [`scenarios`]: end-to-end experiment drivers
//! - [`metrics`]: variances, squeezing, EPR variance, logarithmic negativity
//! - [`wigner`]: phase-space evaluation and single-photon conditioning
//! - [`cli`]: config parsing, CSV output, run manifests, summaries

pub mod channels;
pub mod cli;
pub mod error;
pub mod gstate;
pub mod measure;
pub mod metrics;
pub mod riccati;
pub mod rng;
pub mod scenarios;
pub mod wigner;

pub use error::{Error, Result};
pub use gstate::{GaussianState, ModeKind, ModeLayout};
