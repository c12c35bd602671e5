//! Desk-scale reproduction of an atom–photon CHSH experiment.
//!
//! The crate is split by concern:
//!
//! - [`quantum`]: exact two-qubit states, rotations, correlations, Bell signals.
//! - [`protocol`]: stochastic model of the excitation / microwave / detection pipeline.
//! - [`harness`]: four-setting correlation runs, PMT role swapping, error propagation.
//! - [`bounds`]: fidelity-constrained Bell extrema, local hidden-variable enumeration,
//!   Tsirelson scans.
//! - [`remote`]: locality arithmetic, fiber loss, entanglement swapping, repeater latency.
//!
//! Qubit ordering is fixed everywhere: the atom (S) is the first tensor factor and the
//! photon (P) the second.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod protocol;
pub mod quantum;
pub mod remote;
pub mod rng;

pub use error::{Error, Result};
