//! Active disturbance rejection control (ADRC) of a DC-DC buck converter with a
//! p-level cascade extended state observer (CESO).
//!
//! The crate is organised bottom-up:
//!
//! - [`plant`]: averaged converter model and ground-truth total disturbance.
//! - [`signals`]: reference trajectory, external disturbance and sensor noise.
//! - [`observer`]: cascade observer and state selector (`p = 1` is the standard ESO).
//! - [`controller`]: error-domain ADRC law with a PD stabiliser.
//! - [`simloop`]: hybrid closed-loop engine (RK4 plant, sampled observer/controller).
//! - [`analysis`]: LTI models of the loop, frequency responses and eigenvalues.
//! - [`metrics`]: integral quality criteria and ripple amplitude.
//! - [`harness`]: experiment specs, sweeps, CSV/JSON output and the CLI backend.

pub mod analysis;
pub mod controller;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod observer;
pub mod plant;
pub mod signals;
pub mod simloop;

pub use error::{Error, Result};
