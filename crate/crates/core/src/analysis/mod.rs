//! Frequency-domain view of the observer and the control loop.
//!
//! Everything here is continuous time except
//! [`sampled_control_from_measurement_response`], which models the Euler
//! observer and one-sample duty delay of the simulator.

mod eigen;
mod loops;
mod lti;

pub use eigen::{balance, eigenvalues};
pub use loops::{
    aggregated_error_lti, build_aggregated_error_system, control_from_measurement_response,
    lpf_error_responses, noise_to_disturbance_error_response, observer_lti,
    sampled_control_from_measurement_response, AggregatedErrorSystem, ObserverLti,
};
pub use lti::{log_grid, FrequencyResponse, LtiSystem};

/// Default Bode grid: 400 log-spaced points over `[1, 1e6]` rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(1.0, 1.0e6, 400)
}
