//! Error-domain ADRC law.
//!
//! With `e = v_r - v_o` the error obeys `e'' = F* - b_hat mu`. The law cancels the
//! estimated disturbance and closes a PD loop on the result:
//!
//! ```text
//! mu = (z3_hat + k^2 y + 2k z2_hat) / b_hat
//! ```
//!
//! The proportional term uses the noisy measured error `y`, not `z1_hat`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::ExtendedEstimate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Closed-loop bandwidth `k` [rad/s]; `k_p = k^2`, `k_d = 2k`.
    pub k: f64,
    pub b_hat: f64,
    pub duty_min: f64,
    pub duty_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k: 80.0,
            b_hat: 2.0e6,
            duty_min: 0.0,
            duty_max: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::invalid("controller.k", "must be finite and > 0"));
        }
        if self.b_hat == 0.0 || !self.b_hat.is_finite() {
            return Err(Error::invalid(
                "controller.b_hat",
                "must be finite and non-zero",
            ));
        }
        if !(self.duty_min.is_finite()
            && self.duty_max.is_finite()
            && self.duty_min < self.duty_max)
        {
            return Err(Error::invalid(
                "controller.duty_min",
                "requires duty_min < duty_max",
            ));
        }
        Ok(())
    }

    pub fn kp(&self) -> f64 {
        self.k * self.k
    }

    pub fn kd(&self) -> f64 {
        2.0 * self.k
    }

    /// Closed error-dynamics matrix `[[0, 1], [-k_p, -k_d]]`.
    pub fn error_dynamics(&self) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [-self.kp(), -self.kd()]]
    }
}

/// Output of the control law.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlOutput {
    /// Applied duty, clamped to `[duty_min, duty_max]`.
    pub duty: f64,
    pub duty_unsat: f64,
}

impl ControlOutput {
    pub fn saturated(&self) -> bool {
        self.duty != self.duty_unsat
    }
}

pub fn control(
    y: f64,
    estimate: &ExtendedEstimate,
    cfg: &ControllerConfig,
) -> Result<ControlOutput> {
    if cfg.b_hat == 0.0 {
        return Err(Error::invalid("controller.b_hat", "must be non-zero"));
    }
    if !(y.is_finite() && estimate.z2_hat.is_finite() && estimate.z3_hat.is_finite()) {
        return Err(Error::NonFinite("controller input"));
    }
    let duty_unsat = (estimate.z3_hat + cfg.kp() * y + cfg.kd() * estimate.z2_hat) / cfg.b_hat;
    Ok(ControlOutput {
        duty: duty_unsat.clamp(cfg.duty_min, cfg.duty_max),
        duty_unsat,
    })
}
