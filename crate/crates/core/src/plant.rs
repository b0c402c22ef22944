//! Averaged model of the buck converter.
//!
//! ```text
//! dv_o/dt = i_L / C - v_o / (C R)
//! di_L/dt = (V_in / L) (mu + d) - v_o / L
//! ```
//!
//! Eliminating `i_L` gives the input-output form
//! `v_o'' = a1 v_o' + a2 v_o + b (mu + d)` with `a1 = -1/(CR)`, `a2 = -1/(CL)` and
//! `b = V_in/(CL)`, from which the total disturbance seen by the controller is
//! defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the converter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Input voltage [V].
    pub v_in: f64,
    /// Filter inductance [H].
    pub inductance_l: f64,
    /// Filter capacitance [F].
    pub capacitance_c: f64,
    /// Load resistance [Ohm].
    pub resistance_r: f64,
}

impl Default for PlantParams {
    /// Laboratory converter: 20 V, 10 mH, 1 mF, 50 Ohm.
    fn default() -> Self {
        Self {
            v_in: 20.0,
            inductance_l: 0.01,
            capacitance_c: 0.001,
            resistance_r: 50.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v_in", self.v_in),
            ("inductance_l", self.inductance_l),
            ("capacitance_c", self.capacitance_c),
            ("resistance_r", self.resistance_r),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        let derived = [("a1", self.a1()), ("a2", self.a2()), ("b", self.b())];
        for (name, value) in derived {
            if !value.is_finite() {
                return Err(Error::invalid(name, "derived coefficient is not finite"));
            }
        }
        Ok(())
    }

    /// `-1/(C R)` [1/s].
    pub fn a1(&self) -> f64 {
        -1.0 / (self.capacitance_c * self.resistance_r)
    }

    /// `-1/(C L)` [1/s^2].
    pub fn a2(&self) -> f64 {
        -1.0 / (self.capacitance_c * self.inductance_l)
    }

    /// Input gain `V_in/(C L)` [V/s^2 per unit duty].
    pub fn b(&self) -> f64 {
        self.v_in / (self.capacitance_c * self.inductance_l)
    }

    /// Steady state reached under constant duty and no disturbance.
    pub fn equilibrium(&self, duty: f64) -> PlantState {
        let v_o = self.v_in * duty;
        PlantState {
            v_o,
            i_l: v_o / self.resistance_r,
        }
    }
}

/// Averaged converter state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantState {
    /// Capacitor voltage [V].
    pub v_o: f64,
    /// Inductor current [A].
    pub i_l: f64,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.v_o.is_finite() && self.i_l.is_finite()
    }
}

/// Time derivative of [`PlantState`]: `(dv_o/dt [V/s], di_L/dt [A/s])`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PlantDerivative {
    pub dv_o: f64,
    pub di_l: f64,
}

/// Compact set the state is assumed to stay in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateBounds {
    /// Voltage bound [V].
    pub r_vo: f64,
    /// Current bound [A].
    pub r_il: f64,
}

impl Default for StateBounds {
    fn default() -> Self {
        Self {
            r_vo: 50.0,
            r_il: 10.0,
        }
    }
}

impl StateBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_vo > 0.0 && self.r_vo.is_finite()) {
            return Err(Error::invalid("r_vo", "must be finite and > 0"));
        }
        if !(self.r_il > 0.0 && self.r_il.is_finite()) {
            return Err(Error::invalid("r_il", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn contains(&self, state: &PlantState) -> bool {
        state.v_o.abs() < self.r_vo && state.i_l.abs() < self.r_il
    }
}

/// Right-hand side of the averaged model.
///
/// `disturbance` enters additively with the duty ratio. The duty is not clamped
/// here; saturation belongs to the controller.
pub fn derivatives(
    state: &PlantState,
    duty: f64,
    disturbance: f64,
    params: &PlantParams,
) -> Result<PlantDerivative> {
    if !state.is_finite() {
        return Err(Error::NonFinite("plant state"));
    }
    if !duty.is_finite() {
        return Err(Error::NonFinite("duty"));
    }
    if !disturbance.is_finite() {
        return Err(Error::NonFinite("disturbance"));
    }
    let c = params.capacitance_c;
    let l = params.inductance_l;
    Ok(PlantDerivative {
        dv_o: state.i_l / c - state.v_o / (c * params.resistance_r),
        di_l: params.v_in / l * (duty + disturbance) - state.v_o / l,
    })
}

/// Ground-truth total disturbance
/// `F = a2 v_o + a1 v_o' + (b - b_hat) mu + b d` [V/s^2].
///
/// The error-domain disturbance the observer estimates is `F* = v_r'' - F`.
pub fn total_disturbance_truth(
    state: &PlantState,
    state_deriv: &PlantDerivative,
    duty: f64,
    disturbance: f64,
    params: &PlantParams,
    b_hat: f64,
) -> Result<f64> {
    if b_hat == 0.0 {
        return Err(Error::invalid("b_hat", "must be non-zero"));
    }
    let b = params.b();
    Ok(params.a2() * state.v_o
        + params.a1() * state_deriv.dv_o
        + (b - b_hat) * duty
        + b * disturbance)
}
