//! Hybrid closed-loop simulation.
//!
//! The converter is integrated in continuous time with classical RK4 and a
//! zero-order-hold duty, while the observer and controller run at the sampling
//! period `Ts`. Per sampling instant:
//!
//! 1. draw a noise sample, form `y_o = v_o + n` (optionally low-pass filtered) and
//!    the measured error `y = v_r - y_o`;
//! 2. advance the observer one Euler step with the duty of the previous period;
//! 3. evaluate the control law;
//! 4. log the sample together with the ground-truth `F*`;
//! 5. integrate the plant over `[t, t + Ts]` in `substeps` RK4 steps.

use serde::{Deserialize, Serialize};

use crate::controller::{control, ControllerConfig};
use crate::error::{Error, Result};
use crate::observer::{CascadeObserver, ObserverConfig};
use crate::plant::{derivatives, total_disturbance_truth, PlantParams, PlantState, StateBounds};
use crate::signals::{
    DisturbanceProfile, NoiseConfig, NoiseSource, Piece, Reference, ReferenceConfig,
};

/// Observer magnitude treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1.0e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Controller sampling period [s].
    pub ts: f64,
    /// RK4 sub-steps per sampling period.
    pub substeps: usize,
    /// Simulated time [s]; a whole number of sampling periods.
    pub duration: f64,
    /// Initial converter state. `None` starts at the equilibrium matching `v_r(0)`.
    pub initial_state: Option<PlantState>,
    pub bounds: StateBounds,
    /// Time constant of the first-order output filter; `None` disables it.
    pub lpf_tau: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ts: 1.0e-4,
            substeps: 10,
            duration: 3.0,
            initial_state: None,
            bounds: StateBounds::default(),
            lpf_tau: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::invalid("sim.ts", "must be finite and > 0"));
        }
        if self.substeps < 1 {
            return Err(Error::invalid("sim.substeps", "must be at least 1"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid("sim.duration", "must be finite and > 0"));
        }
        let ratio = self.duration / self.ts;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
            return Err(Error::invalid(
                "sim.duration",
                "must be a whole multiple of ts",
            ));
        }
        self.bounds.validate()?;
        if let Some(s) = &self.initial_state {
            if !s.is_finite() {
                return Err(Error::invalid("sim.initial_state", "must be finite"));
            }
        }
        if let Some(tau) = self.lpf_tau {
            check_lpf(tau, self.ts)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }
}

fn check_lpf(tau: f64, dt: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("lpf_tau", "must be finite and > 0"));
    }
    if dt >= 2.0 * tau {
        return Err(Error::invalid(
            "lpf_tau",
            format!(
                "dt = {dt} >= 2 tau = {}; forward Euler filter is unstable",
                2.0 * tau
            ),
        ));
    }
    Ok(())
}

/// One forward-Euler step of `1 / (tau s + 1)`.
pub fn lpf_step(state: f64, input: f64, tau: f64, dt: f64) -> Result<f64> {
    check_lpf(tau, dt)?;
    Ok(state + dt / tau * (input - state))
}

/// Everything a closed-loop run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub plant: PlantParams,
    pub reference: ReferenceConfig,
    pub disturbance: DisturbanceProfile,
    pub noise: NoiseConfig,
    pub observer: ObserverConfig,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.reference.validate()?;
        self.disturbance.validate()?;
        self.noise.validate()?;
        self.observer.validate()?;
        self.observer.check_sampling(self.sim.ts)?;
        self.controller.validate()?;
        self.sim.validate()
    }

    /// Non-fatal configuration findings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.observer.omega_top * self.sim.ts > crate::observer::EULER_WARN_PRODUCT {
            out.push(format!(
                "lambda * Ts = {} exceeds {}",
                self.observer.omega_top * self.sim.ts,
                crate::observer::EULER_WARN_PRODUCT
            ));
        }
        let h = self.sim.ts / self.sim.substeps as f64;
        for t in self.disturbance.discontinuities() {
            let r = t / h;
            if (r - r.round()).abs() > 1e-6 {
                out.push(format!(
                    "disturbance discontinuity at t = {t} is not on the sub-step grid"
                ));
            }
        }
        if let Some(dwell) = self.disturbance.min_dwell() {
            if dwell <= self.sim.ts {
                out.push(format!("disturbance discontinuities only {dwell} s apart"));
            }
        }
        out
    }
}

/// One logged sampling instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SimRecord {
    pub t: f64,
    pub v_r: f64,
    pub v_o: f64,
    /// Measured output `v_o + n`, before the optional filter.
    pub y_o: f64,
    /// True tracking error `v_r - v_o`.
    pub e: f64,
    /// Error fed to observer and controller.
    pub y_meas: f64,
    pub duty: f64,
    pub duty_unsat: f64,
    pub d: f64,
    pub z1_hat: f64,
    pub z2_hat: f64,
    pub z3_hat: f64,
    pub f_star_truth: f64,
}

/// Entry of the state into the region outside the assumed bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundViolation {
    pub t: f64,
    pub v_o: f64,
    pub i_l: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    pub records: Vec<SimRecord>,
    pub bound_violations: Vec<BoundViolation>,
}

/// Observer blow-up detected during a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergence {
    pub t: f64,
    pub magnitude: f64,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Diverged {
            t: d.t,
            magnitude: d.magnitude,
        }
    }
}

/// Classical RK4 step of the converter with the duty held and `d` taken from one
/// smooth piece.
pub fn rk4_step(
    state: &PlantState,
    duty: f64,
    piece: &Piece,
    t0: f64,
    h: f64,
    params: &PlantParams,
) -> Result<PlantState> {
    let f = |s: &PlantState, t: f64| derivatives(s, duty, piece.eval(t), params);
    let shift = |s: &PlantState, k: (f64, f64), a: f64| PlantState {
        v_o: s.v_o + a * k.0,
        i_l: s.i_l + a * k.1,
    };
    let k1 = f(state, t0)?;
    let k1 = (k1.dv_o, k1.di_l);
    let k2 = f(&shift(state, k1, 0.5 * h), t0 + 0.5 * h)?;
    let k2 = (k2.dv_o, k2.di_l);
    let k3 = f(&shift(state, k2, 0.5 * h), t0 + 0.5 * h)?;
    let k3 = (k3.dv_o, k3.di_l);
    let k4 = f(&shift(state, k3, h), t0 + h)?;
    let k4 = (k4.dv_o, k4.di_l);
    Ok(PlantState {
        v_o: state.v_o + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        i_l: state.i_l + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    })
}

/// Run a scenario; divergence is reported as the partial log plus a diagnostic.
pub fn run_until_divergence(scenario: &Scenario) -> Result<(SimOutput, Option<Divergence>)> {
    scenario.validate()?;
    let Scenario {
        plant,
        reference,
        disturbance,
        noise,
        observer,
        controller,
        sim,
    } = scenario;

    let reference = Reference::new(reference)?;
    let mut noise = NoiseSource::new(noise)?;
    let mut obs = CascadeObserver::new(observer, sim.ts)?;
    let mut state = sim
        .initial_state
        .unwrap_or_else(|| plant.equilibrium(reference.at(0.0).v_r / plant.v_in));

    let steps = sim.steps();
    let h = sim.ts / sim.substeps as f64;
    let mut out = SimOutput {
        records: Vec::with_capacity(steps),
        bound_violations: Vec::new(),
    };
    let mut prev_duty = 0.0;
    let mut filtered: Option<f64> = None;
    let mut inside = true;

    for k in 0..steps {
        let t = k as f64 * sim.ts;
        let r = reference.at(t);
        let n = noise.sample();
        let y_o = state.v_o + n;
        let fed = match sim.lpf_tau {
            Some(tau) => {
                let next = match filtered {
                    Some(f) => lpf_step(f, y_o, tau, sim.ts)?,
                    None => y_o,
                };
                filtered = Some(next);
                next
            }
            None => y_o,
        };
        let y = r.v_r - fed;

        obs.step(y, prev_duty);
        let magnitude = obs.state().max_abs();
        if magnitude.is_nan() || magnitude > DIVERGENCE_THRESHOLD {
            log::error!("observer diverged at t = {t} (|xi| = {magnitude:e})");
            return Ok((out, Some(Divergence { t, magnitude })));
        }
        let est = obs.estimate();
        let u = control(y, &est, controller)?;

        let d = disturbance.at(t);
        let deriv = derivatives(&state, u.duty, d, plant)?;
        let f = total_disturbance_truth(&state, &deriv, u.duty, d, plant, observer.b_hat)?;
        out.records.push(SimRecord {
            t,
            v_r: r.v_r,
            v_o: state.v_o,
            y_o,
            e: r.v_r - state.v_o,
            y_meas: y,
            duty: u.duty,
            duty_unsat: u.duty_unsat,
            d,
            z1_hat: est.z1_hat,
            z2_hat: est.z2_hat,
            z3_hat: est.z3_hat,
            f_star_truth: r.v_r_ddot - f,
        });

        for j in 0..sim.substeps {
            let t0 = t + j as f64 * h;
            let piece = disturbance.piece_at(t0 + 0.5 * h);
            state = rk4_step(&state, u.duty, &piece, t0, h, plant)?;
        }
        if sim.bounds.contains(&state) {
            inside = true;
        } else if inside {
            inside = false;
            let t_next = t + sim.ts;
            log::warn!(
                "state left assumed bounds at t = {t_next}: v_o = {}, i_L = {}",
                state.v_o,
                state.i_l
            );
            out.bound_violations.push(BoundViolation {
                t: t_next,
                v_o: state.v_o,
                i_l: state.i_l,
            });
        }
        prev_duty = u.duty;
    }
    Ok((out, None))
}

/// Run a scenario to completion, failing on observer divergence.
pub fn run(scenario: &Scenario) -> Result<SimOutput> {
    match run_until_divergence(scenario)? {
        (out, None) => Ok(out),
        (_, Some(div)) => Err(div.into()),
    }
}
