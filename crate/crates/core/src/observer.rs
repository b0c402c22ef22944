//! Cascade extended state observer (CESO).
//!
//! Level 1 is a standard linear ESO driven by the measured error `y`. Every
//! following level `i` is driven by the first state of level `i - 1` and receives
//! the disturbance estimates of all lower levels as a known input, so it only has
//! to estimate the residue the slower levels could not capture:
//!
//! ```text
//! xi_1' = A xi_1 - d b_hat mu + l_1 (y - xi_11)
//! xi_i' = A xi_i + d (-b_hat mu + sum_{j<i} xi_j3) + l_i (xi_{i-1,1} - xi_i1)
//! ```
//!
//! with `A` the 3x3 shift matrix, `d = (0, 1, 0)` and `l_j = [3w_j, 3w_j^2, w_j^3]`.
//! The combined estimate is `z_hat = xi_p + (0, 0, sum_{j<p} xi_j3)`.
//!
//! Level bandwidths are anchored at the top: `w_j = lambda / alpha^(p - j)`, so the
//! last level always runs at `lambda` and `w_j = alpha^(j-1) w_1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `lambda * dt` above which a warning is emitted.
pub const EULER_WARN_PRODUCT: f64 = 0.5;
/// `lambda * dt` at or above which forward Euler is rejected.
pub const EULER_LIMIT_PRODUCT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    /// Number of cascade levels `p`.
    pub levels: usize,
    /// Bandwidth of the top level `lambda` [rad/s].
    pub omega_top: f64,
    /// Ratio between consecutive level bandwidths.
    pub alpha: f64,
    /// Input gain estimate.
    pub b_hat: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            omega_top: 3600.0,
            alpha: 3.0,
            b_hat: 2.0e6,
        }
    }
}

impl ObserverConfig {
    pub fn new(levels: usize, omega_top: f64, alpha: f64, b_hat: f64) -> Result<Self> {
        let cfg = Self {
            levels,
            omega_top,
            alpha,
            b_hat,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::invalid("observer.levels", "must be at least 1"));
        }
        if !(self.omega_top > 0.0 && self.omega_top.is_finite()) {
            return Err(Error::invalid(
                "observer.omega_top",
                "must be finite and > 0",
            ));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("observer.alpha", "alpha must exceed 1"));
        }
        if self.b_hat == 0.0 || !self.b_hat.is_finite() {
            return Err(Error::invalid(
                "observer.b_hat",
                "must be finite and non-zero",
            ));
        }
        Ok(())
    }

    /// Bandwidth `w_j` of level `j` (1-based).
    pub fn bandwidth(&self, level: usize) -> Result<f64> {
        if level < 1 || level > self.levels {
            return Err(Error::OutOfRange {
                index: level,
                max: self.levels,
            });
        }
        Ok(self.omega_top / self.alpha.powi((self.levels - level) as i32))
    }

    /// All level bandwidths, bottom level first.
    pub fn bandwidths(&self) -> Vec<f64> {
        (1..=self.levels)
            .map(|j| self.omega_top / self.alpha.powi((self.levels - j) as i32))
            .collect()
    }

    /// Bandwidth of the first level.
    pub fn omega_bottom(&self) -> f64 {
        self.omega_top / self.alpha.powi(self.levels as i32 - 1)
    }

    /// Set the top bandwidth so that the first level runs at `omega_o1`.
    pub fn with_omega_bottom(mut self, omega_o1: f64) -> Self {
        self.omega_top = omega_o1 * self.alpha.powi(self.levels as i32 - 1);
        self
    }

    /// Check the forward-Euler discretisation at sampling period `dt`.
    ///
    /// Returns `Ok(true)` when `lambda * dt` exceeds the warning threshold.
    pub fn check_sampling(&self, dt: f64) -> Result<bool> {
        let product = self.omega_top * dt;
        if product >= EULER_LIMIT_PRODUCT {
            return Err(Error::invalid(
                "observer.omega_top",
                format!(
                    "lambda * Ts = {product} >= {EULER_LIMIT_PRODUCT}; forward Euler is unstable"
                ),
            ));
        }
        Ok(product > EULER_WARN_PRODUCT)
    }
}

/// Gain vector `[3w, 3w^2, w^3]` for a bandwidth `w`.
pub fn bandwidth_gains(omega: f64) -> [f64; 3] {
    [3.0 * omega, 3.0 * omega * omega, omega * omega * omega]
}

/// Gain vector of level `level` (1-based).
pub fn gains_for_level(level: usize, cfg: &ObserverConfig) -> Result<[f64; 3]> {
    Ok(bandwidth_gains(cfg.bandwidth(level)?))
}

/// Stacked level states `xi_j = (xi_j1, xi_j2, xi_j3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObserverState {
    pub xi: Vec<[f64; 3]>,
}

impl ObserverState {
    pub fn zeros(levels: usize) -> Self {
        Self {
            xi: vec![[0.0; 3]; levels],
        }
    }

    pub fn levels(&self) -> usize {
        self.xi.len()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.xi.iter().flatten().fold(
            0.0f64,
            |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) },
        )
    }

    /// Flattened `3p` vector, level 1 first.
    pub fn to_vec(&self) -> Vec<f64> {
        self.xi.iter().flatten().copied().collect()
    }
}

/// Estimate of `(e, e', F*)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExtendedEstimate {
    pub z1_hat: f64,
    pub z2_hat: f64,
    pub z3_hat: f64,
}

fn check_dims(state: &ObserverState, cfg: &ObserverConfig) -> Result<()> {
    if state.levels() != cfg.levels {
        return Err(Error::DimensionMismatch {
            expected: 3 * cfg.levels,
            got: 3 * state.levels(),
        });
    }
    Ok(())
}

fn derivatives_with_gains(
    xi: &[[f64; 3]],
    gains: &[[f64; 3]],
    y: f64,
    duty: f64,
    b_hat: f64,
    out: &mut [[f64; 3]],
) {
    let x = &xi[0];
    let l = &gains[0];
    let innov = y - x[0];
    out[0] = [
        x[1] + l[0] * innov,
        x[2] - b_hat * duty + l[1] * innov,
        l[2] * innov,
    ];
    let mut lower_sum = 0.0;
    for i in 1..xi.len() {
        lower_sum += xi[i - 1][2];
        let x = &xi[i];
        let l = &gains[i];
        let innov = xi[i - 1][0] - x[0];
        out[i] = [
            x[1] + l[0] * innov,
            x[2] + (-b_hat * duty + lower_sum) + l[1] * innov,
            l[2] * innov,
        ];
    }
}

/// Right-hand side of the cascade observer.
pub fn observer_derivatives(
    state: &ObserverState,
    y: f64,
    duty: f64,
    cfg: &ObserverConfig,
) -> Result<ObserverState> {
    check_dims(state, cfg)?;
    let gains: Vec<[f64; 3]> = cfg.bandwidths().into_iter().map(bandwidth_gains).collect();
    let mut out = vec![[0.0; 3]; cfg.levels];
    derivatives_with_gains(&state.xi, &gains, y, duty, cfg.b_hat, &mut out);
    Ok(ObserverState { xi: out })
}

/// One forward-Euler update `xi <- xi + dt * xi'`.
pub fn observer_step(
    state: &ObserverState,
    y: f64,
    duty: f64,
    cfg: &ObserverConfig,
    dt: f64,
) -> Result<ObserverState> {
    cfg.check_sampling(dt)?;
    let deriv = observer_derivatives(state, y, duty, cfg)?;
    let xi = state
        .xi
        .iter()
        .zip(&deriv.xi)
        .map(|(x, dx)| [x[0] + dt * dx[0], x[1] + dt * dx[1], x[2] + dt * dx[2]])
        .collect();
    Ok(ObserverState { xi })
}

/// State selector: top-level state plus the disturbance estimates of all lower
/// levels in the third component.
pub fn select_estimate(state: &ObserverState) -> ExtendedEstimate {
    let Some(top) = state.xi.last() else {
        return ExtendedEstimate::default();
    };
    let p = state.xi.len();
    let z3_hat = state.xi[..p - 1].iter().fold(top[2], |acc, x| acc + x[2]);
    ExtendedEstimate {
        z1_hat: top[0],
        z2_hat: top[1],
        z3_hat,
    }
}

/// Discrete-time cascade observer advanced with forward Euler at a fixed period.
#[derive(Clone, Debug)]
pub struct CascadeObserver {
    cfg: ObserverConfig,
    gains: Vec<[f64; 3]>,
    state: ObserverState,
    scratch: Vec<[f64; 3]>,
    dt: f64,
}

impl CascadeObserver {
    /// Observer with zero initial state. Logs a warning when `lambda * dt` is
    /// above [`EULER_WARN_PRODUCT`].
    pub fn new(cfg: &ObserverConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "must be finite and >= 0"));
        }
        if cfg.check_sampling(dt)? {
            log::warn!(
                "observer lambda * Ts = {} exceeds {EULER_WARN_PRODUCT}; Euler accuracy degrades",
                cfg.omega_top * dt
            );
        }
        Ok(Self {
            cfg: cfg.clone(),
            gains: cfg.bandwidths().into_iter().map(bandwidth_gains).collect(),
            state: ObserverState::zeros(cfg.levels),
            scratch: vec![[0.0; 3]; cfg.levels],
            dt,
        })
    }

    pub fn config(&self) -> &ObserverConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ObserverState {
        &self.state
    }

    pub fn set_state(&mut self, state: ObserverState) -> Result<()> {
        check_dims(&state, &self.cfg)?;
        self.state = state;
        Ok(())
    }

    /// Advance by one sampling period using measured error `y` and the duty
    /// applied over the previous period.
    pub fn step(&mut self, y: f64, duty: f64) {
        derivatives_with_gains(
            &self.state.xi,
            &self.gains,
            y,
            duty,
            self.cfg.b_hat,
            &mut self.scratch,
        );
        let dt = self.dt;
        for (x, dx) in self.state.xi.iter_mut().zip(&self.scratch) {
            x[0] += dt * dx[0];
            x[1] += dt * dx[1];
            x[2] += dt * dx[2];
        }
    }

    pub fn estimate(&self) -> ExtendedEstimate {
        select_estimate(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(levels: usize, omega_top: f64, alpha: f64) -> ObserverConfig {
        ObserverConfig::new(levels, omega_top, alpha, 2.0e6).unwrap()
    }

    #[test]
    fn unit_bandwidth_single_level_derivative() {
        let c = cfg(1, 1.0, 3.0);
        let d = observer_derivatives(&ObserverState::zeros(1), 1.0, 0.0, &c).unwrap();
        assert_eq!(d.xi, vec![[3.0, 3.0, 1.0]]);
    }

    #[test]
    fn origin_is_equilibrium() {
        for p in 1..=4 {
            let c = cfg(p, 50.0, 2.0);
            let d = observer_derivatives(&ObserverState::zeros(p), 0.0, 0.0, &c).unwrap();
            assert!(d.xi.iter().flatten().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn two_level_hand_evaluation() {
        let c = cfg(2, 3.0, 3.0);
        assert_eq!(c.bandwidths(), vec![1.0, 3.0]);
        let s = ObserverState {
            xi: vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        };
        let d = observer_derivatives(&s, 1.0, 0.0, &c).unwrap();
        assert_eq!(d.xi[0], [0.0, 0.0, 0.0]);
        assert_eq!(d.xi[1], [9.0, 27.0, 27.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let c = cfg(2, 3.0, 3.0);
        assert!(matches!(
            observer_derivatives(&ObserverState::zeros(3), 0.0, 0.0, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_euler_step() {
        let c = cfg(1, 1.0, 3.0);
        let s = observer_step(&ObserverState::zeros(1), 1.0, 0.0, &c, 0.001).unwrap();
        assert_relative_eq!(s.xi[0][0], 0.003, max_relative = 1e-12);
        assert_relative_eq!(s.xi[0][1], 0.003, max_relative = 1e-12);
        assert_relative_eq!(s.xi[0][2], 0.001, max_relative = 1e-12);
    }

    #[test]
    fn zero_step_leaves_state() {
        let c = cfg(2, 10.0, 2.0);
        let s = ObserverState {
            xi: vec![[1.0, -2.0, 3.0], [0.5, 0.25, -1.0]],
        };
        assert_eq!(observer_step(&s, 0.3, 0.4, &c, 0.0).unwrap(), s);
    }

    #[test]
    fn sampling_checks() {
        let nominal = ObserverConfig::default();
        assert!(!nominal.check_sampling(1e-4).unwrap());
        let c = cfg(1, 6000.0, 3.0);
        assert!(c.check_sampling(1e-4).unwrap());
        let c = cfg(1, 20000.0, 3.0);
        assert!(c.check_sampling(1e-4).is_err());
        assert!(observer_step(&ObserverState::zeros(1), 0.0, 0.0, &c, 1e-4).is_err());
    }

    #[test]
    fn selector() {
        let one = ObserverState {
            xi: vec![[1.0, 2.0, 3.0]],
        };
        let e = select_estimate(&one);
        assert_eq!((e.z1_hat, e.z2_hat, e.z3_hat), (1.0, 2.0, 3.0));

        let two = ObserverState {
            xi: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
        };
        let e = select_estimate(&two);
        assert_eq!((e.z1_hat, e.z2_hat, e.z3_hat), (4.0, 5.0, 9.0));

        let three = ObserverState {
            xi: vec![[7.0, 7.0, 1.0], [7.0, 7.0, 1.0], [0.0, 0.0, 1.0]],
        };
        assert_eq!(select_estimate(&three).z3_hat, 3.0);
    }

    #[test]
    fn gains() {
        let c = cfg(1, 1.0, 3.0);
        assert_eq!(gains_for_level(1, &c).unwrap(), [3.0, 3.0, 1.0]);
        assert_eq!(bandwidth_gains(400.0), [1200.0, 4.8e5, 6.4e7]);
        assert!(matches!(
            gains_for_level(2, &c),
            Err(Error::OutOfRange { .. })
        ));
        assert!(gains_for_level(0, &c).is_err());
    }

    #[test]
    fn table_bandwidths() {
        assert_eq!(cfg(1, 3600.0, 3.0).bandwidths(), vec![3600.0]);
        assert_eq!(cfg(2, 3600.0, 3.0).bandwidths(), vec![1200.0, 3600.0]);
        assert_eq!(
            cfg(3, 3600.0, 3.0).bandwidths(),
            vec![400.0, 1200.0, 3600.0]
        );
        let c = cfg(3, 3600.0, 3.0).with_omega_bottom(100.0);
        assert_relative_eq!(c.omega_top, 900.0);
        assert_relative_eq!(c.omega_bottom(), 100.0);
    }

    #[test]
    fn invalid_configs() {
        assert!(ObserverConfig::new(0, 1.0, 3.0, 1.0).is_err());
        assert!(ObserverConfig::new(1, -1.0, 3.0, 1.0).is_err());
        assert!(ObserverConfig::new(1, 1.0, 0.5, 1.0).is_err());
        assert!(ObserverConfig::new(1, 1.0, 1.0, 1.0).is_err());
        assert!(ObserverConfig::new(1, 1.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn frozen_measurement_steady_state() {
        let c = cfg(1, 100.0, 3.0);
        let mut obs = CascadeObserver::new(&c, 1e-4).unwrap();
        for _ in 0..20_000 {
            obs.step(0.7, 0.0);
        }
        let x = obs.state().xi[0];
        assert_relative_eq!(x[0], 0.7, epsilon = 1e-9);
        assert!(x[1].abs() < 1e-7);
        assert!(x[2].abs() < 1e-5);
    }

    #[test]
    fn struct_step_matches_free_function() {
        let c = cfg(3, 3600.0, 3.0);
        let mut obs = CascadeObserver::new(&c, 1e-4).unwrap();
        let mut s = ObserverState::zeros(3);
        for k in 0..50 {
            let y = (k as f64 * 0.1).sin();
            let mu = 0.3 + 0.01 * k as f64;
            obs.step(y, mu);
            s = observer_step(&s, y, mu, &c, 1e-4).unwrap();
        }
        assert_eq!(obs.state(), &s);
    }

    proptest! {
        #[test]
        fn derivatives_are_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 9),
            y in -1.0f64..1.0,
            mu in -1.0f64..1.0,
            scale in -3.0f64..3.0,
        ) {
            let c = cfg(3, 30.0, 2.0);
            let s = ObserverState { xi: xs.chunks(3).map(|v| [v[0], v[1], v[2]]).collect() };
            let scaled = ObserverState { xi: s.xi.iter().map(|v| [scale * v[0], scale * v[1], scale * v[2]]).collect() };
            let d = observer_derivatives(&s, y, mu, &c).unwrap().to_vec();
            let ds = observer_derivatives(&scaled, scale * y, scale * mu, &c).unwrap().to_vec();
            for (a, b) in d.iter().zip(&ds) {
                prop_assert!((scale * a - b).abs() <= 1e-9 * (1.0 + a.abs() * scale.abs()));
            }
        }
    }
}
