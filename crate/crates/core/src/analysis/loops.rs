use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use super::lti::{validate_grid, FrequencyResponse, LtiSystem};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::observer::{bandwidth_gains, ObserverConfig};

/// Aggregated observation-error dynamics of the cascade observer.
///
/// With `z~_i = z - xi_i - b b^T sum_{j<i} xi_j` and `zeta = [z~_1; ...; z~_p]`,
///
/// ```text
/// zeta' = H zeta + delta F*' + gamma n
/// ```
///
/// `H` is block lower triangular with diagonal blocks `A - l_i c^T`. The measured
/// error is `y = e - n`, which makes level 1 see `+l_1 n` and every higher level
/// `+b l_13 n`; the sign of `gamma` follows from that convention.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedErrorSystem {
    pub h: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub delta: DVector<f64>,
    /// Picks `z~_p3`, the error of the total-disturbance estimate.
    pub selector: DVector<f64>,
}

pub fn build_aggregated_error_system(cfg: &ObserverConfig) -> Result<AggregatedErrorSystem> {
    cfg.validate()?;
    let p = cfg.levels;
    let n = 3 * p;
    let l: Vec<[f64; 3]> = cfg.bandwidths().into_iter().map(bandwidth_gains).collect();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..p {
        let r = 3 * i;
        // A - l_i c^T
        h[(r, r)] = -l[i][0];
        h[(r + 1, r)] = -l[i][1];
        h[(r + 2, r)] = -l[i][2];
        h[(r, r + 1)] = 1.0;
        h[(r + 1, r + 2)] = 1.0;
        if i >= 1 {
            // (l_i c^T - b l_{i-1,3} c^T) z~_{i-1}
            let c = 3 * (i - 1);
            h[(r, c)] = l[i][0];
            h[(r + 1, c)] = l[i][1];
            h[(r + 2, c)] = l[i][2] - l[i - 1][2];
        }
        for j in 0..i.saturating_sub(1) {
            // -b (l_j3 - l_{j+1,3}) c^T z~_j
            h[(r + 2, 3 * j)] = -(l[j][2] - l[j + 1][2]);
        }
    }
    let mut gamma = DVector::zeros(n);
    gamma[0] = l[0][0];
    gamma[1] = l[0][1];
    gamma[2] = l[0][2];
    for i in 1..p {
        gamma[3 * i + 2] = l[0][2];
    }
    let mut delta = DVector::zeros(n);
    for i in 0..p {
        delta[3 * i + 2] = 1.0;
    }
    let mut selector = DVector::zeros(n);
    selector[n - 1] = 1.0;
    Ok(AggregatedErrorSystem {
        h,
        gamma,
        delta,
        selector,
    })
}

/// The aggregated error system as an LTI model with inputs `(n, F*')` and
/// output `z~_p3`.
pub fn aggregated_error_lti(cfg: &ObserverConfig) -> Result<LtiSystem> {
    let sys = build_aggregated_error_system(cfg)?;
    let n = sys.h.nrows();
    let mut b = DMatrix::zeros(n, 2);
    b.set_column(0, &sys.gamma);
    b.set_column(1, &sys.delta);
    let c = DMatrix::from_row_slice(1, n, sys.selector.as_slice());
    LtiSystem::new(sys.h, b, c, DMatrix::zeros(1, 2))
}

/// Error system with a first-order filter `1 / (tau s + 1)` on the measurement.
///
/// The observer is fed `y_f = G_lpf (z1 - n)` instead of `y = z1 - n`, so level 1
/// is driven by `w = y_f - z1` in place of `-n`. Augmenting the state with `y_f`
/// gives inputs `(n, z1, F*')` and output `z~_p3`.
fn lpf_augmented_lti(cfg: &ObserverConfig, tau: f64) -> Result<LtiSystem> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("lpf_tau", "must be finite and > 0"));
    }
    let sys = build_aggregated_error_system(cfg)?;
    let n = sys.h.nrows();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(&sys.h);
    for i in 0..n {
        a[(i, n)] = -sys.gamma[i];
    }
    a[(n, n)] = -1.0 / tau;
    let mut b = DMatrix::zeros(n + 1, 3);
    b[(n, 0)] = -1.0 / tau;
    for i in 0..n {
        b[(i, 1)] = sys.gamma[i];
        b[(i, 2)] = sys.delta[i];
    }
    b[(n, 1)] = 1.0 / tau;
    let mut c = DMatrix::zeros(1, n + 1);
    c[(0, n - 1)] = 1.0;
    LtiSystem::new(a, b, c, DMatrix::zeros(1, 3))
}

/// `G_{z~p3 n}(jw)`: sensor noise to total-disturbance estimation error,
/// optionally with the output filter in the measurement path.
pub fn noise_to_disturbance_error_response(
    cfg: &ObserverConfig,
    omegas: &[f64],
    lpf_tau: Option<f64>,
) -> Result<FrequencyResponse> {
    validate_grid(omegas)?;
    match lpf_tau {
        None => aggregated_error_lti(cfg)?.channel_response(0, 0, omegas),
        Some(tau) => lpf_augmented_lti(cfg, tau)?.channel_response(0, 0, omegas),
    }
}

/// With the output filter: `(G_{z~p3 n}, G_{z~p3 z1})`. The second term is the
/// part of the true error the filter removes and the observer then has to treat
/// as disturbance.
pub fn lpf_error_responses(
    cfg: &ObserverConfig,
    omegas: &[f64],
    tau: f64,
) -> Result<(FrequencyResponse, FrequencyResponse)> {
    validate_grid(omegas)?;
    let sys = lpf_augmented_lti(cfg, tau)?;
    Ok((
        sys.channel_response(0, 0, omegas)?,
        sys.channel_response(0, 1, omegas)?,
    ))
}

/// Observer as an LTI system with inputs `(y, mu)` and outputs `(z2_hat, z3_hat)`.
#[derive(Clone, Debug)]
pub struct ObserverLti {
    pub system: LtiSystem,
}

pub fn observer_lti(cfg: &ObserverConfig) -> Result<ObserverLti> {
    cfg.validate()?;
    let p = cfg.levels;
    let n = 3 * p;
    let l: Vec<[f64; 3]> = cfg.bandwidths().into_iter().map(bandwidth_gains).collect();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 2);
    for (i, li) in l.iter().enumerate() {
        let r = 3 * i;
        a[(r, r + 1)] = 1.0;
        a[(r + 1, r + 2)] = 1.0;
        for k in 0..3 {
            a[(r + k, r)] -= li[k];
        }
        if i == 0 {
            for k in 0..3 {
                b[(r + k, 0)] = li[k];
            }
        } else {
            for k in 0..3 {
                a[(r + k, r - 3)] += li[k];
            }
            for j in 0..i {
                a[(r + 1, 3 * j + 2)] += 1.0;
            }
        }
        b[(r + 1, 1)] = -cfg.b_hat;
    }
    let mut c = DMatrix::zeros(2, n);
    c[(0, n - 2)] = 1.0;
    for i in 0..p {
        c[(1, 3 * i + 2)] = 1.0;
    }
    Ok(ObserverLti {
        system: LtiSystem::new(a, b, c, DMatrix::zeros(2, 2))?,
    })
}

/// `G_uy(jw)`: measured error to duty ratio through observer and control law,
/// with saturation ignored.
///
/// The law `mu = (z3_hat + k^2 y + 2k z2_hat) / b_hat` feeds `mu` back into the
/// observer, so at each frequency `mu = T_my y + T_mm mu` is solved for `mu / y`.
pub fn control_from_measurement_response(
    obs: &ObserverConfig,
    ctrl: &ControllerConfig,
    omegas: &[f64],
) -> Result<FrequencyResponse> {
    validate_grid(omegas)?;
    ctrl.validate()?;
    let sys = observer_lti(obs)?.system;
    let (kp, kd, b_hat) = (ctrl.kp(), ctrl.kd(), ctrl.b_hat);
    let values = omegas
        .par_iter()
        .map(|&w| {
            let g = sys.transfer(w)?;
            let law = |z2: Complex<f64>, z3: Complex<f64>| (z3 + z2 * kd) / b_hat;
            let t_my = law(g[(0, 0)], g[(1, 0)]) + kp / b_hat;
            let t_mm = law(g[(0, 1)], g[(1, 1)]);
            let den = Complex::new(1.0, 0.0) - t_mm;
            if den.norm() <= 1e-12 * (1.0 + t_mm.norm()) {
                return Err(Error::SingularLoop { omega: w });
            }
            Ok(t_my / den)
        })
        .collect::<Result<Vec<_>>>()?;
    FrequencyResponse::from_complex(omegas.to_vec(), values)
}

/// `G_uy(e^{jw Ts})` of the sampled implementation: forward-Euler observer fed
/// with `(y_k, mu_{k-1})`, control law applied to the updated estimate.
///
/// Matches the continuous response well below `1 / Ts` and departs from it as
/// `lambda * Ts` and `w * Ts` grow.
pub fn sampled_control_from_measurement_response(
    obs: &ObserverConfig,
    ctrl: &ControllerConfig,
    omegas: &[f64],
    ts: f64,
) -> Result<FrequencyResponse> {
    validate_grid(omegas)?;
    ctrl.validate()?;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::invalid("ts", "must be finite and > 0"));
    }
    let sys = observer_lti(obs)?.system;
    let n = sys.states();
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
    let phi = to_c(&(DMatrix::identity(n, n) + &sys.a * ts));
    let gamma = to_c(&(&sys.b * ts));
    let c = to_c(&sys.c);
    let (kp, kd, b_hat) = (ctrl.kp(), ctrl.kd(), ctrl.b_hat);
    let values = omegas
        .par_iter()
        .map(|&w| {
            let z = Complex::from_polar(1.0, w * ts);
            let mut resolvent = -phi.clone();
            for i in 0..n {
                resolvent[(i, i)] += z;
            }
            let x = resolvent
                .lu()
                .solve(&gamma)
                .ok_or(Error::SingularResolvent { omega: w })?;
            // Estimate after the update is z * xi_k; mu enters delayed by one sample.
            let g = &c * x;
            let law = |z2: Complex<f64>, z3: Complex<f64>| (z3 + z2 * kd) / b_hat;
            let t_my = law(g[(0, 0)], g[(1, 0)]) * z + kp / b_hat;
            let t_mm = law(g[(0, 1)], g[(1, 1)]);
            let den = Complex::new(1.0, 0.0) - t_mm;
            if den.norm() <= 1e-12 * (1.0 + t_mm.norm()) {
                return Err(Error::SingularLoop { omega: w });
            }
            Ok(t_my / den)
        })
        .collect::<Result<Vec<_>>>()?;
    FrequencyResponse::from_complex(omegas.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::eigenvalues;
    use crate::observer::observer_derivatives;
    use crate::observer::ObserverState;
    use approx::assert_relative_eq;

    fn cfg(levels: usize, omega_top: f64, alpha: f64) -> ObserverConfig {
        ObserverConfig::new(levels, omega_top, alpha, 2.0e6).unwrap()
    }

    #[test]
    fn single_level_unit_bandwidth() {
        let s = build_aggregated_error_system(&cfg(1, 1.0, 3.0)).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[-3.0, 1.0, 0.0, -3.0, 0.0, 1.0, -1.0, 0.0, 0.0]);
        assert_eq!(s.h, expected);
        for e in eigenvalues(&s.h).unwrap() {
            assert_relative_eq!(e.re, -1.0, max_relative = 1e-9);
            assert!(e.im.abs() < 1e-9);
        }
    }

    #[test]
    fn two_level_spectrum_and_delta() {
        let s = build_aggregated_error_system(&cfg(2, 3.0, 3.0)).unwrap();
        assert_eq!(s.delta.as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let ev = eigenvalues(&s.h).unwrap();
        let expect = [-3.0, -3.0, -3.0, -1.0, -1.0, -1.0];
        for (e, x) in ev.iter().zip(expect) {
            assert!(
                (e.re - x).abs() <= 1e-6 * x.abs() && e.im.abs() <= 1e-6 * x.abs(),
                "{e} vs {x}"
            );
        }
    }

    #[test]
    fn block_lower_triangular() {
        let s = build_aggregated_error_system(&cfg(3, 3600.0, 3.0)).unwrap();
        for bi in 0..3 {
            for bj in bi + 1..3 {
                let block = s.h.view((3 * bi, 3 * bj), (3, 3));
                assert!(block.iter().all(|v| *v == 0.0));
            }
        }
    }

    /// Independent route: express the observer in error coordinates
    /// `zeta = 1 (x) z - Q xi` and check `H = Q M Q^-1` with the `z` terms cancelling.
    #[test]
    fn matches_coordinate_transform_of_observer() {
        for p in 1..=4 {
            let c = cfg(p, 50.0, 2.0);
            let n = 3 * p;
            // Observer matrix M from the derivative function itself (linear, y = mu = 0).
            let mut m = DMatrix::zeros(n, n);
            let mut by = DVector::zeros(n);
            for k in 0..n {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                let s = ObserverState {
                    xi: e.chunks(3).map(|v| [v[0], v[1], v[2]]).collect(),
                };
                let d = observer_derivatives(&s, 0.0, 0.0, &c).unwrap().to_vec();
                m.set_column(k, &DVector::from_vec(d));
            }
            let dy = observer_derivatives(&ObserverState::zeros(p), 1.0, 0.0, &c)
                .unwrap()
                .to_vec();
            by.copy_from_slice(&dy);

            let mut q = DMatrix::<f64>::identity(n, n);
            for i in 0..p {
                for j in 0..i {
                    q[(3 * i + 2, 3 * j + 2)] = 1.0;
                }
            }
            let qinv = q.clone().try_inverse().unwrap();
            let h = &q * &m * &qinv;
            let s = build_aggregated_error_system(&c).unwrap();
            assert!((&h - &s.h).amax() <= 1e-9 * s.h.amax(), "p = {p}");

            // zeta' = (1 (x) A) z - Q M xi - Q b_y y + ...; with xi = Q^-1 (1 (x) z - zeta)
            // the z terms must cancel: (1 (x) A) - H (1 (x) I) - Q b_y c^T = 0.
            let mut ones_a = DMatrix::zeros(n, 3);
            let mut ones_i = DMatrix::zeros(n, 3);
            for i in 0..p {
                ones_a[(3 * i, 1)] = 1.0;
                ones_a[(3 * i + 1, 2)] = 1.0;
                for k in 0..3 {
                    ones_i[(3 * i + k, k)] = 1.0;
                }
            }
            let mut qby_c = DMatrix::zeros(n, 3);
            qby_c.set_column(0, &(&q * &by));
            let residual = ones_a - &s.h * ones_i - qby_c;
            assert!(residual.amax() <= 1e-9 * s.h.amax(), "p = {p}: {residual}");

            // Noise enters through y = z1 - n, i.e. as -Q b_y n, which equals +gamma n
            // only up to sign: gamma = Q b_y.
            let qby = &q * &by;
            assert!((&qby - &s.gamma).amax() <= 1e-12 * s.gamma.amax());
        }
    }

    #[test]
    fn noise_response_vanishes_at_dc_and_high_frequency() {
        let c = cfg(1, 1.0, 3.0);
        let r = noise_to_disturbance_error_response(&c, &[1e-6, 1e6], None).unwrap();
        let g = r.gains();
        assert!(g[0] < 1e-5, "{}", g[0]);
        assert!(g[1] < 1e-5, "{}", g[1]);
        for p in 1..=3 {
            let c = cfg(p, 3600.0, 3.0);
            let r = noise_to_disturbance_error_response(&c, &[1e9], None).unwrap();
            let low = noise_to_disturbance_error_response(&c, &[3600.0], None).unwrap();
            assert!(r.gains()[0] < 1e-3 * low.gains()[0]);
        }
    }

    #[test]
    fn lpf_composition_is_series_product() {
        let c = cfg(3, 3600.0, 3.0);
        let grid = crate::analysis::log_grid(1.0, 1e6, 50);
        let tau = 1e-3;
        let plain = noise_to_disturbance_error_response(&c, &grid, None).unwrap();
        let (noise, z1) = lpf_error_responses(&c, &grid, tau).unwrap();
        for (i, w) in grid.iter().enumerate() {
            let lpf = Complex::new(1.0, 0.0) / Complex::new(1.0, w * tau);
            let expect_n = plain.values[i] * lpf;
            let expect_z1 = plain.values[i] * (Complex::new(1.0, 0.0) - lpf);
            assert!((noise.values[i] - expect_n).norm() <= 1e-9 * expect_n.norm().max(1e-300));
            assert!((z1.values[i] - expect_z1).norm() <= 1e-9 * expect_z1.norm().max(1e-300));
        }
    }

    #[test]
    fn lpf_attenuates_more_with_larger_tau() {
        let c = cfg(1, 3600.0, 3.0);
        let grid = crate::analysis::log_grid(1.0, 1e6, 200);
        let taus = [1e-4, 1e-3, 1e-2];
        let curves: Vec<Vec<f64>> = taus
            .iter()
            .map(|&t| {
                noise_to_disturbance_error_response(&c, &grid, Some(t))
                    .unwrap()
                    .gains()
            })
            .collect();
        for (k, pair) in taus.windows(2).enumerate() {
            for (i, w) in grid.iter().enumerate() {
                if *w >= 1.0 / pair[0] {
                    assert!(curves[k + 1][i] <= curves[k][i] * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn peak_noise_gain_ordering() {
        let grid = crate::analysis::default_grid();
        let peaks: Vec<f64> = (1..=3)
            .map(|p| {
                noise_to_disturbance_error_response(&cfg(p, 3600.0, 3.0), &grid, None)
                    .unwrap()
                    .peak_gain()
            })
            .collect();
        assert!(peaks[2] <= peaks[1] && peaks[1] <= peaks[0], "{peaks:?}");
    }

    #[test]
    fn control_response_is_strictly_proper_without_proportional_term() {
        // Only the k^2 y feedthrough survives at high frequency.
        let ctrl = ControllerConfig::default();
        for p in 1..=3 {
            let r =
                control_from_measurement_response(&cfg(p, 3600.0, 3.0), &ctrl, &[1e10]).unwrap();
            assert_relative_eq!(r.gains()[0], ctrl.kp() / ctrl.b_hat, max_relative = 1e-3);
        }
    }

    #[test]
    fn sampled_response_tends_to_continuous() {
        let obs = cfg(2, 3600.0, 3.0);
        let ctrl = ControllerConfig::default();
        let grid = [10.0, 100.0];
        let cont = control_from_measurement_response(&obs, &ctrl, &grid)
            .unwrap()
            .gains();
        let fine = sampled_control_from_measurement_response(&obs, &ctrl, &grid, 1e-7)
            .unwrap()
            .gains();
        let coarse = sampled_control_from_measurement_response(&obs, &ctrl, &grid, 1e-4)
            .unwrap()
            .gains();
        for i in 0..2 {
            assert_relative_eq!(fine[i], cont[i], max_relative = 1e-4);
            assert!((coarse[i] - cont[i]).abs() >= (fine[i] - cont[i]).abs());
        }
    }
}
