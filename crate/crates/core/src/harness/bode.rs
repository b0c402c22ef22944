use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentSpec;
use crate::analysis::{
    control_from_measurement_response, log_grid, noise_to_disturbance_error_response,
    FrequencyResponse,
};
use crate::error::{Error, Result};
use crate::observer::ObserverConfig;

#[derive(Serialize)]
struct Markers {
    /// Controller bandwidth [rad/s].
    k: f64,
    /// Sampling frequency `2 pi / Ts` [rad/s].
    omega_s: f64,
    lpf_taus: Vec<f64>,
}

#[derive(Serialize)]
struct BodeRow {
    omega_rad_s: f64,
    magnitude_db: f64,
    phase_deg: f64,
}

pub fn write_bode_csv(path: &Path, response: &FrequencyResponse) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for i in 0..response.len() {
        w.serialize(BodeRow {
            omega_rad_s: response.omegas[i],
            magnitude_db: response.magnitudes_db[i],
            phase_deg: response.phases_deg[i],
        })
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the control-from-measurement and noise-to-estimate-error curves for
/// every cascade depth in `spec.bode.levels`:
///
/// - `g_uy_p<p>.csv`
/// - `g_zn_p<p>.csv`, plus `g_zn_p<p>_tau<tau>.csv` for each filter time constant
/// - `markers.json` with `k` and `omega_s`
///
/// The spec's `lambda`, `alpha`, `b_hat` and controller are used for every depth.
pub fn emit_bode(spec: &ExperimentSpec, dir: &Path, lpf_taus: &[f64]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = log_grid(1.0, 1.0e6, spec.bode.points);
    let mut written = Vec::new();
    for &p in &spec.bode.levels {
        let obs = ObserverConfig {
            levels: p,
            ..spec.observer.clone()
        };
        let path = dir.join(format!("g_uy_p{p}.csv"));
        write_bode_csv(
            &path,
            &control_from_measurement_response(&obs, &spec.controller, &grid)?,
        )?;
        written.push(path);
        let path = dir.join(format!("g_zn_p{p}.csv"));
        write_bode_csv(
            &path,
            &noise_to_disturbance_error_response(&obs, &grid, None)?,
        )?;
        written.push(path);
        for &tau in lpf_taus {
            let path = dir.join(format!("g_zn_p{p}_tau{tau}.csv"));
            write_bode_csv(
                &path,
                &noise_to_disturbance_error_response(&obs, &grid, Some(tau))?,
            )?;
            written.push(path);
        }
    }
    let markers = Markers {
        k: spec.controller.k,
        omega_s: 2.0 * std::f64::consts::PI / spec.sim.ts,
        lpf_taus: lpf_taus.to_vec(),
    };
    let path = dir.join("markers.json");
    let text = serde_json::to_string_pretty(&markers)
        .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
