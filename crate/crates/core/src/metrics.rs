//! Integral quality criteria and the steady-state ripple measure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simloop::SimRecord;

fn check_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    Ok(())
}

/// Trapezoidal `integral |x| dt` over `(t, x)` samples.
pub fn integral_abs(samples: &[(f64, f64)]) -> Result<f64> {
    check_len(samples.len())?;
    Ok(samples
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1.abs() + w[1].1.abs()))
        .sum())
}

/// Discrete total variation `sum |x_{i+1} - x_i|`, the sampled `integral |x'| dt`.
pub fn total_variation(samples: &[(f64, f64)]) -> Result<f64> {
    check_len(samples.len())?;
    Ok(samples.windows(2).map(|w| (w[1].1 - w[0].1).abs()).sum())
}

/// Half peak-to-peak of `e` over `t0 <= t < t1`. Mean removal does not change
/// the range, so this is `(max - min) / 2`.
pub fn ripple_amplitude(samples: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut count = 0usize;
    for &(_, e) in samples.iter().filter(|(t, _)| *t >= t0 && *t < t1) {
        lo = lo.min(e);
        hi = hi.max(e);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyWindow { t0, t1 });
    }
    Ok(0.5 * (hi - lo))
}

/// Per-run criteria.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub iae: f64,
    pub effort: f64,
    pub jitter: f64,
    pub saturation_fraction: f64,
    pub ripple_amplitude: f64,
}

impl CriteriaReport {
    /// Criteria over a whole run. The ripple uses the true error on `ripple_window`.
    pub fn from_records(records: &[SimRecord], ripple_window: (f64, f64)) -> Result<Self> {
        check_len(records.len())?;
        let e: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.e)).collect();
        let mu: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.duty)).collect();
        let saturated = records.iter().filter(|r| r.duty != r.duty_unsat).count();
        Ok(Self {
            iae: integral_abs(&e)?,
            effort: integral_abs(&mu)?,
            jitter: total_variation(&mu)?,
            saturation_fraction: saturated as f64 / records.len() as f64,
            ripple_amplitude: ripple_amplitude(&e, ripple_window)?,
        })
    }

    /// Element-wise mean.
    pub fn mean(reports: &[CriteriaReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mut m = Self::default();
        for r in reports {
            m.iae += r.iae / n;
            m.effort += r.effort / n;
            m.jitter += r.jitter / n;
            m.saturation_fraction += r.saturation_fraction / n;
            m.ripple_amplitude += r.ripple_amplitude / n;
        }
        Some(m)
    }
}
