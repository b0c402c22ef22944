//! Exogenous signals: the reference trajectory, the external disturbance
//! profile and bounded sensor noise.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Filtered and biased square wave.
///
/// The square toggles between `+A` and `-A` (first half-period positive) and is
/// passed through `num / (den[0] s^2 + den[1] s + den[2])` before the bias is
/// added. With the defaults the output swings between 1 V and 13 V.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub bias: f64,
    pub square_amplitude: f64,
    pub period: f64,
    /// Interpret `square_amplitude` as peak-to-peak (halves the swing).
    pub amplitude_is_peak_to_peak: bool,
    pub filter_num: f64,
    /// Denominator coefficients ordered `s^2, s^1, s^0`.
    pub filter_den: [f64; 3],
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            bias: 7.0,
            square_amplitude: 6.0,
            period: 1.0,
            amplitude_is_peak_to_peak: false,
            filter_num: 4.0,
            filter_den: [0.025, 0.6, 4.0],
        }
    }
}

impl ReferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid("reference.period", "must be finite and > 0"));
        }
        for (name, v) in [
            ("reference.bias", self.bias),
            ("reference.square_amplitude", self.square_amplitude),
            ("reference.filter_num", self.filter_num),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        let [a2, a1, a0] = self.filter_den;
        let same_sign = (a2 > 0.0 && a1 > 0.0 && a0 > 0.0) || (a2 < 0.0 && a1 < 0.0 && a0 < 0.0);
        if !same_sign || ![a2, a1, a0].iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(
                "reference.filter_den",
                "second-order filter must be Hurwitz (all coefficients non-zero with equal sign)",
            ));
        }
        let dc = self.filter_num / a0;
        if (dc - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "reference.filter_num",
                format!("filter must have unit DC gain, got {dc}"),
            ));
        }
        Ok(())
    }

    /// Half swing of the square before filtering.
    pub fn half_swing(&self) -> f64 {
        if self.amplitude_is_peak_to_peak {
            0.5 * self.square_amplitude
        } else {
            self.square_amplitude
        }
    }
}

/// Reference value with its first two derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReferenceSample {
    pub v_r: f64,
    pub v_r_dot: f64,
    pub v_r_ddot: f64,
}

/// Exact evaluator of the filtered square wave.
///
/// The filter is realised in controllable canonical form with output `x`:
/// `x'' = (num u - den1 x' - den0 x) / den2`. Because the input is piecewise
/// constant the state is propagated in closed form with the matrix exponential,
/// so the returned derivatives are exact and do not depend on any step size.
#[derive(Clone, Debug)]
pub struct Reference {
    cfg: ReferenceConfig,
    system: Matrix2<f64>,
    half_period_transition: Matrix2<f64>,
}

impl Reference {
    pub fn new(cfg: &ReferenceConfig) -> Result<Self> {
        cfg.validate()?;
        let [a2, a1, a0] = cfg.filter_den;
        let system = Matrix2::new(0.0, 1.0, -a0 / a2, -a1 / a2);
        let half_period_transition = (system * (0.5 * cfg.period)).exp();
        Ok(Self {
            cfg: cfg.clone(),
            system,
            half_period_transition,
        })
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.cfg
    }

    fn square(&self, half_period_index: u64) -> f64 {
        let a = self.cfg.half_swing();
        if half_period_index.is_multiple_of(2) {
            a
        } else {
            -a
        }
    }

    fn steady_state(&self, u: f64) -> Vector2<f64> {
        Vector2::new(self.cfg.filter_num / self.cfg.filter_den[2] * u, 0.0)
    }

    /// Reference and its derivatives at `t >= 0` (zero filter state at `t = 0`).
    pub fn at(&self, t: f64) -> ReferenceSample {
        let t = t.max(0.0);
        let half = 0.5 * self.cfg.period;
        let n = (t / half).floor() as u64;
        let mut x = Vector2::zeros();
        for k in 0..n {
            let xs = self.steady_state(self.square(k));
            x = xs + self.half_period_transition * (x - xs);
        }
        let u = self.square(n);
        let xs = self.steady_state(u);
        let tau = t - n as f64 * half;
        if tau > 0.0 {
            x = xs + (self.system * tau).exp() * (x - xs);
        }
        let [a2, a1, a0] = self.cfg.filter_den;
        ReferenceSample {
            v_r: self.cfg.bias + x[0],
            v_r_dot: x[1],
            v_r_ddot: (self.cfg.filter_num * u - a1 * x[1] - a0 * x[0]) / a2,
        }
    }

    /// Bounds `r_vr` on the reference and its derivatives up to third order over
    /// `[0, horizon]`.
    ///
    /// Orders 0-2 are sampled at `dt`. The third derivative is bounded from the
    /// filter state equation: away from edges `x''' = -(den1 x'' + den0 x') / den2`.
    pub fn derivative_bounds(&self, horizon: f64, dt: f64) -> [f64; 4] {
        let mut m = [0.0f64; 3];
        let n = (horizon / dt).ceil() as usize;
        for i in 0..=n {
            let s = self.at(i as f64 * dt);
            m[0] = m[0].max(s.v_r.abs());
            m[1] = m[1].max(s.v_r_dot.abs());
            m[2] = m[2].max(s.v_r_ddot.abs());
        }
        let [a2, a1, a0] = self.cfg.filter_den;
        let third = (a1.abs() * m[2] + a0.abs() * m[1]) / a2.abs();
        [m[0], m[1], m[2], third]
    }
}

/// Convenience wrapper around [`Reference::at`].
pub fn reference_at(t: f64, cfg: &ReferenceConfig) -> Result<ReferenceSample> {
    Ok(Reference::new(cfg)?.at(t))
}

/// Waveform of one disturbance segment. Times inside a segment are measured
/// from the segment start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceKind {
    Constant {
        value: f64,
    },
    /// `before` until `at` seconds into the segment, `after` from then on.
    Step {
        before: f64,
        after: f64,
        at: f64,
    },
    Sine {
        amplitude: f64,
        frequency_hz: f64,
        #[serde(default)]
        phase_rad: f64,
        #[serde(default)]
        offset: f64,
    },
    Ramp {
        start: f64,
        slope: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSegment {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(flatten)]
    pub kind: DisturbanceKind,
}

/// A smooth piece of the disturbance, used to evaluate `d` over an integration
/// sub-interval without crossing a discontinuity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Piece {
    Zero,
    Constant(f64),
    Sine {
        t0: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
        offset: f64,
    },
    Ramp {
        t0: f64,
        start: f64,
        slope: f64,
    },
}

impl Piece {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Piece::Zero => 0.0,
            Piece::Constant(v) => v,
            Piece::Sine {
                t0,
                amplitude,
                omega,
                phase,
                offset,
            } => offset + amplitude * (omega * (t - t0) + phase).sin(),
            Piece::Ramp { t0, start, slope } => start + slope * (t - t0),
        }
    }
}

impl DisturbanceSegment {
    fn piece_at(&self, t: f64) -> Piece {
        match self.kind {
            DisturbanceKind::Constant { value } => Piece::Constant(value),
            DisturbanceKind::Step { before, after, at } => {
                if t - self.t_start < at {
                    Piece::Constant(before)
                } else {
                    Piece::Constant(after)
                }
            }
            DisturbanceKind::Sine {
                amplitude,
                frequency_hz,
                phase_rad,
                offset,
            } => Piece::Sine {
                t0: self.t_start,
                amplitude,
                omega: 2.0 * std::f64::consts::PI * frequency_hz,
                phase: phase_rad,
                offset,
            },
            DisturbanceKind::Ramp { start, slope } => Piece::Ramp {
                t0: self.t_start,
                start,
                slope,
            },
        }
    }

    /// `(sup |d|, sup |d'|)` over the segment, away from internal jumps.
    pub fn bounds(&self) -> (f64, f64) {
        let len = self.t_end - self.t_start;
        match self.kind {
            DisturbanceKind::Constant { value } => (value.abs(), 0.0),
            DisturbanceKind::Step { before, after, .. } => (before.abs().max(after.abs()), 0.0),
            DisturbanceKind::Sine {
                amplitude,
                frequency_hz,
                offset,
                ..
            } => (
                offset.abs() + amplitude.abs(),
                amplitude.abs() * 2.0 * std::f64::consts::PI * frequency_hz.abs(),
            ),
            DisturbanceKind::Ramp { start, slope } => {
                (start.abs().max((start + slope * len).abs()), slope.abs())
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self.kind {
            DisturbanceKind::Constant { value } => vec![value],
            DisturbanceKind::Step { before, after, at } => vec![before, after, at],
            DisturbanceKind::Sine {
                amplitude,
                frequency_hz,
                phase_rad,
                offset,
            } => vec![amplitude, frequency_hz, phase_rad, offset],
            DisturbanceKind::Ramp { start, slope } => vec![start, slope],
        }
    }
}

/// Piecewise external disturbance; zero outside all segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceProfile {
    pub segments: Vec<DisturbanceSegment>,
    /// Bound on `|d|`.
    pub r_d: f64,
    /// Bound on `|d'|` away from discontinuities.
    pub r_d_dot: f64,
}

impl Default for DisturbanceProfile {
    /// Zero on `[0, 1)`, a 0.2 step on `[1, 2)` and a 10 Hz sine of amplitude 0.2
    /// on `[2, 3)`.
    fn default() -> Self {
        Self {
            segments: vec![
                DisturbanceSegment {
                    t_start: 1.0,
                    t_end: 2.0,
                    kind: DisturbanceKind::Constant { value: 0.2 },
                },
                DisturbanceSegment {
                    t_start: 2.0,
                    t_end: 3.0,
                    kind: DisturbanceKind::Sine {
                        amplitude: 0.2,
                        frequency_hz: 10.0,
                        phase_rad: 0.0,
                        offset: 0.0,
                    },
                },
            ],
            r_d: 1.0,
            r_d_dot: 100.0,
        }
    }
}

impl DisturbanceProfile {
    pub fn none() -> Self {
        Self {
            segments: Vec::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_end = f64::NEG_INFINITY;
        for (i, seg) in self.segments.iter().enumerate() {
            let path = format!("disturbance.segments[{i}]");
            if !(seg.t_start.is_finite() && seg.t_end.is_finite())
                || seg.values().iter().any(|v| !v.is_finite())
            {
                return Err(Error::config(path, "non-finite value"));
            }
            if seg.t_start < 0.0 || seg.t_end <= seg.t_start {
                return Err(Error::config(path, "requires 0 <= t_start < t_end"));
            }
            if seg.t_start < prev_end {
                return Err(Error::config(
                    path,
                    "segments overlap or are not time-ordered",
                ));
            }
            if let DisturbanceKind::Step { at, .. } = seg.kind {
                if at < 0.0 || at > seg.t_end - seg.t_start {
                    return Err(Error::config(path, "step time outside segment"));
                }
            }
            let (d, d_dot) = seg.bounds();
            if d > self.r_d {
                return Err(Error::config(
                    path,
                    format!("|d| = {d} exceeds r_d = {}", self.r_d),
                ));
            }
            if d_dot > self.r_d_dot {
                return Err(Error::config(
                    path,
                    format!("|d'| = {d_dot} exceeds r_d_dot = {}", self.r_d_dot),
                ));
            }
            prev_end = seg.t_end;
        }
        Ok(())
    }

    fn segment_at(&self, t: f64) -> Option<&DisturbanceSegment> {
        self.segments.iter().find(|s| s.t_start <= t && t < s.t_end)
    }

    /// Smooth piece active at `t`.
    pub fn piece_at(&self, t: f64) -> Piece {
        self.segment_at(t).map_or(Piece::Zero, |s| s.piece_at(t))
    }

    pub fn at(&self, t: f64) -> f64 {
        self.piece_at(t).eval(t)
    }

    /// Times at which the profile jumps.
    pub fn discontinuities(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut push = |t: f64, left: f64, right: f64| {
            if (left - right).abs() > 1e-12 && out.last() != Some(&t) {
                out.push(t);
            }
        };
        for seg in &self.segments {
            let start = seg.piece_at(seg.t_start).eval(seg.t_start);
            push(seg.t_start, self.at_left(seg.t_start), start);
            if let DisturbanceKind::Step { before, after, at } = seg.kind {
                push(seg.t_start + at, before, after);
            }
            let end = seg.piece_at(seg.t_start).eval(seg.t_end);
            let end = match seg.kind {
                DisturbanceKind::Step { after, .. } => after,
                _ => end,
            };
            push(seg.t_end, end, self.at(seg.t_end));
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn at_left(&self, t: f64) -> f64 {
        match self.segments.iter().find(|s| s.t_start < t && t <= s.t_end) {
            Some(seg) => match seg.kind {
                DisturbanceKind::Step { after, .. } => after,
                _ => seg.piece_at(seg.t_start).eval(t),
            },
            None => 0.0,
        }
    }

    /// Shortest interval between consecutive discontinuities, if there are at least two.
    pub fn min_dwell(&self) -> Option<f64> {
        self.discontinuities()
            .windows(2)
            .map(|w| w[1] - w[0])
            .min_by(f64::total_cmp)
    }
}

pub fn disturbance_at(t: f64, profile: &DisturbanceProfile) -> f64 {
    profile.at(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Uniform,
    /// Gaussian with `sigma = amplitude / 3`, resampled until `|n| <= amplitude`.
    TruncatedGaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Bound `r_n` [V].
    pub amplitude: f64,
    pub distribution: NoiseDistribution,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.02,
            distribution: NoiseDistribution::Uniform,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("noise.amplitude", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Seeded source of bounded measurement noise, one sample per call.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    cfg: NoiseConfig,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(cfg: &NoiseConfig) -> Result<Self> {
        cfg.validate()?;
        let normal = match cfg.distribution {
            NoiseDistribution::TruncatedGaussian if cfg.amplitude > 0.0 => Some(
                Normal::new(0.0, cfg.amplitude / 3.0)
                    .map_err(|e| Error::invalid("noise.amplitude", e.to_string()))?,
            ),
            _ => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            normal,
        })
    }

    pub fn sample(&mut self) -> f64 {
        let r = self.cfg.amplitude;
        if r == 0.0 {
            return 0.0;
        }
        match (&self.cfg.distribution, &self.normal) {
            (NoiseDistribution::TruncatedGaussian, Some(normal)) => loop {
                let n = normal.sample(&mut self.rng);
                if n.abs() <= r {
                    break n;
                }
            },
            _ => self.rng.random_range(-r..=r),
        }
    }
}

pub fn noise_sample(source: &mut NoiseSource) -> f64 {
    source.sample()
}
