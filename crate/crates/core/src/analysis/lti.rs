use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// State-space quadruple `x' = A x + B u`, `y = C x + D u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.nrows(),
            });
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.ncols(),
            });
        }
        if d.nrows() != c.nrows() {
            return Err(Error::DimensionMismatch {
                expected: c.nrows(),
                got: d.nrows(),
            });
        }
        if d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch {
                expected: b.ncols(),
                got: d.ncols(),
            });
        }
        let finite = [&a, &b, &c, &d]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("state-space matrices"));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Transfer matrix `C (jw I - A)^-1 B + D` at one frequency.
    pub fn transfer(&self, omega: f64) -> Result<DMatrix<Complex<f64>>> {
        let n = self.states();
        let to_c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
        let mut resolvent = -to_c(&self.a);
        for i in 0..n {
            resolvent[(i, i)] += Complex::new(0.0, omega);
        }
        let x = resolvent
            .lu()
            .solve(&to_c(&self.b))
            .ok_or(Error::SingularResolvent { omega })?;
        Ok(to_c(&self.c) * x + to_c(&self.d))
    }

    /// Scalar channel `(output, input)` over a grid, evaluated in parallel.
    pub fn channel_response(
        &self,
        output: usize,
        input: usize,
        omegas: &[f64],
    ) -> Result<FrequencyResponse> {
        if output >= self.outputs() {
            return Err(Error::OutOfRange {
                index: output,
                max: self.outputs(),
            });
        }
        if input >= self.inputs() {
            return Err(Error::OutOfRange {
                index: input,
                max: self.inputs(),
            });
        }
        let values = omegas
            .par_iter()
            .map(|&w| self.transfer(w).map(|g| g[(output, input)]))
            .collect::<Result<Vec<_>>>()?;
        FrequencyResponse::from_complex(omegas.to_vec(), values)
    }
}

/// Sampled frequency response.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyResponse {
    /// Strictly increasing grid [rad/s].
    pub omegas: Vec<f64>,
    pub magnitudes_db: Vec<f64>,
    pub phases_deg: Vec<f64>,
    #[serde(skip)]
    pub values: Vec<Complex<f64>>,
}

impl FrequencyResponse {
    pub fn from_complex(omegas: Vec<f64>, values: Vec<Complex<f64>>) -> Result<Self> {
        validate_grid(&omegas)?;
        if values.len() != omegas.len() {
            return Err(Error::DimensionMismatch {
                expected: omegas.len(),
                got: values.len(),
            });
        }
        let magnitudes_db: Vec<f64> = values.iter().map(|v| 20.0 * v.norm().log10()).collect();
        if magnitudes_db
            .iter()
            .any(|m| m.is_nan() || *m == f64::INFINITY)
        {
            return Err(Error::NonFinite("frequency response magnitude"));
        }
        let phases_deg = values.iter().map(|v| v.arg().to_degrees()).collect();
        Ok(Self {
            omegas,
            magnitudes_db,
            phases_deg,
            values,
        })
    }

    /// Linear gains `|G(jw)|`.
    pub fn gains(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn peak_gain(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

pub(crate) fn validate_grid(omegas: &[f64]) -> Result<()> {
    if omegas.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(
            "omegas",
            "grid entries must be finite and >= 0",
        ));
    }
    if omegas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("omegas", "grid must be strictly increasing"));
    }
    Ok(())
}

/// `n` points log-spaced over `[start, end]`.
pub fn log_grid(start: f64, end: f64, n: usize) -> Vec<f64> {
    assert!(start > 0.0 && end > start && n >= 2, "invalid log grid");
    let (a, b) = (start.log10(), end.log10());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                end
            } else {
                10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}
