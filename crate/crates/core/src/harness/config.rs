use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::observer::ObserverConfig;
use crate::plant::PlantParams;
use crate::signals::{DisturbanceProfile, NoiseConfig, ReferenceConfig};
use crate::simloop::{Scenario, SimConfig};

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    E1,
    E2a,
    E2b,
    E2c,
    E3,
    #[default]
    Custom,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentId::E1 => "e1",
            ExperimentId::E2a => "e2a",
            ExperimentId::E2b => "e2b",
            ExperimentId::E2c => "e2c",
            ExperimentId::E3 => "e3",
            ExperimentId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::config("id", format!("unknown experiment `{s}`")))
    }
}

/// Parameters a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Number of cascade levels.
    P,
    /// Top-level observer bandwidth.
    Lambda,
    /// First-level observer bandwidth; the top bandwidth follows from `p` and `alpha`.
    OmegaO1,
    K,
    Alpha,
    /// Output filter time constant; `0` disables the filter.
    LpfTau,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::P => "p",
            Axis::Lambda => "lambda",
            Axis::OmegaO1 => "omega_o1",
            Axis::K => "k",
            Axis::Alpha => "alpha",
            Axis::LpfTau => "lpf_tau",
        }
    }

    /// Write `value` into `scenario`. Structural axes (`p`, `alpha`) must be applied
    /// before `omega_o1`, which [`Axis::apply_all`] takes care of.
    fn apply(self, value: f64, scenario: &mut Scenario) -> Result<()> {
        match self {
            Axis::P => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= 64.0) {
                    return Err(Error::config(
                        "sweep.p",
                        format!("{value} is not a level count"),
                    ));
                }
                scenario.observer.levels = value as usize;
            }
            Axis::Lambda => scenario.observer.omega_top = value,
            Axis::OmegaO1 => scenario.observer = scenario.observer.clone().with_omega_bottom(value),
            Axis::K => scenario.controller.k = value,
            Axis::Alpha => scenario.observer.alpha = value,
            Axis::LpfTau => scenario.sim.lpf_tau = if value == 0.0 { None } else { Some(value) },
        }
        Ok(())
    }

    pub fn apply_all(assignments: &[(Axis, f64)], scenario: &mut Scenario) -> Result<()> {
        let mut ordered = assignments.to_vec();
        ordered.sort_by_key(|(a, _)| *a == Axis::OmegaO1);
        for (axis, value) in ordered {
            axis.apply(value, scenario)?;
        }
        Ok(())
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: Axis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodeSpec {
    pub enabled: bool,
    /// Cascade depths to plot.
    pub levels: Vec<usize>,
    /// Output filter time constants for the noise curves.
    pub lpf_taus: Vec<f64>,
    pub points: usize,
}

impl Default for BodeSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            levels: vec![1, 2, 3],
            lpf_taus: vec![1.0e-4, 1.0e-3, 1.0e-2],
            points: 400,
        }
    }
}

/// A complete experiment: base configuration, sweep axes and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub plant: PlantParams,
    pub reference: ReferenceConfig,
    pub disturbance: DisturbanceProfile,
    pub noise: NoiseConfig,
    pub observer: ObserverConfig,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    /// Axes of the cross product, outermost first.
    pub sweep: Vec<SweepAxis>,
    /// Noise seeds; every sweep point runs once per seed.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Window `[t0, t1)` for the ripple amplitude.
    pub ripple_window: [f64; 2],
    pub bode: BodeSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            id: ExperimentId::Custom,
            plant: s.plant,
            reference: s.reference,
            disturbance: s.disturbance,
            noise: s.noise,
            observer: s.observer,
            controller: s.controller,
            sim: s.sim,
            sweep: Vec::new(),
            seeds: (0..5).collect(),
            output_dir: PathBuf::from("out"),
            ripple_window: [0.7, 1.0],
            bode: BodeSpec::default(),
        }
    }
}

impl ExperimentSpec {
    /// Base scenario before sweep assignments, with the noise seed left at its
    /// configured value.
    pub fn scenario(&self) -> Scenario {
        Scenario {
            plant: self.plant,
            reference: self.reference.clone(),
            disturbance: self.disturbance.clone(),
            noise: self.noise.clone(),
            observer: self.observer.clone(),
            controller: self.controller.clone(),
            sim: self.sim.clone(),
        }
    }

    /// Every point of the sweep as a list of axis assignments, in cross-product order.
    pub fn sweep_points(&self) -> Vec<Vec<(Axis, f64)>> {
        let mut points = vec![Vec::new()];
        for axis in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((axis.name, *v));
                        p
                    })
                })
                .collect();
        }
        points
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for axis in &self.sweep {
            if !seen.insert(axis.name) {
                return Err(Error::config(
                    "sweep",
                    format!("duplicate axis `{}`", axis.name),
                ));
            }
            if axis.values.is_empty() {
                return Err(Error::config(format!("sweep.{}", axis.name), "no values"));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    format!("sweep.{}", axis.name),
                    "non-finite value",
                ));
            }
        }
        if seen.contains(&Axis::Lambda) && seen.contains(&Axis::OmegaO1) {
            return Err(Error::config(
                "sweep",
                "`lambda` and `omega_o1` set the same bandwidth",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::config("seeds", "duplicate seed"));
        }
        let [t0, t1] = self.ripple_window;
        if !(t0.is_finite() && t1.is_finite() && 0.0 <= t0 && t0 < t1 && t1 <= self.sim.duration) {
            return Err(Error::config(
                "ripple_window",
                "requires 0 <= t0 < t1 <= sim.duration",
            ));
        }
        for &tau in &self.bode.lpf_taus {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::config(
                    "bode.lpf_taus",
                    format!("{tau} is not a time constant"),
                ));
            }
        }
        if self.bode.levels.contains(&0) {
            return Err(Error::config("bode.levels", "levels start at 1"));
        }
        if self.bode.points < 2 {
            return Err(Error::config("bode.points", "need at least 2 points"));
        }
        self.scenario().validate()?;
        for point in self.sweep_points() {
            let mut sc = self.scenario();
            Axis::apply_all(&point, &mut sc)?;
            sc.validate()?;
        }
        Ok(())
    }

    /// Built-in spec for a named experiment with nominal parameters.
    pub fn builtin(id: ExperimentId) -> Self {
        let axis = |name, values: &[f64]| SweepAxis {
            name,
            values: values.to_vec(),
        };
        let levels = axis(Axis::P, &[1.0, 2.0, 3.0]);
        let mut spec = ExperimentSpec {
            id,
            output_dir: PathBuf::from(id.to_string()),
            ..ExperimentSpec::default()
        };
        spec.sweep = match id {
            ExperimentId::E1 | ExperimentId::Custom => vec![levels],
            ExperimentId::E2a => vec![
                levels,
                axis(Axis::Lambda, &[1200.0, 2400.0, 3600.0, 4800.0]),
            ],
            ExperimentId::E2b => vec![levels, axis(Axis::K, &[40.0, 80.0, 160.0])],
            ExperimentId::E2c => vec![
                axis(Axis::P, &[2.0, 3.0]),
                axis(Axis::Alpha, &[2.0, 3.0, 4.0]),
            ],
            ExperimentId::E3 => vec![
                axis(Axis::P, &[1.0, 3.0]),
                axis(Axis::LpfTau, &[0.0, 1.0e-3]),
            ],
        };
        if id == ExperimentId::E3 {
            // Ripple needs a steady segment: hold the reference and measure before
            // the disturbance starts.
            spec.reference.square_amplitude = 0.0;
        }
        spec
    }
}

/// Merge `overlay` into `base`: objects merge key by key, anything else replaces.
pub fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    serde_json::from_str(&text).map_err(|e| {
        Error::config(
            path.display().to_string(),
            format!("line {} column {}: {e}", e.line(), e.column()),
        )
    })
}

/// Load a JSON document and resolve its `include` entries (a path or a list of
/// paths, relative to the including file). Included documents are merged in
/// order and the including document is merged last.
pub fn resolve_includes(path: &Path) -> Result<Value> {
    resolve(path, &mut Vec::new())
}

fn resolve(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Value> {
    let canonical = path.canonicalize().map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::config(
            "include",
            format!("cycle through {}", path.display()),
        ));
    }
    if stack.len() >= MAX_INCLUDE_DEPTH {
        return Err(Error::config("include", "nesting too deep"));
    }
    let mut doc = read_json(path)?;
    let Value::Object(map) = &mut doc else {
        return Err(Error::config(
            path.display().to_string(),
            "top level must be an object",
        ));
    };
    let includes = match map.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(Error::config("include", "entries must be strings")),
            })
            .collect::<Result<_>>()?,
        Some(_) => {
            return Err(Error::config(
                "include",
                "must be a string or a list of strings",
            ))
        }
    };
    stack.push(canonical);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = Value::Object(Default::default());
    for inc in includes {
        deep_merge(&mut merged, resolve(&dir.join(inc), stack)?);
    }
    stack.pop();
    deep_merge(&mut merged, doc);
    Ok(merged)
}

/// Deserialize a resolved document; schema errors carry the field path.
pub fn spec_from_value(value: Value) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." {
                String::from("<root>")
            } else {
                path
            },
            e.into_inner().to_string(),
        )
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Read, resolve includes, fill defaults and validate.
pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    spec_from_value(resolve_includes(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_nominal_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let spec = load_spec(write(dir.path(), "a.json", "")).unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(spec.plant.v_in, 20.0);
        assert_eq!(spec.plant.inductance_l, 0.01);
        assert_eq!(spec.plant.capacitance_c, 0.001);
        assert_eq!(spec.plant.resistance_r, 50.0);
        assert_eq!(spec.sim.ts, 1e-4);
        assert_eq!(spec.observer.omega_top, 3600.0);
        assert_eq!(spec.observer.alpha, 3.0);
        assert_eq!(spec.controller.k, 80.0);
        assert_eq!(spec.observer.b_hat, 2e6);
        assert_eq!(spec.seeds.len(), 5);
    }

    #[test]
    fn alpha_below_one_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_spec(write(
            dir.path(),
            "a.json",
            r#"{"observer": {"alpha": 0.5}}"#,
        ))
        .unwrap_err();
        assert!(err.to_string().contains("alpha must exceed 1"), "{err}");
        assert!(err.is_config_error());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = spec_from_value(json!({"observer": {"alpha": "three"}})).unwrap_err();
        assert!(err.to_string().contains("observer.alpha"), "{err}");
        let err = spec_from_value(json!({"controller": {"kk": 1.0}})).unwrap_err();
        assert!(err.to_string().contains("controller"), "{err}");
        let err = spec_from_value(json!({"sweep": [{"name": "beta", "values": [1]}]})).unwrap_err();
        assert!(err.to_string().contains("sweep[0].name"), "{err}");
    }

    #[test]
    fn duplicate_axis_is_rejected() {
        let v = json!({"sweep": [{"name": "p", "values": [1, 2]}, {"name": "p", "values": [3]}]});
        let err = spec_from_value(v).unwrap_err();
        assert!(err.to_string().contains("duplicate axis"), "{err}");
    }

    #[test]
    fn conflicting_bandwidth_axes() {
        let v = json!({"sweep": [{"name": "lambda", "values": [1200]}, {"name": "omega_o1", "values": [400]}]});
        assert!(spec_from_value(v).is_err());
    }

    #[test]
    fn invalid_sweep_point_is_rejected() {
        let v = json!({"sweep": [{"name": "alpha", "values": [2, 0.9]}]});
        assert!(spec_from_value(v).is_err());
        let v = json!({"sweep": [{"name": "p", "values": [1.5]}]});
        assert!(spec_from_value(v).is_err());
    }

    #[test]
    fn includes_merge_deeply() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "base.json",
            r#"{"observer": {"alpha": 2.0, "levels": 2}, "seeds": [1, 2]}"#,
        );
        let p = write(
            dir.path(),
            "spec.json",
            r#"{"include": "base.json", "observer": {"levels": 3}, "id": "e1"}"#,
        );
        let spec = load_spec(p).unwrap();
        assert_eq!(spec.observer.alpha, 2.0);
        assert_eq!(spec.observer.levels, 3);
        assert_eq!(spec.seeds, vec![1, 2]);
        assert_eq!(spec.id, ExperimentId::E1);
    }

    #[test]
    fn include_cycle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.json", r#"{"include": "b.json"}"#);
        let b = write(dir.path(), "b.json", r#"{"include": "a.json"}"#);
        assert!(load_spec(b).unwrap_err().to_string().contains("cycle"));
    }

    #[test]
    fn cross_product_order() {
        let spec = ExperimentSpec::builtin(ExperimentId::E2b);
        let pts = spec.sweep_points();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![(Axis::P, 1.0), (Axis::K, 40.0)]);
        assert_eq!(pts[1], vec![(Axis::P, 1.0), (Axis::K, 80.0)]);
        assert_eq!(pts[8], vec![(Axis::P, 3.0), (Axis::K, 160.0)]);
    }

    #[test]
    fn builtins_validate() {
        for id in [
            ExperimentId::E1,
            ExperimentId::E2a,
            ExperimentId::E2b,
            ExperimentId::E2c,
            ExperimentId::E3,
        ] {
            ExperimentSpec::builtin(id).validate().unwrap();
        }
        assert_eq!(
            ExperimentSpec::builtin(ExperimentId::E1)
                .sweep_points()
                .len(),
            3
        );
        assert_eq!("E2c".parse::<ExperimentId>().unwrap(), ExperimentId::E2c);
        assert!("e9".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn omega_o1_applies_after_structure() {
        let mut sc = Scenario::default();
        Axis::apply_all(
            &[(Axis::OmegaO1, 400.0), (Axis::P, 2.0), (Axis::Alpha, 4.0)],
            &mut sc,
        )
        .unwrap();
        assert_eq!(sc.observer.levels, 2);
        assert_eq!(sc.observer.omega_top, 1600.0);
        Axis::apply_all(&[(Axis::LpfTau, 0.0)], &mut sc).unwrap();
        assert_eq!(sc.sim.lpf_tau, None);
    }

    #[test]
    fn round_trip() {
        let spec = ExperimentSpec::builtin(ExperimentId::E2a);
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(spec_from_value(v).unwrap(), spec);
    }
}
