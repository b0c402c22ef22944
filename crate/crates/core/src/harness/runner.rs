use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use super::bode::emit_bode;
use super::config::{Axis, ExperimentSpec};
use crate::error::{Error, Result};
use crate::metrics::CriteriaReport;
use crate::simloop::{run_until_divergence, Scenario, SimRecord};

/// One run of the cross product.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub run_id: String,
    /// Index of the sweep point; runs sharing it differ only in the seed.
    pub point: usize,
    pub assignments: Vec<(Axis, f64)>,
    pub seed: u64,
    pub scenario: Scenario,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub point: usize,
    pub assignments: Vec<(Axis, f64)>,
    pub seed: u64,
    /// `None` when a diverged run left too few samples to evaluate.
    pub criteria: Option<CriteriaReport>,
    pub diverged: bool,
}

/// Seed-averaged criteria of one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSummary {
    pub assignments: Vec<(Axis, f64)>,
    pub runs: usize,
    pub diverged_runs: usize,
    /// Mean over the runs that did not diverge.
    pub mean: Option<CriteriaReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub runs: Vec<RunResult>,
    pub points: Vec<PointSummary>,
}

impl ExperimentSummary {
    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.diverged)
    }

    /// Summary of the sweep point matching all given assignments.
    pub fn point(&self, assignments: &[(Axis, f64)]) -> Option<&PointSummary> {
        self.points
            .iter()
            .find(|p| assignments.iter().all(|a| p.assignments.contains(a)))
    }
}

/// Criteria file contents. Values a diverged run cannot provide are `null`.
#[derive(Clone, Copy, Debug, Serialize)]
struct CriteriaJson {
    iae: Option<f64>,
    effort: Option<f64>,
    jitter: Option<f64>,
    saturation_fraction: Option<f64>,
    ripple_amplitude: Option<f64>,
    diverged: bool,
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

fn run_id(assignments: &[(Axis, f64)], seed: u64) -> String {
    let mut parts: Vec<String> = assignments
        .iter()
        .map(|(a, v)| format!("{}-{}", a.name(), format_value(*v)))
        .collect();
    if parts.is_empty() {
        parts.push("base".into());
    }
    parts.push(format!("seed-{seed}"));
    parts.join("_")
}

/// Expand the cross product of sweep points and seeds, point-major.
pub fn plan_runs(spec: &ExperimentSpec) -> Result<Vec<RunPlan>> {
    let mut plans = Vec::new();
    for (point, assignments) in spec.sweep_points().into_iter().enumerate() {
        for &seed in &spec.seeds {
            let mut scenario = spec.scenario();
            Axis::apply_all(&assignments, &mut scenario)?;
            scenario.noise.seed = seed;
            plans.push(RunPlan {
                run_id: run_id(&assignments, seed),
                point,
                assignments: assignments.clone(),
                seed,
                scenario,
            });
        }
    }
    Ok(plans)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Write a time series with the canonical column order.
pub fn write_time_series(path: &Path, records: &[SimRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if records.is_empty() {
        w.write_record([
            "t",
            "v_r",
            "v_o",
            "y_o",
            "e",
            "y_meas",
            "duty",
            "duty_unsat",
            "d",
            "z1_hat",
            "z2_hat",
            "z3_hat",
            "f_star_truth",
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(plan: &RunPlan, ripple_window: (f64, f64), runs_dir: &Path) -> Result<RunResult> {
    let (out, divergence) = run_until_divergence(&plan.scenario)?;
    let diverged = divergence.is_some();
    if let Some(d) = divergence {
        log::warn!("run {} diverged at t = {}", plan.run_id, d.t);
    }
    let criteria = match CriteriaReport::from_records(&out.records, ripple_window) {
        Ok(c) => Some(c),
        Err(e) if diverged => {
            log::debug!("run {}: no criteria ({e})", plan.run_id);
            None
        }
        Err(e) => return Err(e),
    };
    write_time_series(&runs_dir.join(format!("{}.csv", plan.run_id)), &out.records)?;
    let json = CriteriaJson {
        iae: criteria.map(|c| c.iae),
        effort: criteria.map(|c| c.effort),
        jitter: criteria.map(|c| c.jitter),
        saturation_fraction: criteria.map(|c| c.saturation_fraction),
        ripple_amplitude: criteria.map(|c| c.ripple_amplitude),
        diverged,
    };
    write_json(&runs_dir.join(format!("{}.json", plan.run_id)), &json)?;
    Ok(RunResult {
        run_id: plan.run_id.clone(),
        point: plan.point,
        assignments: plan.assignments.clone(),
        seed: plan.seed,
        criteria,
        diverged,
    })
}

fn summarize(spec: &ExperimentSpec, runs: &[RunResult]) -> Vec<PointSummary> {
    spec.sweep_points()
        .into_iter()
        .enumerate()
        .map(|(point, assignments)| {
            let members: Vec<&RunResult> = runs.iter().filter(|r| r.point == point).collect();
            let ok: Vec<CriteriaReport> = members
                .iter()
                .filter(|r| !r.diverged)
                .filter_map(|r| r.criteria)
                .collect();
            PointSummary {
                assignments,
                runs: members.len(),
                diverged_runs: members.iter().filter(|r| r.diverged).count(),
                mean: CriteriaReport::mean(&ok),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

fn write_aggregates(
    spec: &ExperimentSpec,
    summary: &ExperimentSummary,
    out_dir: &Path,
) -> Result<()> {
    let axes: Vec<Axis> = spec.sweep.iter().map(|a| a.name).collect();
    let criteria_cols = [
        "iae",
        "effort",
        "jitter",
        "saturation_fraction",
        "ripple_amplitude",
    ];
    let cells = |c: Option<CriteriaReport>| -> Vec<String> {
        vec![
            opt(c.map(|c| c.iae)),
            opt(c.map(|c| c.effort)),
            opt(c.map(|c| c.jitter)),
            opt(c.map(|c| c.saturation_fraction)),
            opt(c.map(|c| c.ripple_amplitude)),
        ]
    };

    let path = out_dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut header = vec!["run_id".to_string()];
    header.extend(axes.iter().map(|a| a.name().to_string()));
    header.push("seed".into());
    header.extend(criteria_cols.iter().map(|s| s.to_string()));
    header.push("diverged".into());
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for r in &summary.runs {
        let mut row = vec![r.run_id.clone()];
        row.extend(r.assignments.iter().map(|(_, v)| format_value(*v)));
        row.push(r.seed.to_string());
        row.extend(cells(r.criteria));
        row.push(r.diverged.to_string());
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut header: Vec<String> = axes.iter().map(|a| a.name().to_string()).collect();
    header.extend(["runs".to_string(), "diverged_runs".to_string()]);
    header.extend(criteria_cols.iter().map(|s| format!("mean_{s}")));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for p in &summary.points {
        let mut row: Vec<String> = p
            .assignments
            .iter()
            .map(|(_, v)| format_value(*v))
            .collect();
        row.push(p.runs.to_string());
        row.push(p.diverged_runs.to_string());
        row.extend(cells(p.mean));
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[derive(Serialize)]
struct Meta {
    created_unix_s: u64,
    version: &'static str,
    jobs: usize,
    runs: usize,
}

/// Run every point of the spec's cross product for every seed and write the
/// results below `out_dir`:
///
/// - `runs/<run_id>.csv` and `runs/<run_id>.json`: time series and criteria;
/// - `aggregate.csv`: one row per run; `summary.csv`: seed means per sweep point;
/// - `spec.json`: the resolved spec; `bode/`: frequency responses (if enabled);
/// - `meta.json`: the only file that depends on wall-clock time.
///
/// `jobs` bounds the worker threads (`None` uses all cores). Results never depend
/// on it: each run owns its state and rows are ordered by plan, not completion.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<ExperimentSummary> {
    spec.validate()?;
    for w in spec.scenario().warnings() {
        log::warn!("{w}");
    }
    let runs_dir = out_dir.join("runs");
    create_dir(&runs_dir)?;
    let plans = plan_runs(spec)?;
    let window = (spec.ripple_window[0], spec.ripple_window[1]);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let runs = pool.install(|| {
        plans
            .par_iter()
            .map(|p| execute(p, window, &runs_dir))
            .collect::<Result<Vec<_>>>()
    })?;

    let summary = ExperimentSummary {
        points: summarize(spec, &runs),
        runs,
    };
    write_aggregates(spec, &summary, out_dir)?;
    write_json(&out_dir.join("spec.json"), spec)?;
    if spec.bode.enabled {
        emit_bode(spec, &out_dir.join("bode"), &spec.bode.lpf_taus)?;
    }
    let meta = Meta {
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
        jobs: pool.current_num_threads(),
        runs: summary.runs.len(),
    };
    write_json(&out_dir.join("meta.json"), &meta)?;
    log::info!(
        "{}: {} runs written to {}",
        spec.id,
        summary.runs.len(),
        out_dir.display()
    );
    Ok(summary)
}

/// Files below `dir` relative to it, sorted, for comparing output trees.
pub fn list_outputs(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else if let Ok(rel) = path.strip_prefix(base) {
                out.push(rel.to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Write a plain-text table of the point summaries.
pub fn print_summary(summary: &ExperimentSummary, mut w: impl Write) -> std::io::Result<()> {
    for p in &summary.points {
        let label: Vec<String> = p
            .assignments
            .iter()
            .map(|(a, v)| format!("{}={}", a.name(), format_value(*v)))
            .collect();
        let label = if label.is_empty() {
            "base".to_string()
        } else {
            label.join(" ")
        };
        match p.mean {
            Some(m) => writeln!(
                w,
                "{label:<28} iae={:.5} effort={:.4} jitter={:.3} sat={:.4} ripple={:.5}{}",
                m.iae,
                m.effort,
                m.jitter,
                m.saturation_fraction,
                m.ripple_amplitude,
                if p.diverged_runs > 0 {
                    format!(" ({} of {} diverged)", p.diverged_runs, p.runs)
                } else {
                    String::new()
                }
            )?,
            None => writeln!(w, "{label:<28} all {} runs diverged", p.runs)?,
        }
    }
    Ok(())
}
