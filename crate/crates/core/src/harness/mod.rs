//! Experiment specs, sweeps and result files.
//!
//! A spec is a JSON document with the nominal configuration as defaults, an
//! optional `include` list for shared parameters, sweep axes and seeds. Running
//! it produces per-run time series and criteria, aggregate tables and Bode data.

mod bode;
mod config;
mod runner;

pub use bode::{emit_bode, write_bode_csv};
pub use config::{
    deep_merge, load_spec, resolve_includes, spec_from_value, Axis, BodeSpec, ExperimentId,
    ExperimentSpec, SweepAxis,
};
pub use runner::{
    list_outputs, plan_runs, print_summary, run_experiment, write_time_series, ExperimentSummary,
    PointSummary, RunPlan, RunResult,
};
