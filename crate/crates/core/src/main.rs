use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use buck_adrc::harness::{
    emit_bode, load_spec, print_summary, run_experiment, ExperimentId, ExperimentSpec,
    ExperimentSummary,
};
use buck_adrc::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "buck-adrc",
    version,
    about = "Cascade-ESO ADRC for a buck converter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and seed of a spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run a single seed instead of the spec's list.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write frequency responses for the spec's observer and controller.
    Bode {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated filter time constants; an empty string plots unfiltered curves only.
        #[arg(long)]
        lpf_taus: Option<String>,
    },
    /// Run one of the built-in experiments with nominal parameters.
    Experiment {
        id: ExperimentId,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Load and check a spec without running it.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn parse_taus(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Config {
                path: "--lpf-taus".into(),
                message: format!("`{t}` is not a number"),
            })
        })
        .collect()
}

fn finish(summary: &ExperimentSummary) -> ExitCode {
    let _ = print_summary(summary, std::io::stdout().lock());
    if summary.any_diverged() {
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate {
            spec,
            out,
            seed,
            jobs,
        } => {
            let mut spec = load_spec(&spec)?;
            if let Some(seed) = seed {
                spec.seeds = vec![seed];
            }
            Ok(finish(&run_experiment(&spec, &out, jobs)?))
        }
        Command::Bode {
            spec,
            out,
            lpf_taus,
        } => {
            let spec = load_spec(&spec)?;
            let taus = match lpf_taus {
                Some(s) => parse_taus(&s)?,
                None => spec.bode.lpf_taus.clone(),
            };
            let mut check = spec.clone();
            check.bode.lpf_taus = taus.clone();
            check.validate()?;
            for path in emit_bode(&spec, &out, &taus)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { id, out, jobs } => {
            let spec = ExperimentSpec::builtin(id);
            Ok(finish(&run_experiment(&spec, &out, jobs)?))
        }
        Command::Validate { spec } => {
            let spec = load_spec(&spec)?;
            for w in spec.scenario().warnings() {
                println!("warning: {w}");
            }
            let runs = spec.sweep_points().len() * spec.seeds.len();
            println!("ok: {} with {runs} runs", spec.id);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(EXIT_DIVERGED),
                e if e.is_config_error() => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
