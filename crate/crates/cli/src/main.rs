//! `nphmm`: fit, select, diagnose and bootstrap hidden Markov models with
//! penalized B-spline state-dependent densities.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and I/O errors, 2 when
//! the numerics fail (no restart converged, degenerate bootstrap, ...).

mod commands;
mod config;
mod data;
mod model_file;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::{Context, Preset};
use crate::config::{ColumnSpec, Config, LambdaSpec, Transform};

#[derive(Parser)]
#[command(name = "nphmm", version, about = "Nonparametric hidden Markov models with penalized B-spline densities")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed [default: 1].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Number of states (overrides model.states).
    #[arg(long, global = true)]
    states: Option<usize>,
    /// Basis size parameter: 2K+1 B-splines (overrides model.k).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Smoothing parameters: `cv` or comma-separated values (overrides model.lambda).
    #[arg(long, global = true)]
    lambda: Option<LambdaSpec>,
    /// Random restarts per fit.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Bootstrap replicates B.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Cross-validation partitions C.
    #[arg(long, global = true)]
    partitions: Option<usize>,
    /// Share of each series used for calibration in cross-validation.
    #[arg(long, global = true)]
    calibration_fraction: Option<f64>,
    /// Confidence level of intervals and bands.
    #[arg(long, global = true)]
    level: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

/// Input series selection.
#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// CSV file with the series.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column by 1-based index or header name.
    #[arg(long)]
    column: Option<ColumnSpec>,
    #[arg(long)]
    delimiter: Option<char>,
    /// The first row is a header.
    #[arg(long, conflicts_with = "no_header")]
    header: bool,
    /// The first row is data.
    #[arg(long)]
    no_header: bool,
    #[arg(long, value_enum)]
    transform: Option<Transform>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write a model file.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Pseudo-residuals, decoded states, ACF and density curves of a fitted model.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "diagnostics")]
        out_dir: PathBuf,
        /// Largest ACF lag (overrides diagnose.max_lag).
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Parametric bootstrap: transition intervals and density bands.
    Bootstrap {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Simulated series length; defaults to the data length.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value = "bootstrap")]
        out_dir: PathBuf,
    },
    /// Choose the number of states by cross-validation.
    SelectStates {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated candidate state counts (overrides select.candidates).
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
        /// JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the simulation study against parametric competitors.
    Simstudy {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "simstudy")]
        out_dir: PathBuf,
    },
    /// Simulate a series from a preset or a model file.
    Simulate {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 2880)]
        length: usize,
        #[arg(long, default_value = "simulated.csv")]
        out: PathBuf,
        /// Also write the generating model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
}

fn context(cli: &Cli) -> Result<Context> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let sc = &mut config.scenario;
    if let Some(v) = cli.states {
        config.model.states = v;
    }
    if let Some(v) = cli.k {
        config.model.k = v;
        sc.k = Some(v);
    }
    if let Some(v) = &cli.lambda {
        config.model.lambda = v.clone();
    }
    if let Some(v) = cli.restarts {
        config.model.restarts = v;
        sc.restarts = Some(v);
    }
    if let Some(v) = cli.replicates {
        config.bootstrap.replicates = v;
        sc.replicates = Some(v);
    }
    if let Some(v) = cli.partitions {
        config.cv.partitions = v;
        sc.partitions = Some(v);
    }
    if let Some(v) = cli.calibration_fraction {
        config.cv.calibration_fraction = v;
        sc.calibration_fraction = Some(v);
    }
    if let Some(v) = cli.level {
        config.bootstrap.level = v;
        sc.level = Some(v);
    }
    let seed = cli.seed.or(config.seed).unwrap_or(1);
    Ok(Context { config, seed })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            anyhow::bail!("--threads: must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("cannot start the thread pool")?;
    }
    let mut ctx = context(&cli)?;
    match cli.command {
        Command::Fit { data, out } => commands::cmd_fit(&ctx, &data, &out),
        Command::Diagnose { model, data, out_dir, max_lag } => {
            if let Some(l) = max_lag {
                ctx.config.diagnose.max_lag = l;
            }
            commands::cmd_diagnose(&ctx, &model, &data, &out_dir)
        }
        Command::Bootstrap { model, data, length, out_dir } => {
            if length.is_some() {
                ctx.config.bootstrap.length = length;
            }
            commands::cmd_bootstrap(&ctx, &model, &data, &out_dir)
        }
        Command::SelectStates { data, candidates, out } => {
            commands::cmd_select_states(&ctx, &data, candidates, out.as_deref())
        }
        Command::Simstudy { runs, out_dir } => commands::cmd_simstudy(&ctx, runs, &out_dir),
        Command::Simulate { preset, model, length, out, model_out } => {
            commands::cmd_simulate(&ctx, preset, model.as_deref(), length, &out, model_out.as_deref())
        }
    }
}

/// 2 for numerical failures reported by the library, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use nphmm::Error as E;
    match err.chain().find_map(|c| c.downcast_ref::<nphmm::Error>()) {
        Some(E::InvalidArgument(_) | E::BasisTooSmall(_)) | None => 1,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
