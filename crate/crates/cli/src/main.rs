//! `hrtf`: synthetic data, sparse selection, baselines, training,
//! evaluation and analysis driven by run config files.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error,
//! 4 numerical failure.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hrtf_core::baselines::Method;

use crate::config::{DataSource, RunConfig, SparseSource};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hrtf", version, about = "Sparse-to-dense HRTF upsampling toolkit")]
struct Cli {
    /// Run config file (`key = value` lines); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthesis (synth) or training (train, eval --variants).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation; 1 gives bitwise-reproducible output.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory, manifest directory or single HRTFSET1 file.
    /// Relative paths fall back to $HRTF_DATA_DIR.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of measured directions chosen by farthest-point sampling.
    #[arg(long)]
    m: Option<usize>,
    /// File of measured direction indices (overrides --m).
    #[arg(long, conflicts_with = "m")]
    sparse: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic subjects as HRTFSET1 files plus a manifest.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        subjects: Option<u32>,
        #[arg(long)]
        dirs: Option<u32>,
        #[arg(long)]
        freqs: Option<u32>,
        /// Spherical-harmonic order of the spatial field.
        #[arg(long)]
        sh_order: Option<u32>,
        /// Elevation-dependent notches per subject.
        #[arg(long)]
        notches: Option<u32>,
    },
    /// Write the measured direction indices of a sparse configuration.
    Subset {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run a classical interpolation baseline and report metrics.
    Baseline {
        /// nearest, distw, barycentric or sh
        #[arg(long)]
        method: String,
        /// Spherical-harmonic order (sh only; default ⌊√M⌋ − 1).
        #[arg(long)]
        lmax: Option<usize>,
        /// Ridge weight (sh only).
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a model; writes the best checkpoint and the epoch history.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a checkpoint, or train and evaluate the variant table.
    Eval {
        #[arg(long, required_unless_present = "variants")]
        checkpoint: Option<PathBuf>,
        /// Train and evaluate every variant and ablation (or the listed
        /// ones) and emit one combined table.
        #[arg(long, num_args = 0.., value_delimiter = ',', conflicts_with = "checkpoint")]
        variants: Option<Vec<String>>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Frequency-by-frequency Pearson correlation of a dataset.
    Corr {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Merge report.csv files into one CSV and Markdown table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn apply_data(cfg: &mut RunConfig, data: DataArgs) {
    if let Some(p) = data.dataset {
        cfg.data = Some(DataSource::Path(p));
    }
    if let Some(m) = data.m {
        cfg.sparse = Some(SparseSource::FarthestPoint(m));
    }
    if let Some(p) = data.sparse {
        cfg.sparse = Some(SparseSource::File(p));
    }
}

fn parse_method(name: &str, lmax: Option<usize>, lambda: Option<f64>) -> Result<Method, CliError> {
    let method: Method = name.parse()?;
    match method {
        Method::Sh { l_max, lambda: default_lambda } => Ok(Method::Sh {
            l_max: lmax.or(l_max),
            lambda: lambda.unwrap_or(default_lambda),
        }),
        _ if lmax.is_some() || lambda.is_some() => Err(CliError::usage("--lmax and --lambda apply to --method sh only")),
        other => Ok(other),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    }
    if let Some(t) = cli.threads {
        cfg.threads = t as usize;
    }
    if !matches!(cli.command, Command::Synth { .. }) {
        if let Some(seed) = cli.seed {
            cfg.train.seed = seed;
        }
    }
    match cli.command {
        Command::Synth { subjects, dirs, freqs, sh_order, notches } => commands::synth(
            cfg,
            commands::SynthArgs { subjects, dirs, freqs, sh_order, notches, seed: cli.seed },
        ),
        Command::Subset { data } => {
            apply_data(&mut cfg, data);
            commands::subset(cfg)
        }
        Command::Baseline { method, lmax, lambda, data } => {
            let method = parse_method(&method, lmax, lambda)?;
            apply_data(&mut cfg, data);
            commands::baseline(cfg, method)
        }
        Command::Train { data } => {
            apply_data(&mut cfg, data);
            commands::train(cfg)
        }
        Command::Eval { checkpoint, variants, data } => {
            apply_data(&mut cfg, data);
            match (checkpoint, variants) {
                (_, Some(only)) => commands::eval_variants(cfg, &only),
                (Some(path), None) => commands::eval_checkpoint(cfg, &path),
                (None, None) => Err(CliError::usage("eval needs --checkpoint or --variants")),
            }
        }
        Command::Corr { dataset } => {
            if let Some(p) = dataset {
                cfg.data = Some(DataSource::Path(p));
            }
            commands::corr(cfg)
        }
        Command::Report { inputs } => commands::report(cfg, &inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
