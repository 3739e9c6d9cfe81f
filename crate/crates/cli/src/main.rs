//! `srforge`: dataset preparation, degradation, fine-tuning, upscaling and
//! evaluation from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use srforge_core::config::ToolkitConfig;

#[derive(Parser, Debug)]
#[command(name = "srforge", version, about = "Super-resolution fine-tuning toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every random choice (overrides `train.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file overriding any subset of the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: SRFORGE_THREADS, then all cores).
    #[arg(long, global = true, env = "SRFORGE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write Lanczos-downscaled copies of every PNG at several scales.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated scales in (0, 1].
        #[arg(long, value_delimiter = ',', default_values_t = srforge_core::io::DEFAULT_SCALES)]
        scales: Vec<f64>,
    },
    /// Synthesize degraded LR images and their parameter records.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// GAN fine-tuning on a directory of HR images.
    Finetune {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint written during and at the end of training.
        #[arg(long)]
        output: PathBuf,
        /// Starting weights.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue the iteration counter stored in `--checkpoint`.
        #[arg(long, requires = "checkpoint")]
        resume: bool,
        /// Total iterations (overrides `train.total_iterations`).
        #[arg(long, conflicts_with = "epochs")]
        iterations: Option<u64>,
        /// Derive the iteration count from epochs over the dataset.
        #[arg(long)]
        epochs: Option<f64>,
        /// Per-iteration loss log (default: stderr).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Super-resolve every PNG in a directory.
    Upscale {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Expected scale; must match the checkpoint's generator.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Score a model under a fixed degradation protocol.
    Evaluate {
        #[arg(long, value_enum)]
        protocol: ProtocolName,
        /// Directory of ground-truth PNGs.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, required_unless_present = "bicubic")]
        checkpoint: Option<PathBuf>,
        /// Score plain bicubic upscaling instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        bicubic: bool,
        /// Report file (default: stdout).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print a checkpoint's metadata and tensor manifest.
    InspectCheckpoint { path: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProtocolName {
    Drive,
    Nih,
    Custom,
}

impl ProtocolName {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolName::Drive => "drive",
            ProtocolName::Nih => "nih",
            ProtocolName::Custom => "custom",
        }
    }
}

/// What a command prints as its last line. Any error makes the exit code 1.
pub struct Summary {
    pub line: String,
    pub errors: usize,
}

fn load_config(global: &GlobalArgs) -> Result<ToolkitConfig> {
    let mut cfg = match &global.config {
        Some(path) => ToolkitConfig::load(path)?,
        None => ToolkitConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Summary> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = load_config(&cli.global)?;
    commands::dispatch(cli.command, &cfg)
}

/// The error chain joined by ": ", skipping causes already quoted by their
/// parent's message.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", summary.line);
            if summary.errors == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
