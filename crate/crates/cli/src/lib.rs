//! `cmts` command-line front end.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use cmts_model::{Ablation, TaskKind};

use crate::config::{Loaded, Overrides};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cmts", version, about = "Causal-guided masked reconstruction of PV plant time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (JSON, or TOML by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Significance level of the independence tests.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// none, prompt, causal or full.
    #[arg(long, global = true)]
    pub ablation: Option<Ablation>,
    /// imputation, forecast or superres.
    #[arg(long, global = true)]
    pub task: Option<TaskKind>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Day CSVs or manifest JSON files; replaces `data.csv` of the config.
    #[arg(long = "data")]
    pub data: Vec<PathBuf>,
    /// Prior graph JSON.
    #[arg(long)]
    pub prior: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic plant days, graphs and a manifest.
    Gen,
    /// Discover the causal graph of the data.
    Discover(DataArgs),
    /// Fine-tune on the pooled tasks and write a run report.
    Train(DataArgs),
    /// Score a checkpoint on data.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Reconstruct masked cells and write CSVs.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn data_args(&self) -> Option<&DataArgs> {
        match self {
            Command::Gen => None,
            Command::Discover(d) | Command::Train(d) => Some(d),
            Command::Eval { data, .. } | Command::Infer { data, .. } => Some(data),
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<Loaded, CliError> {
    let c = &cli.common;
    let ov = Overrides {
        seed: c.seed,
        threads: c.threads,
        alpha: c.alpha,
        ablation: c.ablation,
        task: c.task,
        out: c.out.clone(),
        data: cli.command.data_args().map(|d| d.data.clone()).unwrap_or_default(),
        prior: cli.command.data_args().and_then(|d| d.prior.clone()),
    };
    config::load(c.config.as_deref(), &ov)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let loaded = load_config(cli)?;
    let cfg = &loaded.cfg;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Gen => commands::gen(cfg).map(drop),
        Command::Discover(_) => commands::cmd_discover(cfg).map(drop),
        Command::Train(_) => commands::cmd_train(cfg, &loaded.hash).map(drop),
        Command::Eval { checkpoint, .. } => commands::cmd_eval(cfg, checkpoint).map(drop),
        Command::Infer { checkpoint, .. } => commands::cmd_infer(cfg, checkpoint).map(drop),
    })
}
