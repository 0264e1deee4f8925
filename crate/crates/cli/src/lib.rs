//! Command-line driver. Every subcommand resolves its options from flags and
//! an optional flat `key=value` config file (flags win), writes into a
//! fresh output directory, echoes the resolved options to `manifest.txt`
//! and prints a one-line JSON summary on success.

mod commands;
mod config;
mod output;
mod tasks;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{parse_config, Config};

#[derive(Parser, Debug)]
#[command(name = "searchkd", version, about = "Knowledge distillation for search-based structured prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus (train/dev/test) for either task.
    MakeSynthetic(MakeSyntheticArgs),
    /// Train one baseline model on reference states.
    Train(TrainArgs),
    /// Train M differently-seeded baselines and write an ensemble manifest.
    TrainEnsemble(TrainEnsembleArgs),
    /// Distil an ensemble into a single student model.
    Distill(DistillArgs),
    /// Score a model, an ensemble or a hypothesis file on a test set.
    Eval(EvalArgs),
    /// Rank problematic parser states and report MAP per state kind.
    AnalyzeStates(AnalyzeArgs),
    /// One distillation run per grid value of alpha, temperature or top-K.
    Sweep(SweepArgs),
    /// Baseline and distilled runs over several seeds, with spread statistics.
    Stability(StabilityArgs),
    /// Repeat a run from its manifest into a new output directory.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeSynthetic(_) => "make-synthetic",
            Command::Train(_) => "train",
            Command::TrainEnsemble(_) => "train-ensemble",
            Command::Distill(_) => "distill",
            Command::Eval(_) => "eval",
            Command::AnalyzeStates(_) => "analyze-states",
            Command::Sweep(_) => "sweep",
            Command::Stability(_) => "stability",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Parse,
    Transduce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeArg {
    Reference,
    Exploration,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Temperature,
    Topk,
}

/// Options every command accepts.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Output directory; must not exist. Defaults to `$SEARCHKD_OUT/<command>`.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Flat `key=value` file of option defaults.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Base seed; sub-seeds are derived from it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for members, rollouts and sweep points.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MakeSyntheticArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub task: TaskKind,
    /// Training sentences; dev and test get a quarter each.
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub ambiguity: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub task: TaskKind,
    /// CoNLL-U (parse) or source<TAB>target TSV (transduce).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Drop non-projective training trees instead of failing.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub skip_nonprojective: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Gradient-norm clip; 0 disables.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    /// Epochs without dev improvement before stopping.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Halve the learning rate after an epoch without dev improvement.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub halve_on_stall: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainEnsembleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Ensemble size.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DistillOptions {
    /// Ensemble manifest (`ensemble.json`) written by `train-ensemble`.
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub regime: RegimeArg,
    /// Weight of the distillation term; defaults to 1.0 (parse) or 0.8 (transduce).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Exploration sampling temperature; defaults to 1.0 (parse) or 0.1 (transduce).
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Top-K truncation of the distillation loss, or `all`.
    #[arg(long, default_value = "all")]
    pub topk: String,
    /// Reference passes : exploration passes per epoch (regime both).
    #[arg(long, default_value = "1:1")]
    pub mix_ratio: String,
    /// Sample fresh exploration trajectories every epoch.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub resample_every_epoch: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DistillArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub distill: DistillOptions,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub task: TaskKind,
    #[arg(long)]
    pub test: PathBuf,
    /// Model file to decode with.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ensemble manifest to decode with.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    /// Pre-computed outputs (CoNLL-U, or one sentence per line) to score.
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
    /// Second system (model file or ensemble manifest) for a paired
    /// bootstrap test against the first.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Treebank (CoNLL-U) to sample trajectories over.
    #[arg(long)]
    pub data: PathBuf,
    /// Baseline model whose sampled trajectories supply the states.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Systems to rank with, as `name=path` pairs separated by commas. A
    /// `.json` path is read as an ensemble manifest.
    #[arg(long)]
    pub systems: String,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sample_temperature: f64,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub skip_nonprojective: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub distill: DistillArgs,
    #[arg(long, value_enum)]
    pub parameter: SweepParam,
    /// `start:end:step` (inclusive) or a comma-separated list.
    #[arg(long)]
    pub grid: String,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub distill: DistillArgs,
    /// Seeds per system: `seed + 1 ..= seed + runs`.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RerunArgs {
    /// `manifest.txt` of an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parses `argv` (including the program name), merging any `--config` file
/// underneath the flags.
pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let merged = match config::config_path(&argv) {
        Some(path) => {
            let cfg = parse_config(&path).map_err(|e| {
                Cli::command().error(clap::error::ErrorKind::InvalidValue, format!("{e:#}"))
            })?;
            config::merge(&argv, &cfg)?
        }
        None => argv,
    };
    Cli::command().args_override_self(true).try_get_matches_from(merged).and_then(|m| {
        use clap::FromArgMatches;
        Cli::from_arg_matches(&m)
    })
}

/// Runs a parsed command. Returns the summary JSON line.
pub fn execute(cli: Cli) -> Result<String> {
    commands::run(cli.command)
}

/// Entry point used by the binary: exit status 0 on success, 1 on a run
/// error and 2 on a usage error.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return 2;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ").replace('\n', " ")
}

/// Task-default distillation settings.
pub fn default_alpha(task: TaskKind) -> f64 {
    match task {
        TaskKind::Parse => 1.0,
        TaskKind::Transduce => 0.8,
    }
}

pub fn default_temperature(task: TaskKind) -> f64 {
    match task {
        TaskKind::Parse => 1.0,
        TaskKind::Transduce => 0.1,
    }
}

/// `all` or a positive integer.
pub fn parse_topk(s: &str) -> Result<usize> {
    if s == "all" {
        return Ok(usize::MAX);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(k),
        _ => bail!("--topk must be `all` or a positive integer, got `{s}`"),
    }
}

/// `r:e` with non-negative integers, not both zero.
pub fn parse_mix(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(':').with_context(|| format!("--mix-ratio must look like `1:1`, got `{s}`"))?;
    let a: usize = a.trim().parse().with_context(|| format!("bad reference passes in `{s}`"))?;
    let b: usize = b.trim().parse().with_context(|| format!("bad exploration passes in `{s}`"))?;
    if a == 0 && b == 0 {
        bail!("--mix-ratio 0:0 yields no training states");
    }
    Ok((a, b))
}
