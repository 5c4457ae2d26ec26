//! `oat`: data preparation, positional tables, training, generation,
//! baselines, evaluation, heatmaps and the history-swap probe.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "oat", version, about = "Object-level scanpath prediction toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Dotted-key config file (or a run manifest to replay).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Starting values before the config file: `paper` or `desk`.
    #[arg(long, global = true, default_value = "paper")]
    pub preset: String,
    /// Override a config key, e.g. `--set model.h=96`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, global = true, env = "OAT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for per-trial work.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit or build positional tables.
    #[command(subcommand)]
    Pe(PeCommand),
    /// Create or import datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a model.
    Train(TrainArgs),
    /// Generate scanpaths with a trained model.
    Generate(GenerateArgs),
    /// Generate baseline scanpaths.
    Baseline(BaselineArgs),
    /// Score scanpath files against a dataset's reference scanpaths.
    Eval(EvalArgs),
    /// Per-object viewing fractions as CSV and PGM.
    Heatmap(HeatmapArgs),
    /// Probability changes after swapping one history entry.
    Probe(ProbeArgs),
}

#[derive(Subcommand, Debug)]
pub enum PeCommand {
    /// Fit one distance-based table and write it as a standalone file.
    Train(PeTrainArgs),
    /// Build the x, y and target-flag tables a model trains with.
    Tables(PeTablesArgs),
}

#[derive(Args, Debug)]
pub struct PeTrainArgs {
    /// Number of positions.
    #[arg(long = "L", alias = "length")]
    pub length: Option<usize>,
    #[arg(long)]
    pub d_axis: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PeTablesArgs {
    /// dpe, sinusoidal or e2e.
    #[arg(long, default_value = "dpe")]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum DataCommand {
    /// Render a synthetic shelf dataset with scripted scanpaths.
    Synth(SynthArgs),
    /// Build trials from a fixation CSV.
    Ingest(IngestArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub paths_per_trial: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV with header `trial_id,subject,timestamp_ms,x_px,y_px`.
    #[arg(long)]
    pub fixations: PathBuf,
    /// Layout JSON (rows, cols, cell boxes, image size).
    #[arg(long)]
    pub layout: PathBuf,
    /// JSON list of `{trial_id, image, target_id}`.
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of positional tables from `oat pe`; built on the fly otherwise.
    #[arg(long)]
    pub pe: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// greedy or sample.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Generate for every trial instead of the held-out ones.
    #[arg(long)]
    pub all_trials: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// random, center or wta.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint whose held-out split and training lengths to use.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Scanpath files; each becomes one report row.
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Dataset directory (or its trials.json) holding reference scanpaths.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Directory containing layout.json, or the file itself.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    /// Restrict to one trial.
    #[arg(long)]
    pub trial: Option<String>,
    /// Output prefix; writes `<out>.csv` and `<out>.pgm`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Probe one trial with an explicit history; otherwise every held-out
    /// reference scanpath long enough is probed.
    #[arg(long)]
    pub trial: Option<String>,
    /// Comma-separated object ids.
    #[arg(long)]
    pub history: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub swap_step: usize,
    /// Replacement object; random when omitted.
    #[arg(long)]
    pub replacement: Option<usize>,
    /// Comma-separated prefix lengths after the swap (default: 4 steps).
    #[arg(long)]
    pub probe_steps: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Invalid input detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::preset(&common.preset)?;
    if let Some(path) = &common.config {
        cfg = cfg.merge_file(path)?;
    }
    cfg = cfg.merge_sets(&common.sets)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(
                c.downcast_ref::<oat_core::Error>(),
                Some(oat_core::Error::Config { .. })
            )
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.common.threads == 0 {
        return Err(oat_core::Error::config("threads", "must be positive").into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build_global()
        .ok();
    let cfg = resolve(&cli.common)?;
    commands::dispatch(cli, cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
