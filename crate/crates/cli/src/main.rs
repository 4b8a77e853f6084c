//! `spoofbench`: VAD, channel simulation, pooling, scoring and metrics for
//! deepfake speech detection benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spoofbench_core::corpus::{MIN_NET_SPEECH_S, POOL_PER_CLASS};
use spoofbench_core::eval::DEFAULT_FAR_TARGET;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "spoofbench", version, about)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, env = "SPOOFBENCH_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads; overrides the config value.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill in net speech per manifest entry, optionally writing trimmed audio.
    Vad(VadArgs),
    /// Run presentation-channel jobs from a JSON Lines file.
    Present(PresentArgs),
    /// Draw a balanced pooled test set from several manifests.
    Pool(PoolArgs),
    /// Score manifest entries with a detector.
    Detect(DetectArgs),
    /// Compute EER and MDR at a fixed FAR from a score file.
    Eval(EvalArgs),
    /// Emit the DET operating points of a score file.
    Det(DetArgs),
    /// Write freshly initialized detector weights.
    InitWeights(InitArgs),
    /// Dump log-mel features of one file.
    Features(FeatureArgs),
}

#[derive(Args)]
pub struct VadArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trim_dir: Option<PathBuf>,
    /// Per-entry failures as JSON Lines.
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Args)]
pub struct PresentArgs {
    #[arg(long)]
    pub jobs: PathBuf,
    /// Global seed; per-job seeds are derived from it and the utterance id.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest of presented outputs (jobs need utt_id, label and dataset).
    #[arg(long)]
    pub out_manifest: Option<PathBuf>,
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Args)]
pub struct PoolArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long, default_value_t = POOL_PER_CLASS)]
    pub per_class: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = MIN_NET_SPEECH_S)]
    pub min_net_speech: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score net-speech prefixes; without a value the configured list is used.
    #[arg(long, num_args = 0..=1, value_name = "S1,S2,...")]
    pub checkpoints: Option<Option<String>>,
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FAR_TARGET)]
    pub far: f64,
    /// One threshold across all trials (default when no mode is given).
    #[arg(long)]
    pub pooled: bool,
    #[arg(long)]
    pub per_dataset: bool,
    /// Metrics per checkpoint and their mean.
    #[arg(long)]
    pub checkpoint_avg: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Args)]
pub struct DetArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InitArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Small network for quick runs instead of the configured one.
    #[arg(long)]
    pub tiny: bool,
}

#[derive(Args)]
pub struct FeatureArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<bool> {
        let mut cfg = RunConfig::load(cli.config.as_deref())?;
        if let Some(p) = cli.parallelism {
            cfg.parallelism = p;
        }
        cfg.validate()?;
        match &cli.command {
            Command::Vad(a) => commands::vad(&cfg, a),
            Command::Present(a) => commands::present(&cfg, a),
            Command::Pool(a) => commands::pool(&cfg, a),
            Command::Detect(a) => commands::detect(&cfg, a),
            Command::Eval(a) => commands::eval(&cfg, a),
            Command::Det(a) => commands::det(a),
            Command::InitWeights(a) => commands::init_weights(&cfg, a),
            Command::Features(a) => commands::features(&cfg, a),
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
