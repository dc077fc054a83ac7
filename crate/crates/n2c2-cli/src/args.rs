//! Flag definitions plus the JSON config file they merge with. Every value
//! flag is optional at parse time; a setting resolves as flag, then config
//! key, then built-in default, so the file may supply any flag and the
//! command line always wins.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "n2c2",
    version,
    about = "Retrieval-augmented calibration for few-shot cross-lingual classification"
)]
pub struct Cli {
    /// JSON file whose keys supply defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for prediction; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark corpus.
    Synth(SynthArgs),
    /// Run two-stage training and save the model.
    Train(TrainArgs),
    /// Write per-record predictions for a dataset.
    Predict(PredictArgs),
    /// Score a predictor on labeled test files.
    Evaluate(EvaluateArgs),
    /// Score the model with single components bypassed or retrained away.
    Ablate(AblateArgs),
    /// Retrain and score across retrieval-size caps.
    SweepKmax(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory every output lands under.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Train records per class in the source language.
    #[arg(long)]
    pub shots: Option<usize>,

    #[arg(long)]
    pub classes: Option<usize>,

    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,

    /// Comma-separated languages; the first is the source.
    #[arg(long)]
    pub langs: Option<String>,

    /// Per-view embedding noise scale.
    #[arg(long)]
    pub noise_sigma: Option<f64>,

    /// Per-language embedding offset scale.
    #[arg(long)]
    pub shift_sigma: Option<f64>,

    /// Base-predictor logit sharpness; larger means more confident.
    #[arg(long)]
    pub miscalib_temp: Option<f64>,

    /// Embedding views per record.
    #[arg(long)]
    pub views: Option<usize>,

    #[arg(long)]
    pub dev_shots: Option<usize>,

    /// Test records per class per target language.
    #[arg(long)]
    pub test_shots: Option<usize>,
}

/// Hyperparameters shared by every command that trains.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Retrieval softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,

    /// Largest candidate retrieval size.
    #[arg(long)]
    pub k_max: Option<usize>,

    /// Base-model weight for the fixed interpolation path.
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Shaped retrieval dimension; defaults to the embedding dimension.
    #[arg(long)]
    pub z_dim: Option<usize>,

    /// Hidden width of the confidence and weighting networks.
    #[arg(long)]
    pub hidden: Option<usize>,

    /// Retrieval size used when the weighting network is bypassed.
    #[arg(long)]
    pub fixed_m: Option<usize>,

    /// Divide neighbor distances by their per-query mean.
    #[arg(long)]
    pub normalize_distances: bool,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Epochs per training stage.
    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory every output lands under.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Labeled source-language training JSONL.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// Labeled dev JSONL for checkpoint selection.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,

    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory every output lands under.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Training JSONL the retrieval store is rebuilt from.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// JSONL records to predict.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory every output lands under.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Trained model file (needed by the n2c2 predictor).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Training JSONL the retrieval store is rebuilt from.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// Labeled test JSONL; repeat for several languages.
    #[arg(long, value_name = "FILE")]
    pub test: Vec<PathBuf>,

    /// One of n2c2, base, base-cc, base-ts.
    #[arg(long)]
    pub predictor: Option<String>,

    /// Labeled dev JSONL the base-ts temperature is fitted on.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,

    /// Reliability-diagram bins.
    #[arg(long)]
    pub num_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory every output lands under.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Trained model file (bypass mode).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Training JSONL the retrieval store is rebuilt from.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// Labeled dev JSONL (required with --retrain).
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,

    /// Labeled test JSONL; repeat for several languages.
    #[arg(long, value_name = "FILE")]
    pub test: Vec<PathBuf>,

    /// Score the variant without the confidence module.
    #[arg(long)]
    pub no_cd: bool,

    /// Score the variant retrieving over raw embeddings.
    #[arg(long)]
    pub raw_repr: bool,

    /// Score the fixed-size, fixed-weight variant.
    #[arg(long)]
    pub no_dwe: bool,

    /// Retrain each variant instead of bypassing the trained model.
    #[arg(long)]
    pub retrain: bool,

    /// Reliability-diagram bins.
    #[arg(long)]
    pub num_bins: Option<usize>,

    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory every output lands under.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,

    /// Labeled source-language training JSONL.
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// Labeled dev JSONL for checkpoint selection.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,

    /// Labeled test JSONL; repeat for several languages.
    #[arg(long, value_name = "FILE")]
    pub test: Vec<PathBuf>,

    /// Comma-separated retrieval-size caps, each at least 4.
    #[arg(long)]
    pub values: Option<String>,

    /// Reliability-diagram bins.
    #[arg(long)]
    pub num_bins: Option<usize>,

    #[command(flatten)]
    pub flags: TrainFlags,
}

/// Every flag, as an optional key. Keys a command does not use are ignored,
/// so one file can drive a whole pipeline of commands.
#[derive(Debug, Default, Deserialize)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<Vec<PathBuf>>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub shots: Option<usize>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub langs: Option<String>,
    pub noise_sigma: Option<f64>,
    pub shift_sigma: Option<f64>,
    pub miscalib_temp: Option<f64>,
    pub views: Option<usize>,
    pub dev_shots: Option<usize>,
    pub test_shots: Option<usize>,
    pub tau: Option<f64>,
    pub k_max: Option<usize>,
    pub lambda: Option<f64>,
    pub z_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub fixed_m: Option<usize>,
    pub normalize_distances: Option<bool>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub predictor: Option<String>,
    pub num_bins: Option<usize>,
    pub values: Option<String>,
    pub retrain: Option<bool>,
    pub no_cd: Option<bool>,
    pub raw_repr: Option<bool>,
    pub no_dwe: Option<bool>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag value, then config-file value, then the built-in default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] for settings with no usable default.
pub fn need<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| anyhow!("--{name} is required (flag or config key)"))
}
