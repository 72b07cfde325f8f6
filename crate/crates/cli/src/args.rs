use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use danli::model::ModelConfig;
use danli::trainer::{default_learning_rate, TrainConfig};
use serde::Deserialize;

use crate::error::CliError;

/// Decomposable attention for natural language inference.
///
/// Set DANLI_LOG_LEVEL (error, warn, info, debug, trace) to control
/// logging on stderr. Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric
/// error.
#[derive(Debug, Parser)]
#[command(name = "danli", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints and a JSON-lines log.
    Train(Box<TrainArgs>),
    /// Accuracy of a checkpoint on a labeled corpus, overall and per class.
    Eval(EvalArgs),
    /// Label one premise/hypothesis pair.
    Predict(PairArgs),
    /// Dump attention scores and weights for one pair as JSON.
    AttendDump(PairArgs),
    /// Time the forward pass at several worker counts.
    Bench(BenchArgs),
    /// Write a small synthetic corpus and matching word vectors.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    Intra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Both,
}

/// Training options. Every option except `--config` may also be given in
/// the config file, a JSON object whose keys are the flag names with `_`
/// in place of `-`; flags win over the file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainArgs {
    /// JSON file with default values for the options below.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Training corpus (SNLI JSON lines).
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    /// Development corpus, used for model selection.
    #[arg(long, value_name = "PATH")]
    pub dev: Option<PathBuf>,
    /// Word vectors, `token v1 ... vd` per line, optionally gzipped.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Directory for checkpoints and the training log.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Pairs per step [default: 4].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adagrad learning rate [default: 0.05, or 0.025 with intra attention].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Dropout ratio [default: 0.2].
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Stop once dev accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Shuffling and dropout seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter initialization seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// With several workers, split each batch and reduce in a fixed order
    /// instead of applying asynchronous updates.
    #[arg(long)]
    pub deterministic: bool,

    /// Word vector dimension [default: 300].
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Projected dimension [default: 200].
    #[arg(long)]
    pub proj_dim: Option<usize>,
    /// Hidden width of every feed-forward network [default: 200].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Layers per feed-forward network [default: 2].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Largest distinguished distance in intra attention [default: 10].
    #[arg(long)]
    pub distance_cap: Option<usize>,
    /// Lowercase tokens before vocabulary lookup.
    #[arg(long)]
    pub lowercase: bool,
}

macro_rules! prefer_flags {
    ($flags:ident, $file:ident; $($field:ident),*) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field.take(); } )*
    };
}

impl TrainArgs {
    /// Fills options missing on the command line from `--config`.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let mut file = read_config(&path)?;
        prefer_flags!(self, file; train, dev, embeddings, out, variant, batch_size, lr, dropout,
            max_steps, eval_every, checkpoint_every, log_every, target_accuracy, seed, init_seed,
            workers, embed_dim, proj_dim, hidden, layers, distance_cap);
        self.deterministic |= file.deterministic;
        self.lowercase |= file.lowercase;
        Ok(self)
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let base = match self.variant.unwrap_or(Variant::Vanilla) {
            Variant::Vanilla => ModelConfig::vanilla(),
            Variant::Intra => ModelConfig::intra(),
        };
        let config = ModelConfig {
            embed_dim: self.embed_dim.unwrap_or(base.embed_dim),
            proj_dim: self.proj_dim.unwrap_or(base.proj_dim),
            hidden: self.hidden.unwrap_or(base.hidden),
            layers: self.layers.unwrap_or(base.layers),
            dropout: self.dropout.unwrap_or(base.dropout),
            distance_cap: self.distance_cap.unwrap_or(base.distance_cap),
            ..base
        };
        config
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        Ok(config)
    }

    pub fn train_config(&self, model: &ModelConfig) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or_else(|| default_learning_rate(model)),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            checkpoint_every: self.checkpoint_every.unwrap_or(d.checkpoint_every),
            log_every: self.log_every.unwrap_or(d.log_every),
            workers: self.workers.unwrap_or(d.workers),
            deterministic: self.deterministic,
            seed: self.seed.unwrap_or(d.seed),
            init_seed: self.init_seed.unwrap_or(d.init_seed),
            target_accuracy: self.target_accuracy,
            checkpoint_dir: self.out.clone(),
        };
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> Result<TrainArgs, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Returns the path or a usage error naming the missing option.
pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("missing {flag} (flag or config file)")))
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Labeled corpus to score.
    #[arg(long, value_name = "PATH", visible_aliases = ["test", "dev"])]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub format: Format,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub premise: String,
    #[arg(long)]
    pub hypothesis: String,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Use this model instead of random parameters.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Tokens per sentence, NULL included.
    #[arg(long, default_value_t = 50)]
    pub length: usize,
    /// Premise length, if different from --length.
    #[arg(long)]
    pub premise_len: Option<usize>,
    /// Hypothesis length, if different from --length.
    #[arg(long)]
    pub hypothesis_len: Option<usize>,
    /// Projected and hidden width of the random model.
    #[arg(long, default_value_t = 200)]
    pub dim: usize,
    #[arg(long, value_enum, default_value = "vanilla")]
    pub variant: Variant,
    /// Worker counts to time.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
    pub workers: Vec<usize>,
    /// Forward passes per worker count.
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives train.jsonl, dev.jsonl and vectors.txt.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 200)]
    pub dev_pairs: usize,
    /// Word vector dimension.
    #[arg(long, default_value_t = 300)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
