use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drgaze::Precision;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "drgaze",
    version,
    about = "Driver gaze mapping: train, evaluate, predict, verify"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a manifest and write checkpoints and metrics.
    Train(TrainArgs),
    /// Report mean pixel L1 of a checkpoint on each driver split.
    Eval(EvalArgs),
    /// Predict one gaze point and draw it on the road image.
    Predict(PredictArgs),
    /// Compare analytic gradients against finite differences on the tiny network.
    Gradcheck(GradcheckArgs),
    /// Write a deterministic synthetic dataset.
    Synth(SynthArgs),
}

/// Options that map onto [`RunConfig`] keys.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset: default or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated epochs at which the learning rate decays.
    #[arg(long, allow_hyphen_values = true)]
    pub milestones: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Dataset root; relative manifest paths resolve against it.
    #[arg(long, env = "DRGAZE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

impl RunArgs {
    /// Whether any option touching the model architecture was given.
    pub fn touches_model(&self) -> bool {
        const MODEL_KEYS: [&str; 11] = [
            "preset",
            "channels",
            "features",
            "blocks",
            "growth",
            "layers",
            "height",
            "width",
            "embed",
            "hidden",
            "scale_targets",
        ];
        self.config.is_some()
            || self.preset.is_some()
            || self
                .sets
                .iter()
                .any(|s| MODEL_KEYS.contains(&s.split('=').next().unwrap_or_default().trim()))
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path).map_err(CliError::usage)?,
            None => RunConfig::default(),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push("preset", self.preset.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("milestones", self.milestones.clone());
        push("gamma", self.gamma.map(|v| v.to_string()));
        push("precision", self.precision.map(|v| v.to_string()));
        push("manifest", self.manifest.as_ref().map(|p| p.display().to_string()));
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::usage(anyhow::anyhow!("--set expects KEY=VALUE, got {s:?}")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in pairs {
            config.set(&k, &v).map_err(CliError::usage)?;
        }
        config.validate().map_err(CliError::usage)?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory for checkpoints, metrics and normalization statistics.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Eye image tensor (DRGZ, channels × height × width, raw pixel values).
    #[arg(long)]
    pub eye: PathBuf,
    /// The 13 facial features, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub features: String,
    /// Road image (PPM, or DRGZ laid out channels × height × width).
    #[arg(long)]
    pub road: Option<PathBuf>,
    /// Ground-truth gaze `x,y` drawn in green.
    #[arg(long, allow_hyphen_values = true)]
    pub truth: Option<String>,
    /// Normalization statistics written by `train`.
    #[arg(long, requires = "driver")]
    pub stats: Option<PathBuf>,
    /// Driver whose statistics normalize the eye image.
    #[arg(long, requires = "stats")]
    pub driver: Option<String>,
    /// Overlay image to write (binary PPM).
    #[arg(long, default_value = "overlay.ppm")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectedFault {
    ConvBias,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Check only bias tensors.
    #[arg(long)]
    pub biases_only: bool,
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<InjectedFault>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 13)]
    pub drivers: usize,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 36)]
    pub height: usize,
    #[arg(long, default_value_t = 60)]
    pub width: usize,
}
