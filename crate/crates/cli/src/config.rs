//! Plain-text run configuration: `key = value` lines, `#` comments.
//!
//! | key | default |
//! |-----|---------|
//! | `preset` | `default` (`tiny` selects the small gradient-check network) |
//! | `channels`, `features`, `blocks`, `growth`, `layers` | 3, 32, 32, 4, 4 |
//! | `height`, `width` | 36, 60 |
//! | `embed`, `hidden` | 16, 500 |
//! | `scale_targets` | `false` |
//! | `batch_size`, `epochs`, `seed` | 32, 60, 0 |
//! | `lr`, `gamma`, `milestones` | 1e-5, 0.1, `40,55` |
//! | `beta1`, `beta2`, `eps` | 0.9, 0.999, 1e-5 |
//! | `precision` | `f32` |
//! | `val_drivers`, `test_drivers` | 1, 1 |
//! | `manifest` | `$DRGAZE_DATA_DIR/manifest.tsv` |
//! | `out` | `run` |
//!
//! Keys apply in order, so `preset` should come before individual model keys.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use drgaze::train::TrainConfig;
use drgaze::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub val_drivers: usize,
    pub test_drivers: usize,
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            val_drivers: 1,
            test_drivers: 1,
            manifest: None,
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

/// Comma-separated epoch list; an empty string means no milestones.
pub fn parse_milestones(value: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse("milestones", s))
        .collect::<Result<_>>()?;
    out.sort_unstable();
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let eye = &mut t.model.eye;
        match key {
            "preset" => {
                t.model = match value {
                    "default" => ModelConfig::default(),
                    "tiny" => ModelConfig::tiny(),
                    _ => bail!("preset: expected default or tiny, got {value:?}"),
                }
            }
            "channels" => eye.channels = parse(key, value)?,
            "features" => eye.features = parse(key, value)?,
            "blocks" => eye.blocks = parse(key, value)?,
            "growth" => eye.growth = parse(key, value)?,
            "layers" => eye.layers = parse(key, value)?,
            "height" => eye.height = parse(key, value)?,
            "width" => eye.width = parse(key, value)?,
            "embed" => t.model.embed = parse(key, value)?,
            "hidden" => t.model.hidden = parse(key, value)?,
            "scale_targets" => t.model.scale_targets = parse_bool(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lr" => t.schedule.base = parse(key, value)?,
            "gamma" => t.schedule.gamma = parse(key, value)?,
            "milestones" => t.schedule.milestones = parse_milestones(value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "eps" => t.adam.eps = parse(key, value)?,
            "precision" => t.precision = value.parse()?,
            "val_drivers" => self.val_drivers = parse(key, value)?,
            "test_drivers" => self.test_drivers = parse(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = RunConfig::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let a = &self.train.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            bail!("Adam needs 0 ≤ beta1, beta2 < 1 and eps > 0");
        }
        Ok(())
    }

    /// The manifest path, resolved against `data_dir` when relative.
    pub fn manifest_path(&self, data_dir: Option<&Path>) -> Result<PathBuf> {
        match (&self.manifest, data_dir) {
            (Some(m), Some(dir)) if m.is_relative() => Ok(dir.join(m)),
            (Some(m), _) => Ok(m.clone()),
            (None, Some(dir)) => Ok(dir.join(drgaze::data::MANIFEST_NAME)),
            (None, None) => bail!("no manifest given; pass --manifest or set DRGAZE_DATA_DIR"),
        }
    }
}
