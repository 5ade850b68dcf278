//! Per-driver, per-channel standardization of eye images.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channel statistics keyed by driver id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalizationStats {
    pub drivers: BTreeMap<String, ChannelStats>,
}

fn channels_of<T: Element>(image: &Tensor<T>) -> Result<usize> {
    match image.shape() {
        [c, _, _] => Ok(*c),
        other => Err(Error::shape(
            "normalization",
            format!("expected a [channels, height, width] image, got {other:?}"),
        )),
    }
}

/// Pooled mean and population standard deviation of each channel over all
/// of `images`.
pub fn channel_stats<T: Element>(driver: &str, images: &[&Tensor<T>]) -> Result<ChannelStats> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config(format!("driver {driver} has no images")))?;
    let channels = channels_of(first)?;
    let mut sum = vec![0.0f64; channels];
    let mut count = vec![0usize; channels];
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::shape(
                "normalization",
                format!(
                    "driver {driver}: image shape {:?} differs from {:?}",
                    img.shape(),
                    first.shape()
                ),
            ));
        }
        let plane = img.numel() / channels;
        for (c, chunk) in img.data().chunks_exact(plane).enumerate() {
            sum[c] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
            count[c] += plane;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let mut sq = vec![0.0f64; channels];
    for img in images {
        let plane = img.numel() / channels;
        for (c, chunk) in img.data().chunks_exact(plane).enumerate() {
            sq[c] += chunk
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean[c];
                    d * d
                })
                .sum::<f64>();
        }
    }
    let std: Vec<f64> = sq.iter().zip(&count).map(|(s, &n)| (s / n as f64).sqrt()).collect();
    if let Some(channel) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroStd {
            driver: driver.to_string(),
            channel,
        });
    }
    Ok(ChannelStats { mean, std })
}

impl NormalizationStats {
    /// Statistics for every driver, each computed over that driver's images.
    pub fn compute<'a, T: Element>(samples: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<Self> {
        let mut grouped: BTreeMap<&str, Vec<&Tensor<T>>> = BTreeMap::new();
        for (driver, image) in samples {
            grouped.entry(driver).or_default().push(image);
        }
        let mut drivers = BTreeMap::new();
        for (driver, images) in grouped {
            drivers.insert(driver.to_string(), channel_stats(driver, &images)?);
        }
        Ok(NormalizationStats { drivers })
    }

    pub fn get(&self, driver: &str) -> Result<&ChannelStats> {
        self.drivers
            .get(driver)
            .ok_or_else(|| Error::MissingStats(driver.to_string()))
    }

    /// Add statistics for drivers not already present.
    pub fn extend(&mut self, other: NormalizationStats) {
        for (driver, stats) in other.drivers {
            self.drivers.entry(driver).or_insert(stats);
        }
    }

    pub fn apply<T: Element>(&self, driver: &str, image: &Tensor<T>) -> Result<Tensor<T>> {
        let stats = self.get(driver)?;
        transform(stats, image, |v, mean, std| (v - mean) / std)
    }

    /// Inverse of [`NormalizationStats::apply`].
    pub fn invert<T: Element>(&self, driver: &str, image: &Tensor<T>) -> Result<Tensor<T>> {
        let stats = self.get(driver)?;
        transform(stats, image, |v, mean, std| v * std + mean)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (driver, stats) in &self.drivers {
            out.push_str(driver);
            for v in stats.mean.iter().chain(&stats.std) {
                write!(out, "\t{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    /// Parse `driver<TAB>means…<TAB>stds…` lines.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut drivers = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Config(format!("normalization stats line {}: {msg}", i + 1));
            let mut fields = line.split('\t');
            let driver = fields
                .next()
                .filter(|d| !d.is_empty())
                .ok_or_else(|| err("missing driver id"))?;
            let values: Vec<f64> = fields
                .map(|f| f.parse().map_err(|_| err("non-numeric value")))
                .collect::<Result<_>>()?;
            if values.is_empty() || !values.len().is_multiple_of(2) {
                return Err(err("expected equal numbers of means and standard deviations"));
            }
            let (mean, std) = values.split_at(values.len() / 2);
            if std.iter().any(|&s| !(s > 0.0)) {
                return Err(err("standard deviation must be positive"));
            }
            drivers.insert(
                driver.to_string(),
                ChannelStats {
                    mean: mean.to_vec(),
                    std: std.to_vec(),
                },
            );
        }
        Ok(NormalizationStats { drivers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn transform<T: Element>(
    stats: &ChannelStats,
    image: &Tensor<T>,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<Tensor<T>> {
    let channels = channels_of(image)?;
    if channels != stats.mean.len() {
        return Err(Error::shape(
            "normalization",
            format!("image has {channels} channels, statistics cover {}", stats.mean.len()),
        ));
    }
    let plane = image.numel() / channels;
    let mut out = image.clone();
    for (c, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        for v in chunk {
            *v = T::from_f64(f(v.as_f64(), stats.mean[c], stats.std[c]));
        }
    }
    Ok(out)
}

/// Compute per-driver statistics over `samples` and return every image
/// normalized with its own driver's statistics, in input order.
pub fn compute_and_apply_normalization<T: Element>(
    samples: &[(String, Tensor<T>)],
) -> Result<(Vec<Tensor<T>>, NormalizationStats)> {
    let stats = NormalizationStats::compute(samples.iter().map(|(d, t)| (d.as_str(), t)))?;
    let normalized = samples
        .iter()
        .map(|(driver, image)| stats.apply(driver, image))
        .collect::<Result<_>>()?;
    Ok((normalized, stats))
}
