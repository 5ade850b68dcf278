//! Manifests, per-driver normalization, driver-disjoint splits, and a
//! synthetic dataset generator.

mod manifest;
mod normalize;
mod split;
mod synth;

pub use manifest::{format_manifest, load_manifest, parse_manifest, resolve, write_manifest, SampleRecord};
pub use normalize::{channel_stats, compute_and_apply_normalization, ChannelStats, NormalizationStats};
pub use split::{split_by_driver, DatasetSplit};
pub use synth::{least_squares_l1, synthesize_dataset, SynthConfig, SynthReport, MANIFEST_NAME};

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::load_tensor;
use crate::model::{EyeBranchConfig, FEATURE_LEN};
use crate::tensor::{Element, Tensor};

/// Samples held in memory with normalized eye images, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub drivers: Vec<String>,
    pub eyes: Vec<Tensor<T>>,
    pub features: Vec<[f64; FEATURE_LEN]>,
    pub targets: Vec<[f64; 2]>,
}

/// One assembled batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub eye: Tensor<T>,
    pub features: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Element> Dataset<T> {
    pub fn len(&self) -> usize {
        self.eyes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eyes.is_empty()
    }

    /// Read every eye tensor referenced by `records` (paths relative to
    /// `base`), check it against `eye`, and normalize it with its driver's
    /// statistics. Drivers missing from `stats` get statistics computed from
    /// their own images here, which are added to `stats`.
    pub fn load(
        records: &[SampleRecord],
        base: &Path,
        eye: &EyeBranchConfig,
        stats: &mut NormalizationStats,
    ) -> Result<Self> {
        let raw = records
            .iter()
            .map(|r| {
                let path = resolve(base, &r.eye_image);
                let image = load_tensor::<T>(&path)?;
                let expected = [eye.channels, eye.height, eye.width];
                if image.shape() != expected {
                    return Err(Error::format(
                        path,
                        format!("eye image has shape {:?}, model expects {expected:?}", image.shape()),
                    ));
                }
                Ok(image)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(records, raw, stats)
    }

    /// Like [`Dataset::load`] but with images already in memory.
    pub fn from_images(records: &[SampleRecord], raw: Vec<Tensor<T>>, stats: &mut NormalizationStats) -> Result<Self> {
        let missing = records
            .iter()
            .zip(&raw)
            .filter(|(r, _)| !stats.drivers.contains_key(&r.driver_id))
            .map(|(r, img)| (r.driver_id.as_str(), img));
        let fresh = NormalizationStats::compute(missing)?;
        stats.extend(fresh);
        let eyes = records
            .iter()
            .zip(&raw)
            .map(|(r, img)| stats.apply(&r.driver_id, img))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            drivers: records.iter().map(|r| r.driver_id.clone()).collect(),
            eyes,
            features: records.iter().map(|r| r.features).collect(),
            targets: records.iter().map(|r| r.gaze).collect(),
        })
    }

    /// Stack the samples at `indices` into batch tensors. Targets are divided
    /// elementwise by `target_scale`.
    pub fn batch(&self, indices: &[usize], target_scale: [f64; 2]) -> Result<Batch<T>> {
        let first = indices.first().map(|&i| &self.eyes[i]).ok_or(Error::EmptyDataset)?;
        let mut eye_shape = vec![indices.len()];
        eye_shape.extend_from_slice(first.shape());
        let mut eye = Vec::with_capacity(indices.len() * first.numel());
        let mut features = Vec::with_capacity(indices.len() * FEATURE_LEN);
        let mut targets = Vec::with_capacity(indices.len() * 2);
        for &i in indices {
            eye.extend_from_slice(self.eyes[i].data());
            features.extend(self.features[i].iter().map(|&v| T::from_f64(v)));
            targets.push(T::from_f64(self.targets[i][0] / target_scale[0]));
            targets.push(T::from_f64(self.targets[i][1] / target_scale[1]));
        }
        Ok(Batch {
            eye: Tensor::new(eye_shape, eye)?,
            features: Tensor::new(vec![indices.len(), FEATURE_LEN], features)?,
            targets: Tensor::new(vec![indices.len(), 2], targets)?,
        })
    }
}
