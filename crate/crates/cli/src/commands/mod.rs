mod eval;
mod gradcheck;
mod predict;
mod synth;
mod train;

pub use eval::{eval, SplitReport};
pub use gradcheck::gradcheck;
pub use predict::predict;
pub use synth::synth;
pub use train::train;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use drgaze::data::{DatasetSplit, SampleRecord};

use crate::error::{CliError, CliResult};

pub(crate) const SPLITS: [&str; 3] = ["train", "validation", "test"];

/// Directory that relative eye-image paths in a manifest resolve against.
pub(crate) fn manifest_base(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub(crate) fn partitions(split: &DatasetSplit) -> [&[SampleRecord]; 3] {
    [&split.train, &split.validation, &split.test]
}

/// Record each partition's driver ids under `split.<name>`.
pub(crate) fn split_meta(split: &DatasetSplit, meta: &mut BTreeMap<String, String>) {
    for (name, records) in SPLITS.iter().zip(partitions(split)) {
        let drivers: Vec<&str> = DatasetSplit::drivers(records).into_iter().collect();
        meta.insert(format!("split.{name}"), drivers.join(","));
    }
}

/// Rebuild a split from driver lists stored in checkpoint metadata.
pub(crate) fn split_from_meta(
    records: &[SampleRecord],
    meta: &BTreeMap<String, String>,
) -> CliResult<Option<DatasetSplit>> {
    let mut lists = Vec::new();
    for name in SPLITS {
        match meta.get(&format!("split.{name}")) {
            Some(v) => lists.push(v.split(',').filter(|s| !s.is_empty()).collect::<BTreeSet<&str>>()),
            None => return Ok(None),
        }
    }
    let mut split = DatasetSplit::default();
    let mut unknown = BTreeSet::new();
    for r in records {
        let id = r.driver_id.as_str();
        let target = if lists[0].contains(id) {
            &mut split.train
        } else if lists[1].contains(id) {
            &mut split.validation
        } else if lists[2].contains(id) {
            &mut split.test
        } else {
            unknown.insert(id);
            continue;
        };
        target.push(r.clone());
    }
    if !unknown.is_empty() {
        let ids: Vec<&str> = unknown.into_iter().collect();
        return Err(CliError::usage(anyhow::anyhow!(
            "manifest drivers {} are not part of the checkpoint's split",
            ids.join(", ")
        )));
    }
    Ok(Some(split))
}
