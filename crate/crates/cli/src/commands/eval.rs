use std::path::Path;

use drgaze::data::{load_manifest, split_by_driver, Dataset, DatasetSplit, NormalizationStats};
use drgaze::model::{load_checkpoint, Checkpoint};
use drgaze::train::evaluate;
use drgaze::{Element, Precision};

use super::{manifest_base, partitions, split_from_meta, SPLITS};
use crate::args::EvalArgs;
use crate::error::{CliError, CliResult};

/// Mean pixel L1 of one partition; `None` when the partition is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub name: &'static str,
    pub drivers: usize,
    pub samples: usize,
    pub mean_l1: Option<f64>,
}

pub fn eval(args: &EvalArgs) -> CliResult<Vec<SplitReport>> {
    let precision = match args.run.precision {
        Some(p) => p,
        None => peek_precision(&args.checkpoint)?,
    };
    let reports = match precision {
        Precision::F32 => run::<f32>(args)?,
        Precision::F64 => run::<f64>(args)?,
    };
    print_table(&reports);
    Ok(reports)
}

/// Precision recorded in the checkpoint metadata, `f32` when absent.
fn peek_precision(path: &Path) -> CliResult<Precision> {
    let ckpt = load_checkpoint::<f32>(path)?;
    Ok(match ckpt.meta.get("precision") {
        Some(p) => p.parse()?,
        None => Precision::F32,
    })
}

fn meta_usize(ckpt: &Checkpoint<impl Element>, key: &str) -> CliResult<Option<usize>> {
    ckpt.meta
        .get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::usage(anyhow::anyhow!("checkpoint meta {key} is not an integer: {v:?}")))
        })
        .transpose()
}

fn run<T: Element>(args: &EvalArgs) -> CliResult<Vec<SplitReport>> {
    let ckpt = load_checkpoint::<T>(&args.checkpoint)?;
    let config = args.run.resolve()?;
    if args.run.touches_model() && config.train.model != ckpt.model.config {
        return Err(CliError::usage(anyhow::anyhow!(
            "configured model {:?} does not match checkpoint model {:?}",
            config.train.model,
            ckpt.model.config
        )));
    }
    let manifest = config.manifest_path(args.run.data_dir.as_deref())?;
    let records = load_manifest(&manifest)?;
    let split = match split_from_meta(&records, &ckpt.meta)? {
        Some(split) => split,
        None => {
            let seed = match args.run.seed {
                Some(s) => s,
                None => meta_usize(&ckpt, "seed")?.unwrap_or(0) as u64,
            };
            split_by_driver(&records, config.val_drivers, config.test_drivers, seed)?
        }
    };
    let batch_size = match args.run.batch_size {
        Some(b) => b,
        None => meta_usize(&ckpt, "batch_size")?.unwrap_or(config.train.batch_size),
    };
    let base = manifest_base(&manifest);
    let mut stats = NormalizationStats::default();
    let mut reports = Vec::new();
    for (name, records) in SPLITS.iter().zip(partitions(&split)) {
        let data = Dataset::<T>::load(records, &base, &ckpt.model.config.eye, &mut stats)?;
        let mean_l1 = if data.is_empty() {
            None
        } else {
            Some(evaluate(&ckpt.model, &data, batch_size)?)
        };
        reports.push(SplitReport {
            name,
            drivers: DatasetSplit::drivers(records).len(),
            samples: records.len(),
            mean_l1,
        });
    }
    Ok(reports)
}

fn print_table(reports: &[SplitReport]) {
    println!("{:<12}{:>9}{:>10}  mean L1 (px)", "split", "drivers", "samples");
    for r in reports {
        let l1 = r.mean_l1.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<12}{:>9}{:>10}  {l1}", r.name, r.drivers, r.samples);
    }
}
