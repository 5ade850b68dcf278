use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use drgaze::data::{load_manifest, split_by_driver, Dataset, NormalizationStats};
use drgaze::model::{save_checkpoint, Checkpoint};
use drgaze::train::{train_loop, EpochMetrics};
use drgaze::{Element, Precision};

use super::{manifest_base, split_meta};
use crate::args::TrainArgs;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const STATS_FILE: &str = "normalization.txt";

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let mut config = args.run.resolve()?;
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    let manifest = config.manifest_path(args.run.data_dir.as_deref())?;
    match config.train.precision {
        Precision::F32 => run::<f32>(&config, &manifest),
        Precision::F64 => run::<f64>(&config, &manifest),
    }
}

fn run<T: Element>(config: &RunConfig, manifest: &Path) -> CliResult<()> {
    let records = load_manifest(manifest)?;
    let base = manifest_base(manifest);
    let split = split_by_driver(&records, config.val_drivers, config.test_drivers, config.train.seed)?;
    let eye = &config.train.model.eye;
    let mut stats = NormalizationStats::default();
    let train_set = Dataset::<T>::load(&split.train, &base, eye, &mut stats)?;
    let val_set = Dataset::<T>::load(&split.validation, &base, eye, &mut stats)?;
    // test drivers are normalized with their own statistics too, so record them
    Dataset::<T>::load(&split.test, &base, eye, &mut stats)?;

    let out = &config.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);
    let mut write_error = None;
    let mut emit = |line: &str| {
        println!("{line}");
        if let Err(e) = writeln!(metrics, "{line}") {
            write_error.get_or_insert(e);
        }
    };
    emit(EpochMetrics::CSV_HEADER);
    let outcome = train_loop(&config.train, &train_set, Some(&val_set), |m| emit(&m.csv_line()));
    if let Some(e) = write_error {
        return Err(CliError::usage(
            anyhow::Error::new(e).context(format!("writing {}", metrics_path.display())),
        ));
    }
    metrics.flush()?;
    let outcome = outcome?;

    let t = &config.train;
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), t.seed.to_string());
    meta.insert("precision".to_string(), t.precision.to_string());
    meta.insert("batch_size".to_string(), t.batch_size.to_string());
    meta.insert("epochs".to_string(), t.epochs.to_string());
    split_meta(&split, &mut meta);

    let mut final_meta = meta.clone();
    final_meta.insert("epoch".to_string(), (t.epochs - 1).to_string());
    let final_ckpt = Checkpoint {
        model: outcome.model,
        meta: final_meta,
    };
    save_checkpoint(out.join(FINAL_CHECKPOINT), &final_ckpt)?;
    meta.insert("epoch".to_string(), outcome.best_epoch.to_string());
    let best_ckpt = Checkpoint {
        model: outcome.best,
        meta,
    };
    save_checkpoint(out.join(BEST_CHECKPOINT), &best_ckpt)?;
    stats.save(out.join(STATS_FILE))?;
    eprintln!(
        "trained {} epochs ({} steps); best epoch {}; outputs in {}",
        t.epochs,
        outcome.steps,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}
