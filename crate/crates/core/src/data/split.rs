use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SampleRecord;
use crate::error::{Error, Result};

/// Driver-disjoint train / validation / test partitions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<SampleRecord>,
    pub validation: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl DatasetSplit {
    pub fn drivers(records: &[SampleRecord]) -> BTreeSet<&str> {
        records.iter().map(|r| r.driver_id.as_str()).collect()
    }
}

/// Hold out `n_val` drivers for validation and `n_test` for testing; every
/// other driver trains. Records keep their manifest order within each
/// partition.
pub fn split_by_driver(records: &[SampleRecord], n_val: usize, n_test: usize, seed: u64) -> Result<DatasetSplit> {
    let mut drivers: Vec<&str> = DatasetSplit::drivers(records).into_iter().collect();
    let needed = n_val + n_test + 1;
    if drivers.len() < needed.max(3) {
        return Err(Error::Split(format!(
            "need at least {} distinct drivers, found {}",
            needed.max(3),
            drivers.len()
        )));
    }
    drivers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation: BTreeSet<&str> = drivers[..n_val].iter().copied().collect();
    let test: BTreeSet<&str> = drivers[n_val..n_val + n_test].iter().copied().collect();

    let mut split = DatasetSplit::default();
    for r in records {
        let id = r.driver_id.as_str();
        let part = if validation.contains(id) {
            &mut split.validation
        } else if test.contains(id) {
            &mut split.test
        } else {
            &mut split.train
        };
        part.push(r.clone());
    }
    Ok(split)
}
