use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Indices into `Dataset::lists` for each part of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random list-level partition. Every part receives at least one list.
pub fn split_lists(dataset: &Dataset, ratios: [u32; 3], seed: u64) -> Result<SplitIndices> {
    let n = dataset.lists.len();
    if n < 3 {
        return Err(Error::Data(alloc::format!("need at least 3 lists to split, have {n}")));
    }
    if ratios.iter().any(|&r| r == 0) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let total: u64 = ratios.iter().map(|&r| u64::from(r)).sum();
    let part = |r: u32| ((n as u64 * u64::from(r)) / total).max(1) as usize;
    let n_valid = part(ratios[1]);
    let n_test = part(ratios[2]);
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n_train + n_valid);
    let valid = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        valid,
        test,
    })
}
