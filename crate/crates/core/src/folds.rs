use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject-level k-fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub subject_to_fold: BTreeMap<String, usize>,
}

/// Train/validation/test split induced by choosing one test fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRoles {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train_folds: Vec<usize>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle subjects with `seed` and deal them round-robin into `k` folds.
pub fn make_folds(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k = {k}; need k >= 3 for train/val/test")));
    }
    if k > subject_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of subjects ({})",
            subject_ids.len()
        )));
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate subject ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let subject_to_fold = ids.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldAssignment { k, subject_to_fold })
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.subject_to_fold.values().for_each(|&f| sizes[f] += 1);
        sizes
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<String> {
        self.subject_to_fold
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// Validation fold is `(test_fold + 1) mod k`; every other fold trains.
    pub fn roles(&self, test_fold: usize) -> Result<FoldRoles> {
        if test_fold >= self.k {
            return Err(Error::InvalidArgument(format!(
                "test fold {test_fold} outside [0, {})",
                self.k
            )));
        }
        let val_fold = (test_fold + 1) % self.k;
        let train_folds: Vec<usize> = (0..self.k).filter(|&f| f != test_fold && f != val_fold).collect();
        let train = train_folds.iter().flat_map(|&f| self.subjects_in(f)).collect();
        Ok(FoldRoles {
            test_fold,
            val_fold,
            train_folds,
            train,
            val: self.subjects_in(val_fold),
            test: self.subjects_in(test_fold),
        })
    }
}
