//! Condition-level splitting with an unseen-condition holdout.
//!
//! Held-out conditions go to the test set whole. Every other condition is
//! split in time: its earliest windows form the training pool and its
//! latest windows are tested, so seen-condition test windows never overlap
//! training windows. The training pool is then split at random, window by
//! window, into training and validation.

use htgnn_core::WindowSample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Conditions with windows in training and validation.
    pub train: Vec<usize>,
    /// Conditions with windows in the test set.
    pub test: Vec<usize>,
    /// Held-out conditions; a subset of `test`.
    pub unseen: Vec<usize>,
    /// Share of each seen condition's windows (its tail) that is tested.
    pub seen_test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

/// Chooses `holdout` unseen conditions out of `n_conditions` and sizes the
/// seen-condition test tails so that about `test_fraction` of all windows
/// are tested, assuming cases of equal length.
pub fn make_split(
    n_conditions: usize,
    holdout: usize,
    test_fraction: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if holdout >= n_conditions {
        return Err(HarnessError::Split(format!(
            "cannot hold out {holdout} of {n_conditions} conditions"
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) || !(0.0..1.0).contains(&validation_fraction) {
        return Err(HarnessError::Split("fractions must lie in [0, 1)".into()));
    }
    let mut ids: Vec<usize> = (0..n_conditions).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut unseen = ids[..holdout].to_vec();
    unseen.sort_unstable();
    let train: Vec<usize> = (0..n_conditions).filter(|i| !unseen.contains(i)).collect();

    let n = n_conditions as f64;
    let seen_test_fraction = ((test_fraction * n - holdout as f64) / (n - holdout as f64)).clamp(0.0, 1.0);
    let test = if seen_test_fraction > 0.0 {
        (0..n_conditions).collect()
    } else {
        unseen.clone()
    };
    Ok(SplitPlan {
        train,
        test,
        unseen,
        seen_test_fraction,
        validation_fraction,
        seed,
    })
}

/// Window indices per partition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn is_unseen(&self, case_id: usize) -> bool {
        self.unseen.binary_search(&case_id).is_ok()
    }

    /// Partitions `windows`, which must list each case's windows in time
    /// order. Windows of unknown cases are rejected.
    pub fn assign(&self, windows: &[WindowSample]) -> Result<WindowSplit> {
        let mut per_case: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, w) in windows.iter().enumerate() {
            per_case.entry(w.case_id).or_default().push(i);
        }
        let mut out = WindowSplit::default();
        let mut pool = Vec::new();
        for (case, idx) in per_case {
            if self.is_unseen(case) {
                out.test.extend(idx);
            } else if self.train.binary_search(&case).is_ok() {
                let tail = (self.seen_test_fraction * idx.len() as f64).round() as usize;
                let cut = idx.len() - tail;
                pool.extend_from_slice(&idx[..cut]);
                out.test.extend_from_slice(&idx[cut..]);
            } else {
                return Err(HarnessError::Split(format!("case {case} is not in the plan")));
            }
        }
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed));
        let n_val = (self.validation_fraction * pool.len() as f64).round() as usize;
        out.validation = pool[..n_val].to_vec();
        out.train = pool[n_val..].to_vec();
        out.validation.sort_unstable();
        out.train.sort_unstable();
        out.test.sort_unstable();
        Ok(out)
    }
}
