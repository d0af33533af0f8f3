//! Seeded, deterministic data splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn group_by_label<L: Ord + Copy>(labels: &[L]) -> BTreeMap<L, Vec<usize>> {
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

/// Partitions `0..labels.len()` into `k` folds preserving class proportions.
///
/// Each class is shuffled and dealt round-robin; the dealing cursor carries
/// over between classes so overall fold sizes also differ by at most one.
pub fn stratified_kfold<L: Ord + Copy>(labels: &[L], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::domain(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::domain(format!("k = {k} exceeds {} samples", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0;
    for (_, mut idx) in group_by_label(labels) {
        idx.shuffle(&mut rng);
        for i in idx {
            folds[cursor].push(i);
            cursor = (cursor + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of `fold` within `0..n`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Per-class holdout: each class sends `round(n_c * fraction)` members to the
/// held-out side. Returns `(train, held_out)`, both sorted.
pub fn stratified_holdout<L: Ord + Copy>(labels: &[L], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (_, mut idx) in group_by_label(labels) {
        idx.shuffle(&mut rng);
        let n_held = (idx.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&idx[..n_held]);
        train.extend_from_slice(&idx[n_held..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

/// Seeded shuffle split of `0..n` into `(train, validation)`.
pub fn shuffle_split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::domain(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
