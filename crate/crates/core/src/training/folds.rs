use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::TrainError;

/// Seeded k-fold partition of `0..n`. Each fold is sorted; fold sizes differ
/// by at most one, with the larger folds first.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(TrainError::Config(format!("{n} samples cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Indices outside fold `held_out`, ascending.
pub fn training_indices(folds: &[Vec<usize>], held_out: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    idx.sort_unstable();
    idx
}

/// sha256 over the fold assignment, used to prove that paired runs saw the
/// same splits.
pub fn fold_hash(folds: &[Vec<usize>]) -> String {
    let mut h = Sha256::new();
    for (i, f) in folds.iter().enumerate() {
        h.update(format!("fold {i}:").as_bytes());
        for idx in f {
            h.update(idx.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
