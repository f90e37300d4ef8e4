//! Stratified k-fold planning on the joint `(sed, soc)` label.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::labels::{decode_labels, joint_class, NUM_JOINT, NUM_SOC};
use crate::error::{config_err, Result};

/// Share of each fold's training pool held out for validation.
pub const VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    pub group_by_participant: bool,
    /// Test fold of every window.
    pub fold_of: Vec<usize>,
    pub folds: Vec<FoldSplit>,
}

impl SplitPlan {
    /// Hex SHA-256 over the fold assignments and every split, for checking
    /// that separate runs shared the same partition.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for &f in &self.fold_of {
            h.update((f as u64).to_le_bytes());
        }
        for fold in &self.folds {
            for part in [&fold.train, &fold.val, &fold.test] {
                h.update((part.len() as u64).to_le_bytes());
                for &i in part {
                    h.update((i as u64).to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn class_name(c: usize) -> String {
    let (s, o) = decode_labels((c / NUM_SOC) as u8, (c % NUM_SOC) as u8).expect("joint class in range");
    format!("({s}, {o})")
}

fn members_by_class(labels: &[(u8, u8)], ids: impl Iterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); NUM_JOINT];
    for i in ids {
        let (s, o) = labels[i];
        by[joint_class(s, o)].push(i);
    }
    by
}

/// Number of validation windows per joint class: `round(0.2·pool)` split
/// across classes by largest remainder (ties to the lower class index).
fn validation_quota(counts: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let total = (n as f64 * VAL_FRACTION).round() as usize;
    let mut quota: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(counts[c] * total % n));
    let missing = total - quota.iter().sum::<usize>();
    for &c in order.iter().take(missing) {
        quota[c] += 1;
    }
    quota
}

fn fold_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn build_folds(labels: &[(u8, u8)], fold_of: &[usize], k: usize, seed: u64) -> Vec<FoldSplit> {
    (0..k)
        .map(|f| {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            let pool = members_by_class(labels, (0..labels.len()).filter(|&i| fold_of[i] != f));
            let quota = validation_quota(&pool.iter().map(Vec::len).collect::<Vec<_>>());
            let mut rng = fold_rng(seed, 1 + f as u64);
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (mut members, q) in pool.into_iter().zip(quota) {
                members.shuffle(&mut rng);
                val.extend_from_slice(&members[..q]);
                train.extend_from_slice(&members[q..]);
            }
            train.sort_unstable();
            val.sort_unstable();
            FoldSplit { train, val, test }
        })
        .collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 2 {
        return Err(config_err!("k-fold needs k >= 2, got {k}"));
    }
    if n == 0 {
        return Err(config_err!("cannot split an empty dataset"));
    }
    Ok(())
}

/// Window-level stratified k-fold. Each joint class present must have at
/// least `k` windows; its windows are shuffled and dealt round-robin,
/// continuing from where the previous class stopped so fold sizes stay
/// within one of each other.
pub fn stratified_kfold(labels: &[(u8, u8)], k: usize, seed: u64) -> Result<SplitPlan> {
    check_k(k, labels.len())?;
    let mut classes = members_by_class(labels, 0..labels.len());
    for (c, m) in classes.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            return Err(config_err!("joint class {} has {} windows, fewer than k = {k}", class_name(c), m.len()));
        }
    }
    let mut rng = fold_rng(seed, 0);
    let mut fold_of = vec![0; labels.len()];
    let mut offset = 0;
    for members in &mut classes {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    let folds = build_folds(labels, &fold_of, k, seed);
    Ok(SplitPlan { k, seed, group_by_participant: false, fold_of, folds })
}

/// Participant-grouped k-fold: every participant's windows share a test
/// fold. Participants are shuffled, then placed largest first on the
/// currently smallest fold. Validation is still stratified per window.
pub fn grouped_kfold(labels: &[(u8, u8)], participants: &[String], k: usize, seed: u64) -> Result<SplitPlan> {
    check_k(k, labels.len())?;
    if participants.len() != labels.len() {
        return Err(config_err!("{} participant ids for {} windows", participants.len(), labels.len()));
    }
    let mut ids: Vec<&str> = participants.iter().map(String::as_str).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < k {
        return Err(config_err!("participant-grouped k-fold needs at least k = {k} participants, found {}", ids.len()));
    }
    let mut rng = fold_rng(seed, 0);
    ids.shuffle(&mut rng);
    let size = |p: &str| participants.iter().filter(|q| q.as_str() == p).count();
    ids.sort_by_key(|&p| std::cmp::Reverse(size(p)));
    let mut load = vec![0usize; k];
    let mut fold_of = vec![0; labels.len()];
    for p in ids {
        let f = (0..k).min_by_key(|&f| load[f]).expect("k >= 2");
        for (i, q) in participants.iter().enumerate() {
            if q == p {
                fold_of[i] = f;
                load[f] += 1;
            }
        }
    }
    let folds = build_folds(labels, &fold_of, k, seed);
    Ok(SplitPlan { k, seed, group_by_participant: true, fold_of, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_quota() {
        assert_eq!(validation_quota(&[8; 12]).iter().sum::<usize>(), 19);
        assert_eq!(validation_quota(&[10, 0, 5]), vec![2, 0, 1]);
        assert_eq!(validation_quota(&[]), Vec::<usize>::new());
    }

    #[test]
    fn too_small_class_is_named() {
        let labels = vec![(0, 0); 4];
        let err = stratified_kfold(&labels, 5, 1).unwrap_err().to_string();
        assert!(err.contains("(AL, A)"), "{err}");
    }
}
