use rand::seq::SliceRandom;

use super::types::{ClassDistribution, DistributionSpec, PairedDataset, SplitKind};
use crate::error::{Error, Result};
use crate::rng;

/// Round half up, never below one.
fn round_count(x: f64) -> usize {
    ((x + 0.5).floor() as usize).max(1)
}

/// Per-class target sizes for a split.
///
/// Forward: `N_k = round(N_head * r^(-k/(K-1)))` for zero-based class `k`, so class 0 is the
/// head. Backward is the same vector reversed; uniform gives every class `N_head`.
pub fn target_counts(num_classes: usize, head_count: usize, spec: &DistributionSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    if num_classes == 0 {
        return Err(Error::Config("number of classes must be positive".into()));
    }
    if head_count == 0 {
        return Err(Error::Config("head class count must be positive".into()));
    }
    let decay = |k: usize| -> usize {
        if num_classes == 1 {
            return head_count;
        }
        let exponent = -(k as f64) / (num_classes as f64 - 1.0);
        round_count(head_count as f64 * spec.ratio.powf(exponent))
    };
    let counts = match spec.kind {
        SplitKind::Uniform => vec![head_count; num_classes],
        SplitKind::Forward => (0..num_classes).map(decay).collect(),
        SplitKind::Backward => (0..num_classes).rev().map(decay).collect(),
    };
    Ok(counts)
}

/// Draw a long-tailed (or uniform) subset without replacement from each class pool.
pub fn subsample_longtailed(
    dataset: &PairedDataset,
    spec: &DistributionSpec,
    head_count: usize,
    seed: u64,
) -> Result<PairedDataset> {
    let targets = target_counts(dataset.num_classes, head_count, spec)?;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, r) in dataset.records.iter().enumerate() {
        pools[r.label].push(i);
    }
    for (class, (pool, &need)) in pools.iter().zip(&targets).enumerate() {
        if pool.len() < need {
            return Err(Error::InsufficientSamples {
                class,
                available: pool.len(),
                required: need,
                shortfall: need - pool.len(),
            });
        }
    }
    let mut records = Vec::with_capacity(targets.iter().sum());
    for (class, (mut pool, &need)) in pools.into_iter().zip(&targets).enumerate() {
        let mut rng = rng::stream(seed, "subsample", class as u64);
        pool.shuffle(&mut rng);
        records.extend(pool[..need].iter().map(|&i| dataset.records[i].clone()));
    }
    dataset.with_records(records)
}

/// Empirical class distribution of a dataset.
pub fn class_priors(dataset: &PairedDataset) -> Result<ClassDistribution> {
    if dataset.is_empty() {
        return Err(Error::Empty("cannot compute class priors of an empty dataset".into()));
    }
    ClassDistribution::from_counts(dataset.class_counts())
}

/// Split each class into a train part of `round(fraction * n_k)` items and a test part.
pub fn stratified_split(
    dataset: &PairedDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(PairedDataset, PairedDataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, r) in dataset.records.iter().enumerate() {
        pools[r.label].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut pool) in pools.into_iter().enumerate() {
        let mut stream = rng::stream(seed, "split", class as u64);
        pool.shuffle(&mut stream);
        let cut = (pool.len() as f64 * train_fraction + 0.5).floor() as usize;
        train.extend(pool[..cut].iter().map(|&i| dataset.records[i].clone()));
        test.extend(pool[cut..].iter().map(|&i| dataset.records[i].clone()));
    }
    Ok((dataset.with_records(train)?, dataset.with_records(test)?))
}
