use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::types::{LabeledSource, PairedDataset, PairedRecord};
use crate::error::{Error, Result};
use crate::rng;

/// Pair two labeled sources class by class. See [`pair_sources`].
pub fn pair_modalities(source_a: Arc<LabeledSource>, source_b: Arc<LabeledSource>, seed: u64) -> Result<PairedDataset> {
    pair_sources(vec![source_a, source_b], seed)
}

/// Build a paired dataset from one source per modality.
///
/// Within each class every source's items are shuffled with a seed-derived stream and
/// zipped; the class yields `min_m count_m(k)` samples and leftovers are dropped.
/// Sample ids are assigned consecutively in class order.
pub fn pair_sources(sources: Vec<Arc<LabeledSource>>, seed: u64) -> Result<PairedDataset> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Config("pairing needs at least one source".into()))?;
    let num_classes = first.num_classes;
    let label_set = |s: &LabeledSource| s.labels.iter().copied().collect::<BTreeSet<_>>();
    let reference = label_set(first);
    for s in &sources[1..] {
        if s.num_classes != num_classes || label_set(s) != reference {
            return Err(Error::Config(format!(
                "label sets of sources `{}` and `{}` differ",
                first.id, s.id
            )));
        }
    }
    for s in &sources {
        let counts = s.class_counts();
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!("class {k} is empty in source `{}`", s.id)));
        }
    }

    let mut records = Vec::new();
    let mut next_id = 0u64;
    for class in 0..num_classes {
        let mut pools: Vec<Vec<usize>> = sources
            .iter()
            .enumerate()
            .map(|(m, s)| {
                let mut pool: Vec<usize> = s
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == class)
                    .map(|(i, _)| i)
                    .collect();
                let mut stream = rng::stream(seed, "pair", (class * sources.len() + m) as u64);
                pool.shuffle(&mut stream);
                pool
            })
            .collect();
        let n = pools.iter().map(Vec::len).min().unwrap_or(0);
        for p in &mut pools {
            p.truncate(n);
        }
        for i in 0..n {
            records.push(PairedRecord {
                label: class,
                id: next_id,
                refs: pools.iter().map(|p| p[i]).collect(),
            });
            next_id += 1;
        }
    }
    PairedDataset::new(sources, num_classes, records)
}
