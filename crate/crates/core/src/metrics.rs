//! Accuracy, F1 scores, repetition summaries and the result CSVs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Percentage of matching entries.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// `confusion[true][pred]`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    check(preds, labels)?;
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::Invalid(format!(
                "class index {} outside 0..{num_classes}",
                p.max(l)
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// F1 per class; `None` for classes that appear in neither labels nor predictions.
pub fn per_class_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Option<f64>>> {
    let m = confusion_matrix(preds, labels, num_classes)?;
    Ok((0..num_classes)
        .map(|c| {
            let tp = m[c][c] as f64;
            let actual: usize = m[c].iter().sum();
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            if actual == 0 && predicted == 0 {
                return None;
            }
            // 2PR/(P+R) = 2TP/(actual+predicted); zero when TP = 0.
            Some(2.0 * tp / (actual + predicted) as f64)
        })
        .collect())
}

/// Unweighted mean of the per-class F1 over classes present in labels or predictions.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let scores: Vec<f64> = per_class_f1(preds, labels, num_classes)?
        .into_iter()
        .flatten()
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// F1 of one designated positive class.
pub fn binary_f1(preds: &[usize], labels: &[usize], positive: usize) -> Result<f64> {
    check(preds, labels)?;
    let tp = preds
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == positive && l == positive)
        .count();
    let actual = labels.iter().filter(|&&l| l == positive).count();
    let predicted = preds.iter().filter(|&&p| p == positive).count();
    if actual + predicted == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (actual + predicted) as f64)
}

/// Mean and standard error (sample standard deviation over sqrt(n)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "standard error needs at least 2 values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Summary {
        mean,
        std_err: (var / n as f64).sqrt(),
        n,
    })
}

/// Metrics of one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<Option<f64>>,
    /// F1 of class 1 for two-class tasks.
    pub positive_f1: Option<f64>,
    pub weights: [f64; 3],
    pub split: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn compute(
        preds: &[usize],
        labels: &[usize],
        num_classes: usize,
        weights: [f64; 3],
        split: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(preds, labels)?,
            macro_f1: macro_f1(preds, labels, num_classes)?,
            per_class_f1: per_class_f1(preds, labels, num_classes)?,
            positive_f1: if num_classes == 2 {
                Some(binary_f1(preds, labels, 1)?)
            } else {
                None
            },
            weights,
            split: split.into(),
            seed,
        })
    }
}

/// One row of the per-seed results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_variant: String,
    pub train_ir: f64,
    pub test_spec: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

/// One row of the summary file: one per (variant, train ratio, test split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model_variant: String,
    pub train_ir: f64,
    pub test_spec: String,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_se: Option<f64>,
    pub macro_f1_mean: f64,
    pub macro_f1_se: Option<f64>,
    pub w1_mean: f64,
    pub w2_mean: f64,
    pub w3_mean: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Group rows by (variant, train ratio, test split), in order of first appearance.
pub fn summarize_rows(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, u64, String)> = Vec::new();
    let mut groups: BTreeMap<(String, u64, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.model_variant.clone(), r.train_ir.to_bits(), r.test_spec.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let col = |f: fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let acc = col(|r| r.accuracy);
            let f1 = col(|r| r.macro_f1);
            SummaryRow {
                model_variant: key.0.clone(),
                train_ir: f64::from_bits(key.1),
                test_spec: key.2.clone(),
                n: g.len(),
                accuracy_mean: mean(&acc),
                accuracy_se: summarize(&acc).ok().map(|s| s.std_err),
                macro_f1_mean: mean(&f1),
                macro_f1_se: summarize(&f1).ok().map(|s| s.std_err),
                w1_mean: mean(&col(|r| r.w1)),
                w2_mean: mean(&col(|r| r.w2)),
                w3_mean: mean(&col(|r| r.w3)),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Outcome of running the same pipeline once per seed.
#[derive(Debug, Clone)]
pub struct RepeatReport<T> {
    pub records: Vec<(u64, T)>,
    pub failed: Vec<(u64, String)>,
    pub accuracy: Summary,
    pub macro_f1: Summary,
}

impl<T> RepeatReport<T> {
    pub fn partial(&self) -> bool {
        !self.failed.is_empty()
    }
}

/// Metrics a repetition must expose to be summarized.
pub trait RepMetrics {
    fn accuracy(&self) -> f64;
    fn macro_f1(&self) -> f64;
}

impl RepMetrics for EvalReport {
    fn accuracy(&self) -> f64 {
        self.accuracy
    }
    fn macro_f1(&self) -> f64 {
        self.macro_f1
    }
}

/// Run `run(seed)` for every seed on up to `parallel` threads, drop failed reps and
/// summarize the rest. Records come back in seed-list order regardless of scheduling.
pub fn repeat_and_summarize<T, F>(seeds: &[u64], parallel: usize, run: F) -> Result<RepeatReport<T>>
where
    T: RepMetrics + Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if seeds.len() < 2 {
        return Err(Error::Invalid(format!(
            "standard errors need at least 2 repetitions, got {}",
            seeds.len()
        )));
    }
    let results = run_seeds(seeds, parallel, &run);
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(t) => records.push((*seed, t)),
            Err(e) => failed.push((*seed, e.to_string())),
        }
    }
    let acc: Vec<f64> = records.iter().map(|(_, r)| r.accuracy()).collect();
    let f1: Vec<f64> = records.iter().map(|(_, r)| r.macro_f1()).collect();
    let (accuracy, macro_f1) = match (summarize(&acc), summarize(&f1)) {
        (Ok(a), Ok(f)) => (a, f),
        _ => {
            return Err(Error::Invalid(format!(
                "only {} of {} repetitions succeeded: {failed:?}",
                records.len(),
                seeds.len()
            )))
        }
    };
    Ok(RepeatReport {
        records,
        failed,
        accuracy,
        macro_f1,
    })
}

/// Apply `run` to every seed using up to `parallel` scoped threads, preserving order.
pub fn run_seeds<T, F>(seeds: &[u64], parallel: usize, run: &F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let parallel = parallel.max(1).min(seeds.len().max(1));
    if parallel == 1 {
        return seeds.iter().map(|&s| run(s)).collect();
    }
    let chunk = seeds.len().div_ceil(parallel);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&s| run(s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("repetition thread panicked"))
            .collect()
    })
}
