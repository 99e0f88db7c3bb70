//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use ltmx::config::ExperimentConfig;
use ltmx::data::{pair_sources, LabeledSource, ModalityInput, PairedDataset, TabularRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

pub mod oracle {
    //! Double-double reference implementations. They work with probabilities
    //! directly (exp, products, one log at the end) instead of shifted logits.
    use super::*;

    fn tf(x: f64) -> TwoFloat {
        TwoFloat::from(x)
    }

    /// `-log(weight_y e^{v_y} / sum_c weight_c e^{v_c})`.
    fn weighted_ce(logits: &[f64], label: usize, weights: &[TwoFloat]) -> f64 {
        let terms: Vec<TwoFloat> = logits.iter().zip(weights).map(|(&v, &w)| tf(v).exp() * w).collect();
        let z = terms.iter().fold(tf(0.0), |a, &b| a + b);
        f64::from(-(terms[label] / z).ln())
    }

    pub fn ce(logits: &[f64], label: usize) -> f64 {
        weighted_ce(logits, label, &vec![tf(1.0); logits.len()])
    }

    pub fn bal(logits: &[f64], label: usize, priors: &[f64]) -> f64 {
        let w: Vec<TwoFloat> = priors.iter().map(|&p| tf(p)).collect();
        weighted_ce(logits, label, &w)
    }

    pub fn inv(logits: &[f64], label: usize, priors: &[f64], reversed: &[f64]) -> f64 {
        let w: Vec<TwoFloat> = priors.iter().zip(reversed).map(|(&p, &q)| tf(p) / tf(q)).collect();
        weighted_ce(logits, label, &w)
    }

    /// Softmax probability of the true class.
    pub fn tcp(logits: &[f64], label: usize) -> f64 {
        let terms: Vec<TwoFloat> = logits.iter().map(|&v| tf(v).exp()).collect();
        let z = terms.iter().fold(tf(0.0), |a, &b| a + b);
        f64::from(terms[label] / z)
    }

    pub fn confidence(tcp_hat: f64, tcp_true: f64) -> f64 {
        let d = tf(tcp_hat) - tf(tcp_true);
        f64::from(d * d)
    }

    pub fn unified(fusion: f64, cls: &[f64], conf: &[f64], lambda: f64) -> f64 {
        let aux = cls.iter().chain(conf).fold(tf(0.0), |a, &b| a + tf(b));
        f64::from(tf(fusion) + tf(lambda) * aux)
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

/// `|a - b| / max(|a|, |b|)` over whole vectors, with a floor for all-zero gradients.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn random_logits(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Strictly positive probability vector, not necessarily sorted.
pub fn random_priors(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / z).collect()
}

/// One-modality tabular dataset with `counts[c]` items of class `c`; cheap to subsample.
pub fn counting_dataset(counts: &[usize]) -> PairedDataset {
    let mut items = Vec::new();
    let mut labels = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        for i in 0..n {
            items.push(ModalityInput::Tabular(TabularRecord {
                categorical: vec![],
                numeric: vec![i as f32],
            }));
            labels.push(class);
        }
    }
    let src = LabeledSource::new("pool", counts.len(), items, labels).unwrap();
    pair_sources(vec![Arc::new(src)], 0).unwrap()
}

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

/// Small case-1 glyph grid, quick enough for CLI tests.
pub const GLYPH_SMALL: &str = r#"
name = "glyph-small"
case = "case1"
seeds = [1, 2]

[dataset]
kind = "glyph"
train_per_class = 30
test_per_class = 20
head_count = 30
test_head_count = 20

[grid]
train_ratios = [10.0]
test_specs = ["forward_10", "backward_10"]
variants = ["proposed", "tcp_ablated"]

[model]
expert_hidden = 16

[model.image_encoder]
channels = [4, 4]
fc = [16, 16]

[train]
epochs = 2
batch_size = 32

[train.optimizer]
lr = 1e-3

[adapt.fit]
epochs = 2
batch_size = 32
"#;

/// Small case-2 lesion run.
pub const LESION_SMALL: &str = r#"
name = "lesion-small"
case = "case2"
seeds = [3]

[dataset]
kind = "lesion"
train_fraction = 0.8

[dataset.lesion]
benign = 150
malignant = 10

[grid]
variants = ["proposed"]

[model]
expert_hidden = 16

[model.image_encoder]
channels = [4, 4]
fc = [16, 16]

[train]
epochs = 2
batch_size = 32

[train.optimizer]
lr = 1e-3
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Run the CLI in-process and return its exit code.
pub fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["ltmx"];
    full.extend_from_slice(args);
    ltmx::cli::main_from_args(full)
}
