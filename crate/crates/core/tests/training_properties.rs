//! Behaviour of trained models: expert specialization, confidence calibration, fitting capacity.
mod common;

use ltmx::aggregation::{aggregate_with, AggregationWeights};
use ltmx::config::{ExperimentConfig, Variant};
use ltmx::data::PairedSample;
use ltmx::experiment::{build_sources, prepare_splits, train_variant, variant_samples};
use ltmx::model::{argmax, ExpertBundle};

fn train_and_test(text: &str) -> (ExpertBundle, Vec<PairedSample>, Vec<PairedSample>) {
    let cfg: ExperimentConfig = common::config(text);
    let seed = cfg.seeds[0];
    let sources = build_sources(&cfg.dataset, seed).unwrap();
    let prep = prepare_splits(&cfg, &sources, seed).unwrap();
    let all = sources.all();
    let train = prep.train[0].manifest.to_dataset(&all).unwrap();
    let test = prep.test[0].manifest.to_dataset(&all).unwrap();
    let (bundle, _) = train_variant(&cfg, &sources, &train, Variant::Proposed, seed).unwrap();
    (
        bundle,
        variant_samples(&train, Variant::Proposed),
        variant_samples(&test, Variant::Proposed),
    )
}

const FORWARD_10: &str = r#"
name = "specialization"
case = "case1"
seeds = [4]

[dataset]
kind = "glyph"
train_per_class = 150
test_per_class = 40
head_count = 150
test_head_count = 40

[grid]
train_ratios = [10.0]
test_specs = ["uniform"]
variants = ["proposed"]

[model]
expert_hidden = 32

[model.image_encoder]
channels = [4, 8]
fc = [32, 32]

[train]
epochs = 15
batch_size = 64

[train.optimizer]
lr = 1e-3
"#;

/// Per-expert accuracy over the samples whose label is in `classes`.
fn expert_accuracy(bundle: &ExpertBundle, samples: &[PairedSample], classes: std::ops::Range<usize>) -> [f64; 3] {
    let picked: Vec<&PairedSample> = samples.iter().filter(|s| classes.contains(&s.label)).collect();
    let mut hits = [0.0; 3];
    for s in &picked {
        let logits = bundle.expert_logits(s).unwrap();
        for (k, l) in logits.iter().enumerate() {
            if argmax(l) == s.label {
                hits[k] += 1.0;
            }
        }
    }
    hits.map(|h| h / picked.len() as f64)
}

#[test]
fn experts_specialize_and_confidence_tracks_correctness() {
    let (bundle, _, test) = train_and_test(FORWARD_10);

    // Head classes are 0..3 and tail classes 7..10 under the forward split.
    let head = expert_accuracy(&bundle, &test, 0..3);
    let tail = expert_accuracy(&bundle, &test, 7..10);
    assert!(head[0] >= head[2], "head accuracy {head:?}");
    assert!(tail[2] >= tail[0], "tail accuracy {tail:?}");

    let (mut right, mut wrong) = (Vec::new(), Vec::new());
    for s in &test {
        let conf = bundle.confidence_forward(s).unwrap();
        for (p, &t) in conf.probs.iter().zip(&conf.tcp_hat) {
            if argmax(p) == s.label {
                right.push(t);
            } else {
                wrong.push(t);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!right.is_empty() && !wrong.is_empty());
    assert!(
        mean(&right) > mean(&wrong),
        "tcp_hat correct {} vs wrong {}",
        mean(&right),
        mean(&wrong)
    );
}

#[test]
fn small_training_split_can_be_fit() {
    let text = r#"
name = "overfit"
case = "case1"
seeds = [2]

[dataset]
kind = "glyph"
train_per_class = 12
test_per_class = 4
head_count = 12
test_head_count = 4

[grid]
train_ratios = [1.0]
test_specs = ["uniform"]
variants = ["proposed"]

[model]
expert_hidden = 32

[model.image_encoder]
channels = [4, 8]
fc = [32, 32]

[train]
epochs = 60
batch_size = 16

[train.optimizer]
lr = 3e-3
"#;
    let (bundle, train, _) = train_and_test(text);
    let w = AggregationWeights::uniform().w();
    let hits = train
        .iter()
        .filter(|s| argmax(&aggregate_with(&bundle.expert_logits(s).unwrap(), &w).unwrap().probs) == s.label)
        .count();
    let acc = 100.0 * hits as f64 / train.len() as f64;
    assert!(acc > 95.0, "train accuracy {acc}");
}
