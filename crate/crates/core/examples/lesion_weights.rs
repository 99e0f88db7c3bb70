//! Image + metadata lesion task. The experts are trained on an imbalanced split, then the
//! aggregation weights are fit with cross-entropy on the same labeled split.
//!
//! cargo run --release --example lesion_weights

use ltmx::config::{ExperimentConfig, Variant};
use ltmx::data::class_priors;
use ltmx::experiment::{build_sources, evaluate_split, learn_weights, prepare_splits, train_variant};

fn main() -> ltmx::Result<()> {
    let mut cfg = ExperimentConfig::from_toml(include_str!("../../../configs/lesion.toml"))?;
    cfg.seeds.truncate(1);
    let seed = cfg.seeds[0];
    let sources = build_sources(&cfg.dataset, seed)?;
    let prep = prepare_splits(&cfg, &sources, seed)?;
    let all = sources.all();
    let train = prep.train[0].manifest.to_dataset(&all)?;
    let test = prep.test[0].manifest.to_dataset(&all)?;
    println!(
        "train {:?} (ratio {:.1}), test {:?}",
        train.class_counts(),
        class_priors(&train)?.imbalance_ratio(),
        test.class_counts()
    );

    let (bundle, _) = train_variant(&cfg, &sources, &train, Variant::Proposed, seed)?;
    let outcome = learn_weights(&cfg, &bundle, Variant::Proposed, &train, None, seed)?;
    let weights = outcome.weights();
    let w = weights.w();
    println!("weights w1 {:.3}  w2 {:.3}  w3 {:.3}", w[0], w[1], w[2]);
    println!(
        "train CE {:.4} -> {:.4}",
        outcome.fit.trace[0],
        outcome.fit.trace[outcome.fit.trace.len() - 1]
    );

    let report = evaluate_split(&bundle, &weights, &test, Variant::Proposed, &prep.test[0].id, seed)?;
    println!(
        "test accuracy {:.1}%  macro-F1 {:.3}  malignant F1 {:.3}",
        report.accuracy,
        report.macro_f1,
        report.positive_f1.unwrap_or(f64::NAN)
    );
    Ok(())
}
