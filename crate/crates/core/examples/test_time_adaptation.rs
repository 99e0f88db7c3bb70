//! Learn aggregation weights on unlabeled test splits by maximizing prediction stability
//! between two augmented views. Forward splits should favour E1, backward splits E3.
//!
//! cargo run --release --example test_time_adaptation

use ltmx::config::{ExperimentConfig, Variant};
use ltmx::experiment::{build_sources, evaluate_split, learn_weights, prepare_splits, train_variant};

fn main() -> ltmx::Result<()> {
    let cfg = ExperimentConfig::from_toml(include_str!("../../../configs/quickstart.toml"))?;
    let seed = cfg.seeds[0];
    let sources = build_sources(&cfg.dataset, seed)?;
    let prep = prepare_splits(&cfg, &sources, seed)?;
    let all = sources.all();
    let train = prep.train[0].manifest.to_dataset(&all)?;
    let (bundle, _) = train_variant(&cfg, &sources, &train, Variant::Proposed, seed)?;

    println!(
        "{:>12}  {:>6} {:>6} {:>6}  {:>9} {:>9}  stability",
        "split", "w1", "w2", "w3", "accuracy", "macro-F1"
    );
    for split in &prep.test {
        let test = split.manifest.to_dataset(&all)?;
        let outcome = learn_weights(&cfg, &bundle, Variant::Proposed, &train, Some(&test), seed)?;
        assert!(outcome.experts_unchanged());
        let w = outcome.weights().w();
        let report = evaluate_split(&bundle, &outcome.weights(), &test, Variant::Proposed, &split.id, seed)?;
        let trace = &outcome.fit.trace;
        println!(
            "{:>12}  {:.3}  {:.3}  {:.3}  {:>8.1}%  {:>9.3}  {:.3} -> {:.3}",
            split.id,
            w[0],
            w[1],
            w[2],
            report.accuracy,
            report.macro_f1,
            trace[0],
            trace[trace.len() - 1]
        );
    }
    Ok(())
}
