//! Train the three experts on a forward long-tailed glyph split, save a checkpoint,
//! reload it and compare head and tail accuracy per expert.
//!
//! cargo run --release --example train_checkpoint

use ltmx::config::{ExperimentConfig, Variant};
use ltmx::experiment::{build_sources, prepare_splits, train_variant, variant_samples};
use ltmx::model::{argmax, checkpoint_hash, load_checkpoint, save_checkpoint};

fn main() -> ltmx::Result<()> {
    let cfg = ExperimentConfig::from_toml(include_str!("../../../configs/quickstart.toml"))?;
    let seed = cfg.seeds[0];
    let sources = build_sources(&cfg.dataset, seed)?;
    let prep = prepare_splits(&cfg, &sources, seed)?;
    let all = sources.all();
    let train = prep.train[0].manifest.to_dataset(&all)?;
    println!("training split {}: counts {:?}", prep.train[0].id, train.class_counts());

    let (bundle, outcome) = train_variant(&cfg, &sources, &train, Variant::Proposed, seed)?;
    for l in outcome.trace.iter().step_by(5).chain(outcome.trace.last()) {
        println!(
            "epoch {:>2}  ce {:.3}  bal {:.3}  inv {:.3}  unified {:.3}",
            l.epoch, l.ce, l.bal, l.inv, l.unified
        );
    }

    let dir = std::env::temp_dir().join("ltmx-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(
        &path,
        &bundle,
        &ltmx::experiment::train_config(&cfg, seed),
        Some(&outcome.state),
    )?;
    println!("saved {} (sha256 {})", path.display(), &checkpoint_hash(&path)?[..16]);
    let restored = load_checkpoint(&path)?.bundle;

    let uniform = prep
        .test
        .iter()
        .find(|s| s.id == "uniform")
        .expect("uniform split in quickstart");
    let test = variant_samples(&uniform.manifest.to_dataset(&all)?, Variant::Proposed);
    for (name, classes) in [("head 0-2", 0..3), ("tail 7-9", 7..10)] {
        let picked: Vec<_> = test.iter().filter(|s| classes.contains(&s.label)).collect();
        let mut hits = [0usize; 3];
        for s in &picked {
            for (k, v) in restored.expert_logits(s)?.iter().enumerate() {
                hits[k] += usize::from(argmax(v) == s.label);
            }
        }
        let acc = hits.map(|h| 100.0 * h as f64 / picked.len() as f64);
        println!("{name}: E1 {:.1}%  E2 {:.1}%  E3 {:.1}%", acc[0], acc[1], acc[2]);
    }
    Ok(())
}
