//! Build the paired glyph dataset and cut forward, uniform and backward long-tailed splits.
//!
//! cargo run --release --example long_tail_splits

use ltmx::data::synthetic::{glyph_sources, GlyphConfig};
use ltmx::data::{class_priors, pair_sources, subsample_longtailed, DatasetManifest, DistributionSpec};

fn main() -> ltmx::Result<()> {
    let seed = 7;
    let (train_sources, _) = glyph_sources(&GlyphConfig::default(), 200, 20, seed)?;
    let pool = pair_sources(train_sources, seed)?;
    println!("paired pool: {} records, counts {:?}", pool.len(), pool.class_counts());

    for id in ["forward_50", "uniform", "backward_50"] {
        let spec: DistributionSpec = id.parse()?;
        let split = subsample_longtailed(&pool, &spec, 200, seed)?;
        let dist = class_priors(&split)?;
        println!("{id:>12}: {:?} (ratio {:.1})", dist.counts, dist.imbalance_ratio());
    }

    // Manifests record the selection by id, so a split can be rebuilt from the sources.
    let spec = DistributionSpec::forward(10.0)?;
    let split = subsample_longtailed(&pool, &spec, 200, seed)?;
    let text = DatasetManifest::from_dataset(&split, spec, seed).to_text();
    println!("\nmanifest head:");
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
