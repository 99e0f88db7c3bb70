//! The three expert objectives on one logit vector, plus the confidence and unified losses.
//!
//! cargo run --example losses

use ltmx::data::ClassDistribution;
use ltmx::losses::{
    loss_bal, loss_ce, loss_confidence, loss_experts_composite, loss_inv, loss_unified, softmax, tcp, LossWeights,
};

fn main() -> ltmx::Result<()> {
    // A forward long-tailed training set: 100 head samples down to 10 tail samples.
    let dist = ClassDistribution::from_counts(vec![100, 46, 22, 10])?;
    let (priors, reversed) = (&dist.priors, &dist.reversed_priors);
    let logits = [1.0, 0.5, 0.2, 0.8];

    println!("priors   {priors:.3?}");
    for label in 0..4 {
        println!(
            "y={label}  ce {:.4}  bal {:.4}  inv {:.4}",
            loss_ce(&logits, label),
            loss_bal(&logits, label, priors)?,
            loss_inv(&logits, label, priors, reversed)?,
        );
    }
    // The balanced loss penalizes tail labels more, the inverse loss even more so.

    let parts = loss_experts_composite(&logits, &logits, &logits, 3, priors)?;
    println!(
        "composite for y=3: {:.4} = {:.4} + {:.4} + {:.4}",
        parts.total(),
        parts.ce,
        parts.bal,
        parts.inv
    );

    // Confidence head: regress the true-class probability of a modality classifier.
    let probs = softmax(&[2.0, 0.1, -1.0, 0.0]);
    let target = tcp(&probs, 0);
    let conf = loss_confidence(0.6, target);
    println!("tcp {target:.4}, confidence loss at 0.6: {conf:.5}");

    let unified = loss_unified(parts.total(), &[0.9, 1.1], &[conf, 0.02], LossWeights::new(1.0)?)?;
    println!("unified loss: {unified:.4}");
    Ok(())
}
