mod common;

use std::sync::Arc;

use common::{central_diff, vec_rel_err};
use ltmx::aggregation::{
    aggregate, aggregate_with, stability_objective, AggregationWeights, WeightsFile, WeightsProvenance,
};
use ltmx::data::{
    pair_sources, subsample_longtailed, target_counts, DatasetManifest, DistributionSpec, LabeledSource, ModalityInput,
    TabularRecord,
};
use ltmx::losses::{
    loss_bal, loss_ce, loss_ce_grad, loss_confidence, loss_inv, loss_shifted_grad, softmax, tcp, PriorShifts,
};
use ltmx::metrics::{accuracy, macro_f1};
use ltmx::model::{argmax, fuse};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn logits(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(|k| prop::collection::vec(-8.0f64..8.0, k))
}

fn three_experts() -> impl Strategy<Value = [Vec<f64>; 3]> {
    (2usize..=8).prop_flat_map(|k| {
        (
            prop::collection::vec(-6.0f64..6.0, k),
            prop::collection::vec(-6.0f64..6.0, k),
            prop::collection::vec(-6.0f64..6.0, k),
        )
            .prop_map(|(a, b, c)| [a, b, c])
    })
}

fn theta() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-6.0f64..6.0)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(v in logits(1..=12)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn losses_are_nonnegative(v in logits(2..=10), y in 0usize..10, h in 0.0f64..1.0, t in 0.0f64..1.0) {
        let y = y % v.len();
        let k = v.len();
        let pri: Vec<f64> = (1..=k).map(|i| i as f64).collect();
        let z: f64 = pri.iter().sum();
        let pri: Vec<f64> = pri.iter().map(|p| p / z).collect();
        let rev: Vec<f64> = pri.iter().rev().copied().collect();
        prop_assert!(loss_ce(&v, y) >= 0.0);
        prop_assert!(loss_bal(&v, y, &pri).unwrap() >= 0.0);
        prop_assert!(loss_inv(&v, y, &pri, &rev).unwrap() >= 0.0);
        prop_assert!(loss_confidence(h, t) >= 0.0);
    }

    #[test]
    fn tcp_is_shift_invariant(v in logits(2..=10), y in 0usize..10, c in -50.0f64..50.0) {
        let y = y % v.len();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((tcp(&softmax(&v), y) - tcp(&softmax(&shifted), y)).abs() < 1e-9);
    }

    #[test]
    fn uniform_priors_reduce_to_plain_ce(v in logits(2..=10), y in 0usize..10) {
        let y = y % v.len();
        let u = vec![1.0 / v.len() as f64; v.len()];
        let ce = loss_ce(&v, y);
        prop_assert!((loss_bal(&v, y, &u).unwrap() - ce).abs() <= 1e-12);
        prop_assert!((loss_inv(&v, y, &u, &u).unwrap() - ce).abs() <= 1e-12);
    }

    #[test]
    fn fuse_is_linear_in_each_confidence(
        blocks in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 1..6), 1..4),
        seed in 0u64..1000,
        c in -4.0f64..4.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = blocks.iter().map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
        let refs: Vec<&[f64]> = blocks.iter().map(|b| b.as_slice()).collect();
        let base = fuse(&refs, &t, None).unwrap();
        for m in 0..blocks.len() {
            let mut scaled_t = t.clone();
            scaled_t[m] *= c;
            let scaled = fuse(&refs, &scaled_t, None).unwrap();
            let start: usize = blocks[..m].iter().map(|b| b.len()).sum();
            let end = start + blocks[m].len();
            for i in 0..base.len() {
                if (start..end).contains(&i) {
                    prop_assert!((scaled[i] - c * base[i]).abs() <= 1e-12 * (1.0 + base[i].abs()));
                } else {
                    prop_assert_eq!(scaled[i], base[i]);
                }
            }
        }
    }

    #[test]
    fn weights_stay_on_the_simplex(th in theta()) {
        let w = AggregationWeights::from_theta(th);
        prop_assert!(w.on_simplex());
        prop_assert!(w.w().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn aggregation_is_the_weighted_sum(e in three_experts(), th in theta()) {
        let weights = AggregationWeights::from_theta(th);
        let w = weights.w();
        let p = aggregate(&e[0], &e[1], &e[2], &weights).unwrap();
        for (c, got) in p.combined.iter().enumerate() {
            let want = w[0] * e[0][c] + w[1] * e[1][c] + w[2] * e[2][c];
            prop_assert!((got - want).abs() <= 1e-12);
        }
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        let same = aggregate(&e[0], &e[0], &e[0], &weights).unwrap();
        for (got, want) in same.combined.iter().zip(&e[0]) {
            prop_assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregated_argmax_ignores_a_common_shift(e in three_experts(), th in theta()) {
        let w = AggregationWeights::from_theta(th).w();
        let base = argmax(&aggregate_with(&e, &w).unwrap().probs);
        for c in [-5.0, 0.0, 7.0] {
            let shifted = e.clone().map(|v| v.iter().map(|x| x + c).collect::<Vec<f64>>());
            prop_assert_eq!(argmax(&aggregate_with(&shifted, &w).unwrap().probs), base);
        }
    }

    #[test]
    fn stability_is_bounded_and_symmetric(a in three_experts(), th in theta(), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: [Vec<f64>; 3] = a.clone().map(|v| v.iter().map(|x| x + rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect());
        let w = AggregationWeights::from_theta(th).w();
        let (pa, pb) = (aggregate_with(&a, &w).unwrap(), aggregate_with(&b, &w).unwrap());
        let s = stability_objective(&pa, &pb);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - stability_objective(&pb, &pa)).abs() <= 1e-15);
    }

    #[test]
    fn forward_and_backward_counts_are_reverses(k in 2usize..=12, head in 1usize..600, r in 1.01f64..200.0) {
        let f = target_counts(k, head, &DistributionSpec::forward(r).unwrap()).unwrap();
        let b = target_counts(k, head, &DistributionSpec::backward(r).unwrap()).unwrap();
        let rev: Vec<usize> = f.iter().rev().copied().collect();
        prop_assert_eq!(b, rev);
        prop_assert!(f.windows(2).all(|p| p[0] >= p[1]));
        prop_assert_eq!(f[0], head);
        prop_assert!(f.iter().all(|&n| n >= 1));
    }

    #[test]
    fn accuracy_ignores_label_renaming(
        pairs in prop::collection::vec((0usize..6, 0usize..6), 1..60),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let rp: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let rl: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        prop_assert_eq!(accuracy(&preds, &labels).unwrap(), accuracy(&rp, &rl).unwrap());
    }

    #[test]
    fn pairing_never_mixes_labels(
        counts_a in prop::collection::vec(1usize..8, 3),
        counts_b in prop::collection::vec(1usize..8, 3),
        seed in 0u64..1000,
    ) {
        let a = Arc::new(tabular_source("a", &counts_a));
        let b = Arc::new(tabular_source("b", &counts_b));
        let ds = pair_sources(vec![a.clone(), b.clone()], seed).unwrap();
        for r in &ds.records {
            prop_assert_eq!(a.labels[r.refs[0]], r.label);
            prop_assert_eq!(b.labels[r.refs[1]], r.label);
        }
        let want: Vec<usize> = counts_a.iter().zip(&counts_b).map(|(x, y)| *x.min(y)).collect();
        prop_assert_eq!(ds.class_counts(), want);
    }
}

fn tabular_source(id: &str, counts: &[usize]) -> LabeledSource {
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
    LabeledSource::new(id, counts.len(), items, labels).unwrap()
}

/// Macro-F1 from first principles: per class, count TP/FP/FN by scanning the pairs.
fn brute_macro_f1(preds: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut scores = Vec::new();
    for c in 0..k {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == c, l == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        if tp + fp + fneg > 0.0 {
            scores.push(2.0 * tp / (2.0 * tp + fp + fneg));
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn macro_f1_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let k = rand::Rng::gen_range(&mut rng, 2..=10);
        let n = rand::Rng::gen_range(&mut rng, 1..=50);
        let labels: Vec<usize> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..k)).collect();
        let got = macro_f1(&preds, &labels, k).unwrap();
        assert!((got - brute_macro_f1(&preds, &labels, k)).abs() <= 1e-12);
    }
}

#[test]
fn ce_vanishes_with_growing_margin() {
    let mut last = f64::INFINITY;
    for margin in [1.0, 5.0, 10.0, 20.0, 40.0] {
        let l = loss_ce(&[0.0, margin, -1.0], 1);
        assert!(l < last);
        last = l;
    }
    assert!(last < 1e-15);
}

#[test]
fn loss_gradients_match_differences_at_standard_normal_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = 10;
    for _ in 0..100 {
        let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = rand::Rng::gen_range(&mut rng, 0..k);
        let pri: Vec<f64> = {
            let raw: Vec<f64> = (0..k).map(|_| rand::Rng::gen_range(&mut rng, 0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|p| p / z).collect()
        };
        let rev: Vec<f64> = pri.iter().rev().copied().collect();
        let shifts = PriorShifts::from_priors(&pri).unwrap();
        let fd = central_diff(&v, 1e-4, |x| loss_ce(x, y));
        assert!(vec_rel_err(&loss_ce_grad(&v, y).1, &fd) < 1e-3);
        let fd = central_diff(&v, 1e-4, |x| loss_bal(x, y, &pri).unwrap());
        assert!(vec_rel_err(&loss_shifted_grad(&v, y, &shifts.balanced).1, &fd) < 1e-3);
        let fd = central_diff(&v, 1e-4, |x| loss_inv(x, y, &pri, &rev).unwrap());
        assert!(vec_rel_err(&loss_shifted_grad(&v, y, &shifts.inverse).1, &fd) < 1e-3);
    }
}

#[test]
fn decay_counts_over_the_grid() {
    for k in [2usize, 10] {
        let pool = common::counting_dataset(&vec![200; k]);
        for r in [1.0f64, 10.0, 50.0, 100.0] {
            let spec = if r == 1.0 {
                DistributionSpec::uniform()
            } else {
                DistributionSpec::forward(r).unwrap()
            };
            let got = subsample_longtailed(&pool, &spec, 200, 1).unwrap().class_counts();
            let want: Vec<usize> = (0..k)
                .map(|i| ((200.0 * r.powf(-(i as f64) / (k as f64 - 1.0))).round() as usize).max(1))
                .collect();
            assert_eq!(got, want, "K={k} r={r}");
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let pool = common::counting_dataset(&[60; 10]);
    let spec = DistributionSpec::forward(10.0).unwrap();
    let manifest = |seed| {
        let ds = subsample_longtailed(&pool, &spec, 40, seed).unwrap();
        DatasetManifest::from_dataset(&ds, spec, seed).to_text()
    };
    assert_eq!(manifest(3), manifest(3));
    let texts: std::collections::BTreeSet<String> = (0..20)
        .map(|s| {
            // Skip the header line, which carries the seed, so only the selection is compared.
            manifest(s).lines().skip(1).collect::<Vec<_>>().join("\n")
        })
        .collect();
    assert_eq!(texts.len(), 20);
}

#[test]
fn manifest_round_trips() {
    let pool = common::counting_dataset(&[30, 30, 30]);
    let spec = DistributionSpec::backward(5.0).unwrap();
    let ds = subsample_longtailed(&pool, &spec, 25, 11).unwrap();
    let manifest = DatasetManifest::from_dataset(&ds, spec, 11);
    let parsed = DatasetManifest::parse(&manifest.to_text()).unwrap();
    assert_eq!(parsed, manifest);
    assert_eq!(parsed.class_counts(3), ds.class_counts());
}

proptest! {
    #[test]
    fn weights_file_round_trips(th in theta(), seed in any::<u64>()) {
        let file = WeightsFile {
            provenance: WeightsProvenance { checkpoint: "ab12".into(), split: "backward_10".into(), seed },
            weights: AggregationWeights::from_theta(th),
        };
        let parsed = WeightsFile::parse(&file.to_text()).unwrap();
        prop_assert_eq!(&parsed.provenance, &file.provenance);
        for (a, b) in parsed.weights.w().iter().zip(file.weights.w()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}
