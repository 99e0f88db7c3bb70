//! Joint training of encoders, classifier module and experts on the unified loss
//! `L = L_ce(v1) + L_bal(v2) + L_inv(v3) + lambda * sum_m (L_cls^m + L_conf^m)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{ExpertBundle, ForwardTrace, OutputGrads, NUM_EXPERTS};
use crate::data::augment::augment_image;
use crate::data::{AugmentConfig, ClassDistribution, ModalityInput, PairedSample};
use crate::error::{Error, Result};
use crate::losses::{self, ExpertLosses, PriorShifts};
use crate::nn::{Adam, AdamConfig, Grads};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub lambda: f64,
    pub seed: u64,
    /// Train on one augmented view per sample per epoch (image modalities only).
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            optimizer: AdamConfig::default(),
            lambda: 1.0,
            seed: 0,
            augment: None,
        }
    }
}

/// Mean per-sample loss components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub ce: f64,
    pub bal: f64,
    pub inv: f64,
    /// Sum over modalities of the classification-head cross-entropy.
    pub cls_sum: f64,
    /// Sum over modalities of the confidence regression loss.
    pub conf_sum: f64,
    pub unified: f64,
}

impl EpochLosses {
    pub fn composite(&self) -> f64 {
        self.ce + self.bal + self.inv
    }

    fn is_finite(&self) -> bool {
        [self.ce, self.bal, self.inv, self.cls_sum, self.conf_sum, self.unified]
            .iter()
            .all(|v| v.is_finite())
    }

    fn accumulate(&mut self, other: &SampleLosses) {
        self.ce += other.experts.ce;
        self.bal += other.experts.bal;
        self.inv += other.experts.inv;
        self.cls_sum += other.cls.iter().sum::<f64>();
        self.conf_sum += other.conf.iter().sum::<f64>();
        self.unified += other.unified;
    }

    fn scale(&mut self, s: f64) {
        self.ce *= s;
        self.bal *= s;
        self.inv *= s;
        self.cls_sum *= s;
        self.conf_sum *= s;
        self.unified *= s;
    }
}

/// Loss terms of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLosses {
    pub experts: ExpertLosses,
    pub cls: Vec<f64>,
    pub conf: Vec<f64>,
    pub unified: f64,
}

/// Optimizer state carried across (possibly interrupted) runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub optimizer: Adam,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn fresh(bundle: &ExpertBundle, optimizer: AdamConfig) -> Self {
        Self {
            optimizer: Adam::new(optimizer, &bundle.params),
            epochs_done: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub trace: Vec<EpochLosses>,
}

/// Unified loss of one forward trace and the gradients w.r.t. all network outputs.
/// The regression target for each confidence head is the (detached) true-class
/// probability of that modality's classification head.
pub fn sample_objective(
    trace: &ForwardTrace,
    label: usize,
    shifts: &PriorShifts,
    lambda: f64,
) -> (SampleLosses, OutputGrads) {
    let (experts, expert_grads) =
        losses::loss_experts_composite_grad([&trace.logits[0], &trace.logits[1], &trace.logits[2]], label, shifts);
    let m_count = trace.probs.len();
    let mut cls = Vec::with_capacity(m_count);
    let mut conf = Vec::with_capacity(m_count);
    let mut cls_grads = Vec::with_capacity(m_count);
    let mut conf_grads = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let (l, mut g) = losses::loss_ce_grad(&trace.cls_logits[m], label);
        g.iter_mut().for_each(|v| *v *= lambda);
        cls.push(l);
        cls_grads.push(g);
        let target = losses::tcp(&trace.probs[m], label);
        let (c, dc) = losses::loss_confidence_grad(trace.tcp_hat[m], target);
        conf.push(c);
        conf_grads.push(lambda * dc);
    }
    let unified = experts.total() + lambda * (cls.iter().sum::<f64>() + conf.iter().sum::<f64>());
    (
        SampleLosses {
            experts,
            cls,
            conf,
            unified,
        },
        OutputGrads {
            expert_logits: expert_grads.into_iter().collect(),
            cls_logits: cls_grads,
            tcp_hat: conf_grads,
        },
    )
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradients(
    bundle: &ExpertBundle,
    batch: &[&PairedSample],
    shifts: &PriorShifts,
    lambda: f64,
) -> Result<(EpochLosses, Grads)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let mut grads = bundle.params.zero_grads();
    let mut sums = EpochLosses::default();
    for sample in batch {
        let trace = bundle.forward_trace(sample)?;
        let (l, g) = sample_objective(&trace, sample.label, shifts, lambda);
        sums.accumulate(&l);
        bundle.backward(&trace, &g, &mut grads);
    }
    let inv_n = 1.0 / batch.len() as f64;
    grads.scale(inv_n);
    sums.scale(inv_n);
    Ok((sums, grads))
}

/// Mean losses over a dataset without updating anything.
pub fn evaluate_losses(
    bundle: &ExpertBundle,
    samples: &[PairedSample],
    dist: &ClassDistribution,
    lambda: f64,
) -> Result<EpochLosses> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let (priors, reversed) = dist.smoothed();
    let shifts = PriorShifts::new(&priors, &reversed)?;
    let mut sums = EpochLosses::default();
    for s in samples {
        let trace = bundle.forward_trace(s)?;
        sums.accumulate(&sample_objective(&trace, s.label, &shifts, lambda).0);
    }
    sums.scale(1.0 / samples.len() as f64);
    Ok(sums)
}

fn augmented(sample: &PairedSample, cfg: &AugmentConfig, seed: u64, index: u64) -> PairedSample {
    let mut r = rng::stream(seed, "train-augment", index);
    PairedSample {
        modalities: sample
            .modalities
            .iter()
            .map(|m| match m {
                ModalityInput::Image(img) => ModalityInput::Image(augment_image(img, cfg, &mut r)),
                other => other.clone(),
            })
            .collect(),
        label: sample.label,
    }
}

/// Train until `cfg.epochs` epochs have been completed, continuing from `state` if given.
///
/// Batch order in epoch `e` depends only on `(cfg.seed, e)`, so an interrupted run
/// resumed from a checkpoint follows the same trajectory as an uninterrupted one.
pub fn train_experts(
    bundle: &mut ExpertBundle,
    train: &[PairedSample],
    dist: &ClassDistribution,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutcome> {
    train_experts_with(bundle, train, dist, cfg, state, |_| Ok(()))
}

/// [`train_experts`] with a callback run after every completed epoch (e.g. to flush
/// the loss trace to disk before a later failure).
pub fn train_experts_with<F>(
    bundle: &mut ExpertBundle,
    train: &[PairedSample],
    dist: &ClassDistribution,
    cfg: &TrainConfig,
    state: Option<TrainState>,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLosses) -> Result<()>,
{
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    losses::LossWeights::new(cfg.lambda)?;
    let (priors, reversed) = dist.smoothed();
    let shifts = PriorShifts::new(&priors, &reversed)?;
    let mut state = state.unwrap_or_else(|| TrainState::fresh(bundle, cfg.optimizer));
    state.optimizer.config = cfg.optimizer;
    let mut trace = Vec::new();

    while state.epochs_done < cfg.epochs {
        let epoch = state.epochs_done + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "epoch", epoch as u64));
        let views: Option<Vec<PairedSample>> = cfg.augment.as_ref().map(|a| {
            order
                .iter()
                .map(|&i| augmented(&train[i], a, cfg.seed, (epoch * train.len() + i) as u64))
                .collect()
        });
        let mut sums = EpochLosses::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PairedSample> = match &views {
                Some(v) => (0..chunk.len()).map(|k| &v[b * cfg.batch_size + k]).collect(),
                None => chunk.iter().map(|&i| &train[i]).collect(),
            };
            let (mean, grads) = batch_gradients(bundle, &batch, &shifts, cfg.lambda)?;
            if !mean.is_finite() || !grads.norm().is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    components: format!(
                        "ce={} bal={} inv={} cls_sum={} conf_sum={} unified={}",
                        mean.ce, mean.bal, mean.inv, mean.cls_sum, mean.conf_sum, mean.unified
                    ),
                });
            }
            state.optimizer.update(&mut bundle.params, &grads);
            let mut weighted = mean;
            weighted.scale(chunk.len() as f64);
            sums.ce += weighted.ce;
            sums.bal += weighted.bal;
            sums.inv += weighted.inv;
            sums.cls_sum += weighted.cls_sum;
            sums.conf_sum += weighted.conf_sum;
            sums.unified += weighted.unified;
        }
        sums.scale(1.0 / train.len() as f64);
        sums.epoch = epoch;
        on_epoch(&sums)?;
        trace.push(sums);
        state.epochs_done = epoch;
    }
    Ok(TrainOutcome { state, trace })
}

/// Argmax predictions of each expert's raw logits.
pub fn expert_predictions(bundle: &ExpertBundle, samples: &[PairedSample]) -> Result<Vec<[usize; NUM_EXPERTS]>> {
    samples
        .iter()
        .map(|s| {
            let logits = bundle.expert_logits(s)?;
            Ok([argmax(&logits[0]), argmax(&logits[1]), argmax(&logits[2])])
        })
        .collect()
}

/// Index of the largest entry; lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ModalityShape, TabularRecord};
    use crate::model::checkpoint::{decode_checkpoint, encode_checkpoint};
    use crate::model::network::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn numeric_sample(x: &[f64], label: usize) -> PairedSample {
        PairedSample {
            modalities: vec![ModalityInput::Tabular(TabularRecord {
                categorical: vec![],
                numeric: x.iter().map(|&v| v as f32).collect(),
            })],
            label,
        }
    }

    /// Two classes separated by the sign of a fixed direction in 8 dimensions.
    fn separable_set(n: usize, seed: u64) -> Vec<PairedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = [1.0, -1.0, 0.5, 0.0, 0.25, -0.5, 0.0, 1.0];
        (0..n)
            .map(|_| loop {
                let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let d: f64 = x.iter().zip(dir).map(|(a, b)| a * b).sum();
                if d.abs() > 0.2 {
                    break numeric_sample(&x, usize::from(d > 0.0));
                }
            })
            .collect()
    }

    fn toy_model() -> ExpertBundle {
        let mut cfg = ModelConfig::new(
            2,
            vec![ModalityShape::Tabular {
                vocab_sizes: vec![],
                numeric_fields: 8,
            }],
        );
        cfg.tabular_encoder.hidden = 16;
        cfg.expert_hidden = 16;
        ExpertBundle::new(cfg).unwrap()
    }

    fn accuracy_of(bundle: &ExpertBundle, set: &[PairedSample], expert: usize) -> f64 {
        let preds = expert_predictions(bundle, set).unwrap();
        let hits = preds.iter().zip(set).filter(|(p, s)| p[expert] == s.label).count();
        hits as f64 / set.len() as f64
    }

    #[test]
    fn separable_toy_is_learned() {
        let train = separable_set(200, 1);
        let dist = ClassDistribution::from_counts(vec![
            train.iter().filter(|s| s.label == 0).count(),
            train.iter().filter(|s| s.label == 1).count(),
        ])
        .unwrap();
        let mut bundle = toy_model();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let out = train_experts(&mut bundle, &train, &dist, &cfg, None).unwrap();
        assert_eq!(out.trace.len(), 50);
        assert!(out.trace.last().unwrap().composite() < out.trace[0].composite());
        for j in 0..NUM_EXPERTS {
            assert!(accuracy_of(&bundle, &train, j) >= 0.99, "expert {j}");
        }
    }

    #[test]
    fn one_step_moves_experts_and_confidence_heads() {
        let train = separable_set(16, 2);
        let dist = ClassDistribution::from_counts(vec![8, 8]).unwrap();
        let mut bundle = toy_model();
        let before = bundle.params.clone();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        train_experts(&mut bundle, &train, &dist, &cfg, None).unwrap();
        for name in before.names() {
            if name.starts_with("expert") || name.contains(".conf.") {
                let id = before.id_of(name).unwrap();
                let delta: f64 = before
                    .get(id)
                    .data
                    .iter()
                    .zip(&bundle.params.get(id).data)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                assert!(delta > 0.0, "{name} did not move");
            }
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let train = separable_set(40, 3);
        let dist = ClassDistribution::from_counts(vec![20, 20]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut full = toy_model();
        let reference = train_experts(&mut full, &train, &dist, &cfg, None).unwrap();

        let mut part = toy_model();
        let first = train_experts(
            &mut part,
            &train,
            &dist,
            &TrainConfig {
                epochs: 2,
                ..cfg.clone()
            },
            None,
        )
        .unwrap();
        let bytes = encode_checkpoint(&part, &cfg, Some(&first.state)).unwrap();
        let restored = decode_checkpoint(&bytes).unwrap();
        let mut bundle = restored.bundle;
        let rest = train_experts(&mut bundle, &train, &dist, &cfg, restored.state).unwrap();
        assert_eq!(rest.trace.len(), 1);
        assert!((rest.trace[0].unified - reference.trace[2].unified).abs() < 1e-6);
        assert_eq!(bundle.params.content_hash(), full.params.content_hash());
    }

    #[test]
    fn unified_loss_bookkeeping() {
        let train = separable_set(24, 4);
        let dist = ClassDistribution::from_counts(vec![12, 12]).unwrap();
        let bundle = toy_model();
        for lambda in [0.0, 0.5, 2.0] {
            let l = evaluate_losses(&bundle, &train, &dist, lambda).unwrap();
            let expect = l.composite() + lambda * (l.cls_sum + l.conf_sum);
            assert!((l.unified - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let train = separable_set(4, 5);
        let dist = ClassDistribution::from_counts(vec![2, 2]).unwrap();
        let mut bundle = toy_model();
        let bad_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train_experts(&mut bundle, &train, &dist, &bad_batch, None).is_err());
        let bad_lambda = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(train_experts(&mut bundle, &train, &dist, &bad_lambda, None).is_err());
        assert!(train_experts(&mut bundle, &[], &dist, &TrainConfig::default(), None).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
