use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    ce_at, ce_value_grad, stability_at, stability_value_grad, AggregationWeights, ExpertLogits, StabilityTarget,
    ViewPair,
};
use crate::data::{stochastic_augment, AugmentConfig, PairedSample};
use crate::error::{Error, Result};
use crate::model::{ExpertBundle, NUM_EXPERTS};
use crate::nn::{AdamConfig, SgdConfig, VecAdam, VecSgd};
use crate::rng;

/// Update rule for the aggregation logits θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaOptimizer {
    Adam(AdamConfig),
    /// Keeps the relative gradient magnitudes across experts, which Adam's
    /// per-coordinate scaling discards.
    Sgd(SgdConfig),
}

impl ThetaOptimizer {
    pub fn lr(&self) -> f64 {
        match self {
            ThetaOptimizer::Adam(c) => c.lr,
            ThetaOptimizer::Sgd(c) => c.lr,
        }
    }
}

enum ThetaState {
    Adam(VecAdam),
    Sgd(VecSgd),
}

impl ThetaState {
    fn new(opt: ThetaOptimizer) -> Self {
        match opt {
            ThetaOptimizer::Adam(c) => ThetaState::Adam(VecAdam::new(c, NUM_EXPERTS)),
            ThetaOptimizer::Sgd(c) => ThetaState::Sgd(VecSgd::new(c, NUM_EXPERTS)),
        }
    }

    fn update(&mut self, x: &mut [f64], g: &[f64]) {
        match self {
            ThetaState::Adam(o) => o.update(x, g),
            ThetaState::Sgd(o) => o.update(x, g),
        }
    }
}

/// Mini-batch descent over the three aggregation logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: ThetaOptimizer,
    pub seed: u64,
}

/// Test-time adaptation defaults: Adam at lr 1e-2.
impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            optimizer: ThetaOptimizer::Adam(AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            }),
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Phase-2 defaults: momentum SGD, same epochs and batch size as adaptation.
    pub fn phase2_default() -> Self {
        Self {
            optimizer: ThetaOptimizer::Sgd(SgdConfig::default()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub fit: FitConfig,
    pub augment: AugmentConfig,
    pub target: StabilityTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub weights: AggregationWeights,
    /// Objective over the full evaluation set: initial value, then one entry per epoch.
    pub trace: Vec<f64>,
    pub steps: usize,
    /// Whether the weights were on the simplex after every optimizer step.
    pub simplex_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub fit: FitOutcome,
    pub expert_hash_before: String,
    pub expert_hash_after: String,
}

impl AdaptOutcome {
    pub fn weights(&self) -> AggregationWeights {
        self.fit.weights
    }

    pub fn experts_unchanged(&self) -> bool {
        self.expert_hash_before == self.expert_hash_after
    }
}

fn validate(cfg: &FitConfig, n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty(what.into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("aggregation batch size must be positive".into()));
    }
    Ok(())
}

struct Descent {
    weights: AggregationWeights,
    opt: ThetaState,
    steps: usize,
    simplex_ok: bool,
}

impl Descent {
    fn new(cfg: &FitConfig) -> Self {
        Self {
            weights: AggregationWeights::uniform(),
            opt: ThetaState::new(cfg.optimizer),
            steps: 0,
            simplex_ok: true,
        }
    }

    /// One shuffled pass; `grad` returns the gradient of the quantity to minimize.
    fn epoch<F>(&mut self, cfg: &FitConfig, n: usize, epoch: usize, mut grad: F) -> Result<()>
    where
        F: FnMut(&[usize], &AggregationWeights) -> Result<[f64; NUM_EXPERTS]>,
    {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "aggregation-epoch", epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let g = grad(batch, &self.weights)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("non-finite aggregation gradient {g:?}")));
            }
            self.opt.update(&mut self.weights.theta, &g);
            self.steps += 1;
            let ok = self.weights.on_simplex();
            debug_assert!(ok, "weights left the simplex: {:?}", self.weights.w());
            self.simplex_ok &= ok;
        }
        Ok(())
    }

    fn finish(self, trace: Vec<f64>) -> FitOutcome {
        FitOutcome {
            weights: self.weights,
            trace,
            steps: self.steps,
            simplex_ok: self.simplex_ok,
        }
    }
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Maximize mean stability over fixed, precomputed view pairs.
pub fn fit_stability(pairs: &[ViewPair], cfg: &FitConfig, target: StabilityTarget) -> Result<FitOutcome> {
    validate(cfg, pairs.len(), "view pairs")?;
    let mut d = Descent::new(cfg);
    let mut trace = vec![stability_value_grad(pairs, &d.weights, target)?.0];
    for e in 1..=cfg.epochs {
        d.epoch(cfg, pairs.len(), e, |idx, w| {
            let (_, g) = stability_value_grad(&pick(pairs, idx), w, target)?;
            Ok(g.map(|x| -x))
        })?;
        trace.push(stability_at(pairs, &d.weights.w(), target)?);
    }
    Ok(d.finish(trace))
}

/// Minimize mean cross-entropy of the aggregated logits.
pub fn fit_ce(logits: &[ExpertLogits], labels: &[usize], cfg: &FitConfig) -> Result<FitOutcome> {
    validate(cfg, logits.len(), "labeled expert outputs")?;
    let mut d = Descent::new(cfg);
    let mut trace = vec![ce_at(logits, labels, &d.weights.w())?];
    for e in 1..=cfg.epochs {
        d.epoch(cfg, logits.len(), e, |idx, w| {
            Ok(ce_value_grad(&pick(logits, idx), &pick(labels, idx), w)?.1)
        })?;
        trace.push(ce_at(logits, labels, &d.weights.w())?);
    }
    Ok(d.finish(trace))
}

fn view_pairs(
    bundle: &ExpertBundle,
    samples: &[PairedSample],
    augment: &AugmentConfig,
    seed: u64,
    tag: &str,
    offset: u64,
) -> Result<Vec<ViewPair>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng::stream(seed, tag, offset + i as u64);
            let (a, b) = stochastic_augment(s, augment, &mut r)?;
            Ok((bundle.expert_logits(&a)?, bundle.expert_logits(&b)?))
        })
        .collect()
}

/// Test-time adaptation on unlabeled samples (labels are ignored).
///
/// Each epoch draws fresh augmented view pairs; the reported trace is measured on
/// one fixed set of view pairs so that entries are comparable across epochs.
pub fn adapt_test_time(bundle: &ExpertBundle, test: &[PairedSample], cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    validate(&cfg.fit, test.len(), "test set")?;
    let hash_before = bundle.expert_hash();
    let fixed = view_pairs(bundle, test, &cfg.augment, cfg.fit.seed, "adapt-eval", 0)?;
    let mut d = Descent::new(&cfg.fit);
    let mut trace = vec![stability_at(&fixed, &d.weights.w(), cfg.target)?];
    let n = test.len();
    for e in 1..=cfg.fit.epochs {
        let pairs = view_pairs(bundle, test, &cfg.augment, cfg.fit.seed, "adapt-views", (e * n) as u64)?;
        d.epoch(&cfg.fit, n, e, |idx, w| {
            let (_, g) = stability_value_grad(&pick(&pairs, idx), w, cfg.target)?;
            Ok(g.map(|x| -x))
        })?;
        trace.push(stability_at(&fixed, &d.weights.w(), cfg.target)?);
    }
    Ok(AdaptOutcome {
        fit: d.finish(trace),
        expert_hash_before: hash_before,
        expert_hash_after: bundle.expert_hash(),
    })
}

/// Supervised fitting of the weights on labeled training samples, experts frozen.
pub fn phase2_fit(bundle: &ExpertBundle, train: &[PairedSample], cfg: &FitConfig) -> Result<AdaptOutcome> {
    validate(cfg, train.len(), "training set")?;
    let hash_before = bundle.expert_hash();
    let logits = train
        .iter()
        .map(|s| bundle.expert_logits(s))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let fit = fit_ce(&logits, &labels, cfg)?;
    Ok(AdaptOutcome {
        fit,
        expert_hash_before: hash_before,
        expert_hash_after: bundle.expert_hash(),
    })
}
