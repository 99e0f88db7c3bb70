//! Training objectives.
//!
//! Every per-sample loss comes with its gradient with respect to the logits (or the
//! predicted confidence), computed analytically. Log-sum-exp is evaluated with max
//! subtraction.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-softmax scores over K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("logit {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn softmax(&self) -> CategoricalProbs {
        CategoricalProbs(softmax(&self.0))
    }
}

impl Deref for Logits {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A categorical distribution over K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalProbs(Vec<f64>);

impl CategoricalProbs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Invalid("probabilities must lie in [0, 1]".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for CategoricalProbs {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Weight of the auxiliary (per-modality) terms in the unified loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn check_label(logits: &[f64], label: usize) {
    assert!(label < logits.len(), "label {label} outside 0..{}", logits.len());
}

/// Softmax cross-entropy `-log softmax(v)[y]`.
pub fn loss_ce(logits: &[f64], label: usize) -> f64 {
    check_label(logits, label);
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

/// Cross-entropy and its gradient `softmax(v) - onehot(y)`.
pub fn loss_ce_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let loss = loss_ce(logits, label);
    let mut g = softmax(logits);
    g[label] -= 1.0;
    (loss, g)
}

/// Logit shifts for the prior-adjusted experts.
///
/// `balanced = log pi`, `inverse = log pi - log reversed(pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorShifts {
    pub balanced: Vec<f64>,
    pub inverse: Vec<f64>,
}

fn check_priors(priors: &[f64]) -> Result<()> {
    if let Some((class, &value)) = priors.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
        return Err(Error::ZeroPrior { class, value });
    }
    Ok(())
}

impl PriorShifts {
    pub fn new(priors: &[f64], reversed: &[f64]) -> Result<Self> {
        check_priors(priors)?;
        check_priors(reversed)?;
        if priors.len() != reversed.len() {
            return Err(Error::Shape(format!(
                "{} priors but {} reversed priors",
                priors.len(),
                reversed.len()
            )));
        }
        let balanced: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
        let inverse = priors.iter().zip(reversed).map(|(p, q)| p.ln() - q.ln()).collect();
        Ok(Self { balanced, inverse })
    }

    /// Shifts for a prior vector and its end-to-end reversal.
    pub fn from_priors(priors: &[f64]) -> Result<Self> {
        let reversed: Vec<f64> = priors.iter().rev().copied().collect();
        Self::new(priors, &reversed)
    }
}

fn shifted(logits: &[f64], shift: &[f64]) -> Vec<f64> {
    assert_eq!(logits.len(), shift.len(), "logits and priors differ in length");
    logits.iter().zip(shift).map(|(v, s)| v + s).collect()
}

/// Balanced softmax loss: cross-entropy of `v + log pi`.
pub fn loss_bal(logits: &[f64], label: usize, priors: &[f64]) -> Result<f64> {
    check_priors(priors)?;
    let shift: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
    Ok(loss_ce(&shifted(logits, &shift), label))
}

/// Inverse softmax loss: cross-entropy of `v + log pi - log reversed_pi`.
pub fn loss_inv(logits: &[f64], label: usize, priors: &[f64], reversed: &[f64]) -> Result<f64> {
    let shifts = PriorShifts::new(priors, reversed)?;
    Ok(loss_ce(&shifted(logits, &shifts.inverse), label))
}

/// Cross-entropy on shifted logits, with the gradient w.r.t. the unshifted logits
/// (the shift is constant, so it is the same softmax-minus-onehot form).
pub fn loss_shifted_grad(logits: &[f64], label: usize, shift: &[f64]) -> (f64, Vec<f64>) {
    loss_ce_grad(&shifted(logits, shift), label)
}

/// The three expert loss components for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertLosses {
    pub ce: f64,
    pub bal: f64,
    pub inv: f64,
}

impl ExpertLosses {
    pub fn total(&self) -> f64 {
        self.ce + self.bal + self.inv
    }
}

/// Composite expert loss `L_ce(v1) + L_bal(v2) + L_inv(v3)`.
pub fn loss_experts_composite(
    v1: &[f64],
    v2: &[f64],
    v3: &[f64],
    label: usize,
    priors: &[f64],
) -> Result<ExpertLosses> {
    let shifts = PriorShifts::from_priors(priors)?;
    Ok(ExpertLosses {
        ce: loss_ce(v1, label),
        bal: loss_ce(&shifted(v2, &shifts.balanced), label),
        inv: loss_ce(&shifted(v3, &shifts.inverse), label),
    })
}

/// Composite loss with per-expert logit gradients.
pub fn loss_experts_composite_grad(
    logits: [&[f64]; 3],
    label: usize,
    shifts: &PriorShifts,
) -> (ExpertLosses, [Vec<f64>; 3]) {
    let (ce, g1) = loss_ce_grad(logits[0], label);
    let (bal, g2) = loss_shifted_grad(logits[1], label, &shifts.balanced);
    let (inv, g3) = loss_shifted_grad(logits[2], label, &shifts.inverse);
    (ExpertLosses { ce, bal, inv }, [g1, g2, g3])
}

/// True class probability: the probability assigned to the ground-truth class.
pub fn tcp(probs: &[f64], label: usize) -> f64 {
    probs[label]
}

/// Squared error between predicted and true TCP.
pub fn loss_confidence(tcp_hat: f64, tcp_true: f64) -> f64 {
    (tcp_hat - tcp_true).powi(2)
}

/// Squared error and its derivative w.r.t. the prediction.
pub fn loss_confidence_grad(tcp_hat: f64, tcp_true: f64) -> (f64, f64) {
    let d = tcp_hat - tcp_true;
    (d * d, 2.0 * d)
}

/// Mean squared error over a batch of (predicted, true) pairs.
pub fn loss_confidence_batch(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("confidence loss over an empty batch".into()));
    }
    Ok(pairs.iter().map(|&(h, t)| loss_confidence(h, t)).sum::<f64>() / pairs.len() as f64)
}

/// Mean cross-entropy over a batch.
pub fn loss_ce_batch(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    Ok(logits.iter().zip(labels).map(|(v, &y)| loss_ce(v, y)).sum::<f64>() / logits.len() as f64)
}

/// `fusion + lambda * sum_m (cls_m + conf_m)`.
pub fn loss_unified(
    fusion_loss: f64,
    per_modality_cls: &[f64],
    per_modality_conf: &[f64],
    weights: LossWeights,
) -> Result<f64> {
    if per_modality_cls.len() != per_modality_conf.len() {
        return Err(Error::Shape(format!(
            "{} classification losses but {} confidence losses",
            per_modality_cls.len(),
            per_modality_conf.len()
        )));
    }
    let aux: f64 = per_modality_cls.iter().sum::<f64>() + per_modality_conf.iter().sum::<f64>();
    Ok(fusion_loss + weights.lambda * aux)
}
