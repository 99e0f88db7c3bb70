//! Global expert aggregation weights on the probability simplex.
//!
//! `w = softmax(theta)`, combined logits `sum_j w_j v_j`. Two ways of learning `theta`:
//! test-time stability maximization over pairs of augmented views (unlabeled), and
//! cross-entropy fitting on a labeled training set with the experts frozen.

mod fit;
mod weights_file;

pub use fit::{
    adapt_test_time, fit_ce, fit_stability, phase2_fit, AdaptConfig, AdaptOutcome, FitConfig, FitOutcome,
    ThetaOptimizer,
};
pub use weights_file::{read_weights, write_weights, WeightsFile, WeightsProvenance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses;
use crate::model::NUM_EXPERTS;

/// Logits of the three experts for one input.
pub type ExpertLogits = [Vec<f64>; NUM_EXPERTS];

/// Expert logits for the two augmented views of one sample.
pub type ViewPair = (ExpertLogits, ExpertLogits);

/// Softmax-parametrized simplex weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub theta: [f64; NUM_EXPERTS],
}

impl Default for AggregationWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl AggregationWeights {
    pub fn uniform() -> Self {
        Self {
            theta: [0.0; NUM_EXPERTS],
        }
    }

    pub fn from_theta(theta: [f64; NUM_EXPERTS]) -> Self {
        Self { theta }
    }

    /// Weights given directly; every entry must be positive and they must sum to 1.
    pub fn from_simplex(w: [f64; NUM_EXPERTS]) -> Result<Self> {
        if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("{w:?} is not an interior simplex point")));
        }
        Ok(Self { theta: w.map(f64::ln) })
    }

    pub fn w(&self) -> [f64; NUM_EXPERTS] {
        let s = losses::softmax(&self.theta);
        [s[0], s[1], s[2]]
    }

    /// Index of the largest weight; lowest index wins ties.
    pub fn argmax(&self) -> usize {
        crate::model::argmax(&self.w())
    }

    pub fn on_simplex(&self) -> bool {
        let w = self.w();
        w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPrediction {
    pub combined: Vec<f64>,
    pub probs: Vec<f64>,
}

fn combine(logits: &ExpertLogits, w: &[f64; NUM_EXPERTS]) -> Result<Vec<f64>> {
    let k = logits[0].len();
    if logits.iter().any(|v| v.len() != k) {
        return Err(Error::Shape(format!(
            "expert logit lengths differ: {}, {}, {}",
            logits[0].len(),
            logits[1].len(),
            logits[2].len()
        )));
    }
    Ok((0..k)
        .map(|c| w[0] * logits[0][c] + w[1] * logits[1][c] + w[2] * logits[2][c])
        .collect())
}

pub fn aggregate(v1: &[f64], v2: &[f64], v3: &[f64], weights: &AggregationWeights) -> Result<AggregatedPrediction> {
    aggregate_with(&[v1.to_vec(), v2.to_vec(), v3.to_vec()], &weights.w())
}

/// Aggregate with explicit simplex weights (vertices allowed).
pub fn aggregate_with(logits: &ExpertLogits, w: &[f64; NUM_EXPERTS]) -> Result<AggregatedPrediction> {
    let combined = combine(logits, w)?;
    let probs = losses::softmax(&combined);
    Ok(AggregatedPrediction { combined, probs })
}

/// Which vectors enter the agreement inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityTarget {
    /// Softmax of the combined logits; bounded in [0, 1].
    #[default]
    Probabilities,
    /// The combined logits themselves.
    Logits,
}

pub fn stability_objective(a: &AggregatedPrediction, b: &AggregatedPrediction) -> f64 {
    dot(&a.probs, &b.probs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Chain rule through `w = softmax(theta)`.
fn theta_grad(w: &[f64; NUM_EXPERTS], dw: &[f64; NUM_EXPERTS]) -> [f64; NUM_EXPERTS] {
    let mean = dot(w, dw);
    [w[0] * (dw[0] - mean), w[1] * (dw[1] - mean), w[2] * (dw[2] - mean)]
}

fn weight_grad(logits: &ExpertLogits, dc: &[f64]) -> [f64; NUM_EXPERTS] {
    [dot(&logits[0], dc), dot(&logits[1], dc), dot(&logits[2], dc)]
}

/// Stability of one view pair and its gradient with respect to the simplex weights.
fn pair_stability(pair: &ViewPair, w: &[f64; NUM_EXPERTS], target: StabilityTarget) -> Result<(f64, [f64; 3])> {
    let ca = combine(&pair.0, w)?;
    let cb = combine(&pair.1, w)?;
    if ca.len() != cb.len() {
        return Err(Error::Shape("views have different class counts".into()));
    }
    let (value, da, db) = match target {
        StabilityTarget::Probabilities => {
            let pa = losses::softmax(&ca);
            let pb = losses::softmax(&cb);
            let s = dot(&pa, &pb);
            // d(pa.pb)/dca = pa * pb - pa * s, symmetric for cb.
            let da: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y - x * s).collect();
            let db: Vec<f64> = pb.iter().zip(&pa).map(|(x, y)| x * y - x * s).collect();
            (s, da, db)
        }
        StabilityTarget::Logits => (dot(&ca, &cb), cb.clone(), ca.clone()),
    };
    let ga = weight_grad(&pair.0, &da);
    let gb = weight_grad(&pair.1, &db);
    Ok((value, [ga[0] + gb[0], ga[1] + gb[1], ga[2] + gb[2]]))
}

/// Mean stability over `pairs` at simplex point `w`.
pub fn stability_at(pairs: &[ViewPair], w: &[f64; NUM_EXPERTS], target: StabilityTarget) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("view pairs".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        total += pair_stability(p, w, target)?.0;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean stability and its gradient with respect to `theta`.
pub fn stability_value_grad(
    pairs: &[ViewPair],
    weights: &AggregationWeights,
    target: StabilityTarget,
) -> Result<(f64, [f64; NUM_EXPERTS])> {
    if pairs.is_empty() {
        return Err(Error::Empty("view pairs".into()));
    }
    let w = weights.w();
    let mut value = 0.0;
    let mut dw = [0.0; NUM_EXPERTS];
    for p in pairs {
        let (v, g) = pair_stability(p, &w, target)?;
        value += v;
        for j in 0..NUM_EXPERTS {
            dw[j] += g[j];
        }
    }
    let n = pairs.len() as f64;
    Ok((value / n, theta_grad(&w, &dw.map(|g| g / n))))
}

fn check_labels(logits: &[ExpertLogits], labels: &[usize]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Empty("labeled expert outputs".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit triples but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of the aggregated logits at simplex point `w`.
pub fn ce_at(logits: &[ExpertLogits], labels: &[usize], w: &[f64; NUM_EXPERTS]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        total += losses::loss_ce(&combine(l, w)?, y);
    }
    Ok(total / logits.len() as f64)
}

/// Mean cross-entropy of the aggregated logits and its gradient with respect to `theta`.
pub fn ce_value_grad(
    logits: &[ExpertLogits],
    labels: &[usize],
    weights: &AggregationWeights,
) -> Result<(f64, [f64; NUM_EXPERTS])> {
    check_labels(logits, labels)?;
    let w = weights.w();
    let mut value = 0.0;
    let mut dw = [0.0; NUM_EXPERTS];
    for (l, &y) in logits.iter().zip(labels) {
        let (loss, dc) = losses::loss_ce_grad(&combine(l, &w)?, y);
        value += loss;
        let g = weight_grad(l, &dc);
        for j in 0..NUM_EXPERTS {
            dw[j] += g[j];
        }
    }
    let n = logits.len() as f64;
    Ok((value / n, theta_grad(&w, &dw.map(|g| g / n))))
}

/// All points `(i, j, k) * step` with `i + j + k = 1 / step`.
pub fn simplex_grid(step: f64) -> Result<Vec<[f64; NUM_EXPERTS]>> {
    let n = (1.0 / step).round();
    if !(step > 0.0) || (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("grid step {step} must divide 1")));
    }
    let n = n as usize;
    let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in 0..=n - i {
            let k = n - i - j;
            out.push([i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64]);
        }
    }
    Ok(out)
}

/// Exhaustive search: the grid point with the best value of `f` (maximum if `maximize`).
pub fn grid_search<F>(step: f64, maximize: bool, mut f: F) -> Result<([f64; NUM_EXPERTS], f64)>
where
    F: FnMut(&[f64; NUM_EXPERTS]) -> Result<f64>,
{
    let mut best: Option<([f64; NUM_EXPERTS], f64)> = None;
    for w in simplex_grid(step)? {
        let v = f(&w)?;
        let better = match best {
            None => true,
            Some((_, b)) => {
                if maximize {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((w, v));
        }
    }
    Ok(best.expect("grid is never empty"))
}

/// Warning text when the train and test imbalance ratios differ by more than 20%.
pub fn ratio_mismatch_warning(train_ratio: f64, test_ratio: f64) -> Option<String> {
    let rel = (train_ratio - test_ratio).abs() / train_ratio.abs().max(f64::MIN_POSITIVE);
    (rel > 0.2).then(|| {
        format!(
            "train imbalance ratio {train_ratio:.2} and test ratio {test_ratio:.2} differ by {:.0}%; \
             phase-2 weights assume matched distributions",
            rel * 100.0
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        let v1 = [1.0, 0.0];
        let v2 = [0.0, 1.0];
        let v3 = [0.0, 0.0];
        let p = aggregate_with(&[v1.to_vec(), v2.to_vec(), v3.to_vec()], &[0.5, 0.25, 0.25]).unwrap();
        assert_eq!(p.combined, vec![0.5, 0.25]);
        let p = aggregate_with(&[v1.to_vec(), v2.to_vec(), v3.to_vec()], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.combined, v1.to_vec());
        let v = vec![0.3, -1.2, 2.0];
        let w = AggregationWeights::from_theta([0.4, -2.0, 1.0]);
        let p = aggregate(&v, &v, &v, &w).unwrap();
        for (a, b) in p.combined.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(aggregate(&[1.0], &[1.0, 2.0], &[1.0], &w).is_err());
    }

    #[test]
    fn uniform_init_and_simplex() {
        let w = AggregationWeights::default().w();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let s = AggregationWeights::from_simplex([0.59, 0.35, 0.06]).unwrap();
        let w = s.w();
        assert!((w[0] - 0.59).abs() < 1e-12 && (w[2] - 0.06).abs() < 1e-12);
        assert_eq!(s.argmax(), 0);
        assert!(AggregationWeights::from_simplex([0.5, 0.5, 0.0]).is_err());
        assert!(AggregationWeights::from_theta([700.0, -700.0, 0.0]).on_simplex());
    }

    #[test]
    fn stability_examples() {
        let pred = |p: Vec<f64>| AggregatedPrediction {
            combined: vec![],
            probs: p,
        };
        assert_eq!(stability_objective(&pred(vec![0.0, 1.0]), &pred(vec![0.0, 1.0])), 1.0);
        assert_eq!(stability_objective(&pred(vec![0.0, 1.0]), &pred(vec![1.0, 0.0])), 0.0);
        let u = pred(vec![0.1; 10]);
        assert!((stability_objective(&u, &u) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn grid_has_expected_size() {
        let g = simplex_grid(0.02).unwrap();
        assert_eq!(g.len(), 51 * 52 / 2);
        assert!(g.iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(simplex_grid(0.3).is_err());
    }

    #[test]
    fn ratio_warning_threshold() {
        assert!(ratio_mismatch_warning(55.5, 55.5).is_none());
        assert!(ratio_mismatch_warning(50.0, 59.0).is_none());
        assert!(ratio_mismatch_warning(50.0, 61.0).is_some());
    }

    fn finite_diff<F: Fn(&AggregationWeights) -> f64>(theta: [f64; 3], f: F) -> [f64; 3] {
        let h = 1e-5;
        let mut out = [0.0; 3];
        for j in 0..3 {
            let mut up = theta;
            up[j] += h;
            let mut down = theta;
            down[j] -= h;
            out[j] = (f(&AggregationWeights::from_theta(up)) - f(&AggregationWeights::from_theta(down))) / (2.0 * h);
        }
        out
    }

    fn logits3(seed: f64, k: usize) -> ExpertLogits {
        let v = |j: f64| (0..k).map(|c| ((c as f64 + 1.3) * (seed + j)).sin() * 2.0).collect();
        [v(0.1), v(0.7), v(1.9)]
    }

    #[test]
    fn theta_gradients_match_finite_differences() {
        let pairs: Vec<ViewPair> = (0..5)
            .map(|i| (logits3(i as f64, 4), logits3(i as f64 + 0.05, 4)))
            .collect();
        let logits: Vec<ExpertLogits> = (0..5).map(|i| logits3(i as f64 * 0.3, 4)).collect();
        let labels = [0, 1, 2, 3, 1];
        let theta = [0.3, -0.4, 0.1];
        for target in [StabilityTarget::Probabilities, StabilityTarget::Logits] {
            let (_, g) = stability_value_grad(&pairs, &AggregationWeights::from_theta(theta), target).unwrap();
            let fd = finite_diff(theta, |w| stability_value_grad(&pairs, w, target).unwrap().0);
            for j in 0..3 {
                assert!((g[j] - fd[j]).abs() < 1e-7, "{target:?} {j}: {} vs {}", g[j], fd[j]);
            }
        }
        let (_, g) = ce_value_grad(&logits, &labels, &AggregationWeights::from_theta(theta)).unwrap();
        let fd = finite_diff(theta, |w| ce_value_grad(&logits, &labels, w).unwrap().0);
        for j in 0..3 {
            assert!((g[j] - fd[j]).abs() < 1e-7);
        }
    }
}
