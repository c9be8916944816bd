//! Multi-task logistic regression heads: sequence scores, PMF, censored and
//! uncensored likelihoods, and the regularized multi-label loss.
//!
//! Everything here is a plain function of slices. The network evaluates the
//! same quantities on the tape; the two routes are cross-checked in tests.

use serde::{Deserialize, Serialize};

use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};
use crate::survival::{legal_sequence, TargetSequence, TimeGrid};

/// Parameters of one MTLR head over `d` features and `K` intervals.
///
/// `weights` is `[d, K-1]` row-major: column `k` is `θ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtlrHead {
    features: usize,
    intervals: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl MtlrHead {
    pub fn zeros(features: usize, intervals: usize) -> Self {
        Self {
            features,
            intervals,
            weights: vec![0.0; features * (intervals - 1)],
            biases: vec![0.0; intervals - 1],
        }
    }

    pub fn new(features: usize, intervals: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::Config(format!("MTLR head needs K >= 2, got {intervals}")));
        }
        if weights.len() != features * (intervals - 1) || biases.len() != intervals - 1 {
            return Err(Error::Dimension {
                op: "mtlr_head",
                lhs: vec![features, intervals - 1],
                rhs: vec![weights.len(), biases.len()],
            });
        }
        Ok(Self {
            features,
            intervals,
            weights,
            biases,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// `K`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// `θ_k·x + b_k` for `k = 1..K-1`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.features {
            return Err(Error::Dimension {
                op: "mtlr_logits",
                lhs: vec![self.features],
                rhs: vec![x.len()],
            });
        }
        let m = self.intervals - 1;
        let mut out = self.biases.clone();
        for (j, xv) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weights[j * m..(j + 1) * m]) {
                *o += xv * w;
            }
        }
        Ok(out)
    }

    fn theta_sq_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

/// Scores of all `K` legal sequences, by enumeration:
/// `score_i = Σ_k (θ_k·x + b_k)·y^{(i)}_k`.
pub fn sequence_scores(head: &MtlrHead, x: &[f64]) -> Result<Vec<f64>> {
    let logits = head.logits(x)?;
    let k = head.intervals();
    Ok((1..=k)
        .map(|i| {
            legal_sequence(i, k)
                .iter()
                .zip(&logits)
                .map(|(&y, l)| f64::from(y) * l)
                .sum()
        })
        .collect())
}

/// Discrete event-time distribution for one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedCurve {
    pmf: Vec<f64>,
    survival: Vec<f64>,
}

impl PredictedCurve {
    /// Softmax over sequence scores, stabilized by the maximum score.
    pub fn from_scores(scores: &[f64]) -> Self {
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let pmf: Vec<f64> = exps.iter().map(|e| e / z).collect();
        Self::build(pmf)
    }

    /// Curve from an explicit PMF over `K >= 2` intervals.
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        let total: f64 = pmf.iter().sum();
        if pmf.len() < 2 || pmf.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("not a PMF over at least two intervals: {pmf:?}")));
        }
        Ok(Self::build(pmf))
    }

    fn build(pmf: Vec<f64>) -> Self {
        let k = pmf.len();
        // S(t_k) = Σ_{i > k} pmf_i, k = 0..K-1
        let mut survival = vec![0.0; k];
        let mut tail = 0.0;
        for j in (1..k).rev() {
            tail += pmf[j];
            survival[j] = tail;
        }
        survival[0] = 1.0;
        Self { pmf, survival }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `S(t_k)` for `k = 0..K-1`, with `S(t_0) = 1`.
    pub fn survival(&self) -> &[f64] {
        &self.survival
    }

    pub fn intervals(&self) -> usize {
        self.pmf.len()
    }

    /// Survival at an arbitrary time: linear between grid boundaries, held
    /// flat past `t_{K-1}`.
    pub fn survival_at(&self, grid: &TimeGrid, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let k = self.intervals();
        for j in 1..k {
            let (t0, t1) = (grid.boundary(j - 1), grid.boundary(j));
            if t <= t1 {
                let w = (t - t0) / (t1 - t0);
                return self.survival[j - 1] + w * (self.survival[j] - self.survival[j - 1]);
            }
        }
        self.survival[k - 1]
    }
}

pub fn pmf(head: &MtlrHead, x: &[f64]) -> Result<PredictedCurve> {
    Ok(PredictedCurve::from_scores(&sequence_scores(head, x)?))
}

fn range_log_prob(scores: &[f64], first: usize, last: usize) -> f64 {
    log_sum_exp(&scores[first - 1..last]) - log_sum_exp(scores)
}

/// `log P(event in interval k | x)` for an exact target.
pub fn loglik_uncensored(head: &MtlrHead, x: &[f64], target: &TargetSequence) -> Result<f64> {
    match target {
        TargetSequence::Exact { interval, .. } => {
            check_interval(*interval, head.intervals())?;
            let scores = sequence_scores(head, x)?;
            Ok(scores[interval - 1] - log_sum_exp(&scores))
        }
        TargetSequence::Censored { .. } => Err(Error::Usage(
            "loglik_uncensored called with a censored target".into(),
        )),
    }
}

/// `log P(event in interval >= c | x)`: marginal over every interval still
/// admissible after censoring in interval `c`.
pub fn loglik_censored(head: &MtlrHead, x: &[f64], censor_interval: usize) -> Result<f64> {
    check_interval(censor_interval, head.intervals())?;
    let scores = sequence_scores(head, x)?;
    Ok(range_log_prob(&scores, censor_interval, head.intervals()))
}

pub fn loglik(head: &MtlrHead, x: &[f64], target: &TargetSequence) -> Result<f64> {
    match target {
        TargetSequence::Exact { .. } => loglik_uncensored(head, x, target),
        TargetSequence::Censored { interval } => loglik_censored(head, x, *interval),
    }
}

fn check_interval(i: usize, k: usize) -> Result<()> {
    if i == 0 || i > k {
        return Err(Error::Usage(format!("interval {i} outside 1..={k}")));
    }
    Ok(())
}

/// All heads plus the loss weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtlrParams {
    pub heads: Vec<MtlrHead>,
    /// `λ_s`, one per head.
    pub label_weights: Vec<f64>,
    /// L2 strength on the head weights (biases are not penalized).
    pub beta: f64,
}

impl MtlrParams {
    /// Zero heads, uniform label weights and `β = 1`.
    pub fn new(labels: usize, features: usize, intervals: usize) -> Self {
        Self {
            heads: (0..labels).map(|_| MtlrHead::zeros(features, intervals)).collect(),
            label_weights: vec![1.0; labels],
            beta: 1.0,
        }
    }
}

/// Per-patient targets, indexed `[patient][label]`.
pub type TargetTable = [Vec<Option<TargetSequence>>];

fn target_at(targets: &TargetTable, j: usize, s: usize) -> Result<&TargetSequence> {
    targets
        .get(j)
        .and_then(|row| row.get(s))
        .and_then(|t| t.as_ref())
        .ok_or_else(|| Error::Data(format!("patient {j} has no target for label {s}")))
}

/// `-Σ_s λ_s · mean_j loglik_s(x^j) + (β/2)·Σ_s ‖θ_s‖²`.
pub fn multi_label_loss(params: &MtlrParams, features: &[Vec<f64>], targets: &TargetTable) -> Result<f64> {
    Ok(multi_label_loss_grad(params, features, targets)?.0)
}

/// Loss and its analytic gradient with respect to every head.
pub fn multi_label_loss_grad(
    params: &MtlrParams,
    features: &[Vec<f64>],
    targets: &TargetTable,
) -> Result<(f64, Vec<MtlrHead>)> {
    if params.label_weights.len() != params.heads.len() {
        return Err(Error::Config(format!(
            "{} label weights for {} heads",
            params.label_weights.len(),
            params.heads.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::Data("multi-label loss over an empty cohort".into()));
    }
    let r = features.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(params.heads.len());
    for (s, (head, &lambda)) in params.heads.iter().zip(&params.label_weights).enumerate() {
        let k = head.intervals();
        let m = k - 1;
        let mut g = MtlrHead::zeros(head.features(), k);
        let mut ll_sum = 0.0;
        for (j, x) in features.iter().enumerate() {
            let target = target_at(targets, j, s)?;
            let (first, last) = target.admissible(k);
            check_interval(first, k)?;
            let scores = sequence_scores(head, x)?;
            let all = log_sum_exp(&scores);
            let part = log_sum_exp(&scores[first - 1..last]);
            ll_sum += part - all;
            if lambda == 0.0 {
                continue;
            }
            let coef = -lambda / r;
            let mut run = 0.0;
            for (i, &sc) in scores.iter().take(m).enumerate() {
                let q = if i + 1 >= first && i < last { (sc - part).exp() } else { 0.0 };
                run += q - (sc - all).exp();
                g.biases[i] += coef * run;
                for (jj, xv) in x.iter().enumerate() {
                    g.weights[jj * m + i] += coef * run * xv;
                }
            }
        }
        loss -= lambda * ll_sum / r;
        loss += 0.5 * params.beta * head.theta_sq_norm();
        for (gw, w) in g.weights.iter_mut().zip(&head.weights) {
            *gw += params.beta * w;
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Negative restricted mean survival over the finite grid:
/// `-Σ_{k=1}^{K-1} S(t_k)·(t_k - t_{k-1})`. Larger means earlier expected
/// event.
pub fn risk_score(curve: &PredictedCurve, grid: &TimeGrid) -> f64 {
    let s = curve.survival();
    -(1..curve.intervals())
        .map(|k| s[k] * (grid.boundary(k) - grid.boundary(k - 1)))
        .sum::<f64>()
}
