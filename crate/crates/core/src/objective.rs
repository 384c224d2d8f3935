//! Ranking objective for one (anomalous, normal) bag pair.
//!
//! The hinge term compares the highest anomalous segment score with either
//! the highest normal score ([`RankVariant::Original`]) or the mean normal
//! score ([`RankVariant::MeanNormal`]). Temporal smoothness and sparsity
//! regularize the anomalous bag only; a Frobenius norm penalizes the weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::scorer::ModelParams;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA_SMOOTH: f64 = 8e-5;
pub const DEFAULT_LAMBDA_SPARSE: f64 = 8e-5;
pub const DEFAULT_LAMBDA_WEIGHTS: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankVariant {
    /// Hinge on the maximum normal score.
    Original,
    /// Hinge on the mean normal score, so every normal segment gets gradient.
    MeanNormal,
}

impl RankVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RankVariant::Original => "original",
            RankVariant::MeanNormal => "mean_normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub variant: RankVariant,
    /// Temporal smoothness weight.
    pub lambda1: f64,
    /// Sparsity weight.
    pub lambda2: f64,
    /// Weight-norm weight.
    pub lambda3: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: RankVariant::Original,
            lambda1: DEFAULT_LAMBDA_SMOOTH,
            lambda2: DEFAULT_LAMBDA_SPARSE,
            lambda3: DEFAULT_LAMBDA_WEIGHTS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidHyperparameter { name, value });
            }
        }
        Ok(())
    }
}

/// Value and score gradients of the rank term.
#[derive(Debug, Clone, PartialEq)]
pub struct RankLoss {
    pub value: f64,
    pub d_anom: Vec<f64>,
    pub d_norm: Vec<f64>,
}

/// Index of the first maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("segment scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("segment scores"));
    }
    Ok(())
}

pub fn rank_loss(scores_anom: &[f64], scores_norm: &[f64], variant: RankVariant) -> Result<RankLoss> {
    check_scores(scores_anom)?;
    check_scores(scores_norm)?;
    if scores_anom.len() != scores_norm.len() {
        return Err(Error::LengthMismatch { expected: scores_anom.len(), found: scores_norm.len() });
    }
    let n = scores_norm.len();
    let top_anom = argmax(scores_anom);
    let top_norm = argmax(scores_norm);
    let normal_level = match variant {
        RankVariant::Original => scores_norm[top_norm],
        RankVariant::MeanNormal => scores_norm.iter().sum::<f64>() / n as f64,
    };
    let margin = 1.0 - scores_anom[top_anom] + normal_level;
    let mut d_anom = vec![0.0; n];
    let mut d_norm = vec![0.0; n];
    if margin <= 0.0 {
        return Ok(RankLoss { value: 0.0, d_anom, d_norm });
    }
    d_anom[top_anom] = -1.0;
    match variant {
        RankVariant::Original => d_norm[top_norm] = 1.0,
        RankVariant::MeanNormal => d_norm.fill(1.0 / n as f64),
    }
    Ok(RankLoss { value: margin, d_anom, d_norm })
}

/// Sum of squared differences between consecutive anomalous scores.
pub fn smoothness_term(scores_anom: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_scores(scores_anom)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; scores_anom.len()];
    for (i, w) in scores_anom.windows(2).enumerate() {
        let diff = w[0] - w[1];
        value += diff * diff;
        grad[i] += 2.0 * diff;
        grad[i + 1] -= 2.0 * diff;
    }
    Ok((value, grad))
}

/// Sum of anomalous scores.
pub fn sparsity_term(scores_anom: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_scores(scores_anom)?;
    Ok((scores_anom.iter().sum(), vec![1.0; scores_anom.len()]))
}

/// Frobenius norm over all weight matrices (biases excluded) and its gradient.
pub fn weight_norm_term(params: &ModelParams) -> (f64, ModelParams) {
    let norm = libm::sqrt(params.weight_entries().map(|w| w * w).sum::<f64>());
    let mut grad = params.zeros_like();
    if norm > 0.0 {
        for l in 0..params.n_layers() {
            for (g, w) in grad.weights_mut(l).iter_mut().zip(params.weights(l)) {
                *g = w / norm;
            }
        }
    }
    (norm, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLossResult {
    pub total: f64,
    pub rank_term: f64,
    pub smooth_term: f64,
    pub sparse_term: f64,
    pub weightnorm_term: f64,
    /// d(total)/d(anomalous scores), regularizers included.
    pub d_scores_anom: Vec<f64>,
    /// d(total)/d(normal scores).
    pub d_scores_norm: Vec<f64>,
}

/// Full objective for one pair, given the weight norm already evaluated.
pub fn pair_objective_with_norm(
    scores_anom: &[f64],
    scores_norm: &[f64],
    weight_norm: f64,
    cfg: &LossConfig,
) -> Result<PairLossResult> {
    cfg.validate()?;
    let rank = rank_loss(scores_anom, scores_norm, cfg.variant)?;
    let (smooth, d_smooth) = smoothness_term(scores_anom)?;
    let (sparse, d_sparse) = sparsity_term(scores_anom)?;
    let total = rank.value + cfg.lambda1 * smooth + cfg.lambda2 * sparse + cfg.lambda3 * weight_norm;
    let d_scores_anom = rank
        .d_anom
        .iter()
        .zip(d_smooth.iter().zip(&d_sparse))
        .map(|(r, (sm, sp))| r + cfg.lambda1 * sm + cfg.lambda2 * sp)
        .collect();
    Ok(PairLossResult {
        total,
        rank_term: rank.value,
        smooth_term: smooth,
        sparse_term: sparse,
        weightnorm_term: weight_norm,
        d_scores_anom,
        d_scores_norm: rank.d_norm,
    })
}

/// Full objective for one pair. Gradients are with respect to the scores;
/// the weight-norm gradient comes from [`weight_norm_term`].
pub fn pair_objective(
    scores_anom: &[f64],
    scores_norm: &[f64],
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<PairLossResult> {
    let (norm, _) = weight_norm_term(params);
    pair_objective_with_norm(scores_anom, scores_norm, norm, cfg)
}
