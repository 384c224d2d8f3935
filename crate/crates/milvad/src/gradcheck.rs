//! Analytic versus finite-difference gradients of the full pair objective.

use milvad_core::objective::{pair_objective, weight_norm_term, LossConfig, RankVariant};
use milvad_core::scorer::{backward_into, forward, init_params, Dropout, ForwardTrace, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::synth::oracle_grad;
use crate::{Error, Result};

/// Points closer than this to a kink are skipped.
const HINGE_GUARD: f64 = 0.05;
const ARGMAX_GUARD: f64 = 0.01;
const RELU_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub n_segments: usize,
    pub n_configs: usize,
    pub seed: u64,
    pub h: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { dim: 5, hidden: vec![4, 3], n_segments: 6, n_configs: 25, seed: 0, h: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn top_gap(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    match sorted.len() {
        0 | 1 => f64::INFINITY,
        n => sorted[n - 1] - sorted[n - 2],
    }
}

fn score_all(params: &ModelParams, bag: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<ForwardTrace>)> {
    let mut scores = Vec::with_capacity(bag.len());
    let mut traces = Vec::with_capacity(bag.len());
    for x in bag {
        let (s, t) = forward(params, x, Dropout::Off)?;
        scores.push(s);
        traces.push(t);
    }
    Ok((scores, traces))
}

/// Analytic gradient of the pair objective with respect to every parameter.
pub fn analytic_gradient(
    params: &ModelParams,
    bag_anom: &[Vec<f64>],
    bag_norm: &[Vec<f64>],
    loss: &LossConfig,
) -> Result<ModelParams> {
    let (sa, ta) = score_all(params, bag_anom)?;
    let (sn, tn) = score_all(params, bag_norm)?;
    let res = pair_objective(&sa, &sn, params, loss)?;
    let (_, mut grad) = weight_norm_term(params);
    for g in grad.values_mut() {
        *g *= loss.lambda3;
    }
    for (t, d) in ta.iter().zip(&res.d_scores_anom).chain(tn.iter().zip(&res.d_scores_norm)) {
        backward_into(params, &mut grad, t, *d)?;
    }
    Ok(grad)
}

/// Largest relative error between analytic and central-difference
/// gradients, or `None` when the point sits too close to a kink.
pub fn check_point(
    params: &ModelParams,
    bag_anom: &[Vec<f64>],
    bag_norm: &[Vec<f64>],
    loss: &LossConfig,
    h: f64,
) -> Result<Option<f64>> {
    let (sa, ta) = score_all(params, bag_anom)?;
    let (sn, tn) = score_all(params, bag_norm)?;
    let max_a = sa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let agg_n = match loss.variant {
        RankVariant::Original => sn.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        RankVariant::MeanNormal => sn.iter().sum::<f64>() / sn.len() as f64,
    };
    let smooth = (1.0 - max_a + agg_n).abs() > HINGE_GUARD
        && top_gap(&sa) > ARGMAX_GUARD
        && (loss.variant == RankVariant::MeanNormal || top_gap(&sn) > ARGMAX_GUARD)
        && ta.iter().chain(&tn).all(|t| t.min_hidden_margin() >= RELU_GUARD);
    if !smooth {
        return Ok(None);
    }

    let analytic = analytic_gradient(params, bag_anom, bag_norm, loss)?;
    let dims = params.layer_dims().to_vec();
    let objective = |theta: &[f64]| -> f64 {
        let eval = || -> Result<f64> {
            let p = ModelParams::from_values(&dims, theta.to_vec())?;
            let (a, _) = score_all(&p, bag_anom)?;
            let (n, _) = score_all(&p, bag_norm)?;
            Ok(pair_objective(&a, &n, &p, loss)?.total)
        };
        eval().unwrap_or(f64::NAN)
    };
    let numeric = oracle_grad(objective, params.values(), h)?;
    Ok(Some(analytic.values().iter().zip(&numeric).map(|(&a, &n)| rel_error(a, n)).fold(0.0, f64::max)))
}

fn gaussian_bag(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

/// Checks `n_configs` random smooth points with random regularizer weights,
/// alternating between the two rank variants.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.dim == 0 || cfg.n_segments == 0 || cfg.n_configs == 0 {
        return Err(Error::Config("dim, n_segments and n_configs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradcheckReport { checked: 0, skipped: 0, max_rel_error: 0.0 };
    let max_attempts = 100 * cfg.n_configs;
    while report.checked < cfg.n_configs {
        if report.checked + report.skipped >= max_attempts {
            return Err(Error::Config(format!(
                "found only {} smooth points in {max_attempts} attempts",
                report.checked
            )));
        }
        let mut params = init_params(cfg.dim, rng.random(), Some(&cfg.hidden))?;
        for v in params.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let loss = LossConfig {
            variant: if report.checked.is_multiple_of(2) { RankVariant::Original } else { RankVariant::MeanNormal },
            lambda1: rng.random_range(0.0..1.0),
            lambda2: rng.random_range(0.0..1.0),
            lambda3: rng.random_range(0.0..0.1),
        };
        let bag_anom = gaussian_bag(&mut rng, cfg.n_segments, cfg.dim);
        let bag_norm = gaussian_bag(&mut rng, cfg.n_segments, cfg.dim);
        match check_point(&params, &bag_anom, &bag_norm, &loss, cfg.h)? {
            Some(err) => {
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(err);
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}
