//! One optimizer step of multiple-instance ranking training.
//!
//! Each step samples `pairs_per_step` (anomalous, normal) bag pairs, scores
//! every segment with dropout active, averages the pair objectives and
//! applies one optimizer update on the mean gradient. All randomness (pair
//! choice and dropout masks) comes from the state's ChaCha stream, so a step
//! is a deterministic function of the state.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{FeatureBag, Label};
use crate::objective::{pair_objective_with_norm, weight_norm_term, LossConfig};
use crate::optim::OptimizerState;
use crate::scorer::{backward_into, forward, Dropout, ForwardTrace, ModelParams};
use crate::{Error, Result};

/// ChaCha stream used by the trainer; initialization uses the default stream.
const TRAIN_STREAM: u64 = 1;

/// Uniform sampling of bag indices within each label class.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSampler {
    anomalous: Vec<usize>,
    normal: Vec<usize>,
}

impl PairSampler {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Result<Self> {
        let mut anomalous = Vec::new();
        let mut normal = Vec::new();
        for (i, label) in labels.into_iter().enumerate() {
            match label {
                Label::Anomalous => anomalous.push(i),
                Label::Normal => normal.push(i),
            }
        }
        if anomalous.is_empty() {
            return Err(Error::MissingLabelClass(Label::Anomalous));
        }
        if normal.is_empty() {
            return Err(Error::MissingLabelClass(Label::Normal));
        }
        Ok(Self { anomalous, normal })
    }

    /// Returns (anomalous index, normal index), each drawn with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let a = self.anomalous[rng.random_range(0..self.anomalous.len())];
        let n = self.normal[rng.random_range(0..self.normal.len())];
        (a, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub loss: LossConfig,
    pub pairs_per_step: usize,
    pub dropout_rate: f64,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.pairs_per_step == 0 {
            return Err(Error::InvalidConfig("pairs_per_step must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidHyperparameter { name: "dropout_rate", value: self.dropout_rate });
        }
        Ok(())
    }
}

/// Position of the trainer's random stream, enough to restore it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    params: ModelParams,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl TrainState {
    pub fn new(params: ModelParams, optimizer: OptimizerState, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRAIN_STREAM);
        Self::from_parts(params, optimizer, rng, 0)
    }

    pub fn restore(params: ModelParams, optimizer: OptimizerState, rng: RngSnapshot, iteration: u64) -> Result<Self> {
        let mut chacha = ChaCha8Rng::from_seed(rng.seed);
        chacha.set_stream(rng.stream);
        chacha.set_word_pos(rng.word_pos);
        Self::from_parts(params, optimizer, chacha, iteration)
    }

    fn from_parts(params: ModelParams, optimizer: OptimizerState, rng: ChaCha8Rng, iteration: u64) -> Result<Self> {
        if optimizer.len() != params.values().len() {
            return Err(Error::LengthMismatch { expected: params.values().len(), found: optimizer.len() });
        }
        Ok(Self { params, optimizer, rng, iteration })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    /// Completed optimizer steps.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn rng_snapshot(&self) -> RngSnapshot {
        RngSnapshot { seed: self.rng.get_seed(), stream: self.rng.get_stream(), word_pos: self.rng.get_word_pos() }
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// A bag to score in training mode, with its own dropout seed.
#[derive(Debug, Clone, Copy)]
pub struct BagJob<'a> {
    pub bag: &'a FeatureBag,
    pub mask_seed: u64,
}

/// Training-mode scores and traces for every segment of one bag.
#[derive(Debug, Clone)]
pub struct BagForward {
    pub scores: Vec<f64>,
    pub traces: Vec<ForwardTrace>,
}

/// Scores all segments of a bag with dropout masks drawn from `mask_seed`.
pub fn forward_bag_training(params: &ModelParams, job: &BagJob<'_>, dropout_rate: f64) -> Result<BagForward> {
    let mut rng = ChaCha8Rng::seed_from_u64(job.mask_seed);
    let n = job.bag.n_segments();
    let mut scores = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for segment in job.bag.segments() {
        let dropout = if dropout_rate > 0.0 {
            Dropout::Active { rate: dropout_rate, rng: &mut rng }
        } else {
            Dropout::Off
        };
        let (s, t) = forward(params, segment, dropout)?;
        scores.push(s);
        traces.push(t);
    }
    Ok(BagForward { scores, traces })
}

/// Scores and indices of one sampled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub anomalous: usize,
    pub normal: usize,
    pub scores_anom: Vec<f64>,
    pub scores_norm: Vec<f64>,
}

/// Mean objective over the step's pairs, before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// 1-based index of this step.
    pub iteration: u64,
    pub total: f64,
    pub rank: f64,
    pub smooth: f64,
    pub sparse: f64,
    pub weightnorm: f64,
    pub pairs: Vec<PairRecord>,
}

/// Runs one step, scoring bags sequentially.
pub fn train_step(state: &mut TrainState, bags: &[FeatureBag], sampler: &PairSampler, cfg: &StepConfig) -> Result<StepReport> {
    train_step_with(state, bags, sampler, cfg, |params, jobs, rate| {
        jobs.iter().map(|job| forward_bag_training(params, job, rate)).collect()
    })
}

/// Runs one step with a caller-provided bag scorer.
///
/// `score` receives the jobs in fixed order (anomalous then normal bag for
/// each pair) and must return results in the same order; it may evaluate
/// them concurrently. Reduction always happens in job order.
pub fn train_step_with<F>(
    state: &mut TrainState,
    bags: &[FeatureBag],
    sampler: &PairSampler,
    cfg: &StepConfig,
    score: F,
) -> Result<StepReport>
where
    F: FnOnce(&ModelParams, &[BagJob<'_>], f64) -> Vec<Result<BagForward>>,
{
    cfg.validate()?;
    let mut jobs = Vec::with_capacity(2 * cfg.pairs_per_step);
    let mut pairs = Vec::with_capacity(cfg.pairs_per_step);
    for _ in 0..cfg.pairs_per_step {
        let (a, n) = sampler.sample(&mut state.rng);
        let bag_a = bags.get(a).ok_or(Error::IndexOutOfRange { index: a, len: bags.len() })?;
        let bag_n = bags.get(n).ok_or(Error::IndexOutOfRange { index: n, len: bags.len() })?;
        if bag_a.n_segments() != bag_n.n_segments() {
            return Err(Error::LengthMismatch { expected: bag_a.n_segments(), found: bag_n.n_segments() });
        }
        pairs.push((a, n));
        jobs.push(BagJob { bag: bag_a, mask_seed: state.rng.random() });
        jobs.push(BagJob { bag: bag_n, mask_seed: state.rng.random() });
    }

    let outputs = score(&state.params, &jobs, cfg.dropout_rate);
    if outputs.len() != jobs.len() {
        return Err(Error::LengthMismatch { expected: jobs.len(), found: outputs.len() });
    }
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let (norm, d_norm) = weight_norm_term(&state.params);
    let scale = 1.0 / cfg.pairs_per_step as f64;
    let mut grad = state.params.zeros_like();
    let mut report = StepReport {
        iteration: state.iteration + 1,
        total: 0.0,
        rank: 0.0,
        smooth: 0.0,
        sparse: 0.0,
        weightnorm: norm,
        pairs: Vec::with_capacity(pairs.len()),
    };
    for ((a, n), out) in pairs.into_iter().zip(outputs.chunks_exact(2)) {
        let (fa, fnorm) = (&out[0], &out[1]);
        let res = pair_objective_with_norm(&fa.scores, &fnorm.scores, norm, &cfg.loss)?;
        report.total += res.total;
        report.rank += res.rank_term;
        report.smooth += res.smooth_term;
        report.sparse += res.sparse_term;
        for (trace, d) in fa.traces.iter().zip(&res.d_scores_anom) {
            backward_into(&state.params, &mut grad, trace, d * scale)?;
        }
        for (trace, d) in fnorm.traces.iter().zip(&res.d_scores_norm) {
            backward_into(&state.params, &mut grad, trace, d * scale)?;
        }
        report.pairs.push(PairRecord {
            anomalous: a,
            normal: n,
            scores_anom: fa.scores.clone(),
            scores_norm: fnorm.scores.clone(),
        });
    }
    report.total *= scale;
    report.rank *= scale;
    report.smooth *= scale;
    report.sparse *= scale;
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: report.iteration });
    }
    grad.add_scaled(&d_norm, cfg.loss.lambda3)?;
    state.optimizer.step(state.params.values_mut(), grad.values())?;
    state.iteration += 1;
    Ok(report)
}
