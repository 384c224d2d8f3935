//! Training loop over a corpus: bag caching, logging and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use milvad_core::corpus::{FeatureBag, Split, DEFAULT_SEGMENTS};
use milvad_core::objective::LossConfig;
use milvad_core::optim::{make_state, Hyperparams, OptimizerKind, OptimizerState};
use milvad_core::scorer::{init_params, ModelParams, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use milvad_core::train::{
    forward_bag_training, train_step_with, BagForward, PairSampler, StepConfig, StepReport, TrainState,
};
use rayon::prelude::*;
use serde_json::json;

use crate::checkpoint::{load_training_checkpoint, save_training_checkpoint, TrainingCheckpoint};
use crate::corpus_io::Corpus;
use crate::{Error, Result};

pub const DEFAULT_ITERATIONS: u64 = 100_000;
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
const LOG_HEADER: &str = "iteration,total,rank,smooth,sparse,weightnorm,elapsed_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_segments: usize,
    pub iterations: u64,
    pub pairs_per_step: usize,
    pub optimizer: OptimizerKind,
    pub hyper: Hyperparams,
    pub loss: LossConfig,
    pub seed: u64,
    pub dropout_rate: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub hidden: Vec<usize>,
    /// Threads used to score the bags of one step.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_optimizer(OptimizerKind::Adam)
    }
}

impl TrainConfig {
    pub fn with_optimizer(optimizer: OptimizerKind) -> Self {
        Self {
            n_segments: DEFAULT_SEGMENTS,
            iterations: DEFAULT_ITERATIONS,
            pairs_per_step: 1,
            optimizer,
            hyper: Hyperparams::defaults(optimizer),
            loss: LossConfig::default(),
            seed: 0,
            dropout_rate: DEFAULT_DROPOUT,
            checkpoint_every: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.n_segments == 0 {
            return Err(Error::Config("n_segments must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.step_config().validate()?;
        make_state(self.optimizer, self.hyper, 0)?;
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig { loss: self.loss, pairs_per_step: self.pairs_per_step, dropout_rate: self.dropout_rate }
    }

    /// Every field, defaults included, for run manifests.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "n_segments": self.n_segments,
            "iterations": self.iterations,
            "pairs_per_step": self.pairs_per_step,
            "optimizer": self.optimizer.as_str(),
            "lr": self.hyper.learning_rate,
            "beta1": self.hyper.beta1,
            "beta2": self.hyper.beta2,
            "rho": self.hyper.rho,
            "epsilon": self.hyper.epsilon,
            "loss": self.loss.variant.as_str(),
            "lambda1": self.loss.lambda1,
            "lambda2": self.loss.lambda2,
            "lambda3": self.loss.lambda3,
            "seed": self.seed,
            "dropout": self.dropout_rate,
            "checkpoint_every": self.checkpoint_every,
            "hidden": self.hidden,
            "jobs": self.jobs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub total: f64,
    pub rank: f64,
    pub smooth: f64,
    pub sparse: f64,
    pub weightnorm: f64,
    pub elapsed_ms: u128,
}

impl LogRecord {
    fn from_report(r: &StepReport, elapsed_ms: u128) -> Self {
        Self {
            iteration: r.iteration,
            total: r.total,
            rank: r.rank,
            smooth: r.smooth,
            sparse: r.sparse,
            weightnorm: r.weightnorm,
            elapsed_ms,
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.total, self.rank, self.smooth, self.sparse, self.weightnorm, self.elapsed_ms
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "{LOG_HEADER}").map_err(io)?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_line()).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Pools the first feature variant of every training video, in manifest order.
pub fn load_train_bags(corpus: &Corpus, n_segments: usize) -> Result<Vec<FeatureBag>> {
    corpus
        .manifest()
        .split(Split::Train)
        .map(|r| corpus.load_bag(r, 0, n_segments))
        .collect()
}

pub struct Trainer {
    cfg: TrainConfig,
    bags: Vec<FeatureBag>,
    sampler: PairSampler,
    state: TrainState,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("cfg", &self.cfg)
            .field("bags", &self.bags.len())
            .field("iteration", &self.state.iteration())
            .finish()
    }
}

impl Trainer {
    pub fn new(corpus: &Corpus, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        corpus.manifest().check_trainable()?;
        let bags = load_train_bags(corpus, cfg.n_segments)?;
        Self::from_bags(bags, cfg)
    }

    /// Starts fresh training on already pooled bags.
    pub fn from_bags(bags: Vec<FeatureBag>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = bags.first().ok_or(milvad_core::Error::Empty("training bags"))?.dim();
        let params = init_params(dim, cfg.seed, Some(&cfg.hidden))?;
        let optimizer = make_state(cfg.optimizer, cfg.hyper, params.values().len())?;
        let state = TrainState::new(params, optimizer, cfg.seed)?;
        Self::assemble(bags, cfg, state)
    }

    /// Continues from a training checkpoint.
    pub fn resume(corpus: &Corpus, cfg: TrainConfig, ck: TrainingCheckpoint) -> Result<Self> {
        cfg.validate()?;
        corpus.manifest().check_trainable()?;
        let bags = load_train_bags(corpus, cfg.n_segments)?;
        Self::resume_from_bags(bags, cfg, ck)
    }

    pub fn resume_from_bags(bags: Vec<FeatureBag>, cfg: TrainConfig, ck: TrainingCheckpoint) -> Result<Self> {
        cfg.validate()?;
        let dim = bags.first().ok_or(milvad_core::Error::Empty("training bags"))?.dim();
        let dims = ck.params.layer_dims();
        if dims[0] != dim {
            return Err(milvad_core::Error::DimensionMismatch { expected: dims[0], found: dim }.into());
        }
        if dims[1..dims.len() - 1] != cfg.hidden[..] {
            return Err(Error::Config(format!(
                "checkpoint hidden layers {:?} differ from configured {:?}",
                &dims[1..dims.len() - 1],
                cfg.hidden
            )));
        }
        if ck.optimizer.kind() != cfg.optimizer {
            return Err(Error::Config(format!(
                "checkpoint was trained with {}, configuration asks for {}",
                ck.optimizer.kind(),
                cfg.optimizer
            )));
        }
        if ck.variant != cfg.loss.variant {
            log::warn!(
                "checkpoint was trained with the {} loss; continuing with {}",
                ck.variant.as_str(),
                cfg.loss.variant.as_str()
            );
        }
        if *ck.optimizer.hyperparams() != cfg.hyper {
            log::warn!("optimizer hyperparameters differ from the checkpoint; using the configured values");
        }
        let optimizer = OptimizerState::from_parts(
            cfg.optimizer,
            cfg.hyper,
            ck.optimizer.step_count(),
            ck.optimizer.first().to_vec(),
            ck.optimizer.second().to_vec(),
        )?;
        let state = TrainState::restore(ck.params, optimizer, ck.rng, ck.iteration)?;
        Self::assemble(bags, cfg, state)
    }

    fn assemble(bags: Vec<FeatureBag>, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        let dim = state.params().input_dim();
        for bag in &bags {
            if bag.dim() != dim {
                return Err(milvad_core::Error::DimensionMismatch { expected: dim, found: bag.dim() }.into());
            }
            if bag.n_segments() != cfg.n_segments {
                return Err(milvad_core::Error::LengthMismatch { expected: cfg.n_segments, found: bag.n_segments() }.into());
            }
        }
        let sampler = PairSampler::new(bags.iter().map(FeatureBag::label))?;
        let pool = if cfg.jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
            Some(pool)
        } else {
            None
        };
        Ok(Self { cfg, bags, sampler, state, pool })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn bags(&self) -> &[FeatureBag] {
        &self.bags
    }

    pub fn params(&self) -> &ModelParams {
        self.state.params()
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration()
    }

    pub fn into_params(self) -> ModelParams {
        self.state.into_params()
    }

    pub fn checkpoint(&self) -> TrainingCheckpoint {
        TrainingCheckpoint {
            params: self.state.params().clone(),
            optimizer: self.state.optimizer().clone(),
            rng: self.state.rng_snapshot(),
            iteration: self.state.iteration(),
            variant: self.cfg.loss.variant,
        }
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepReport> {
        let step_cfg = self.cfg.step_config();
        let pool = self.pool.as_ref();
        let report = train_step_with(&mut self.state, &self.bags, &self.sampler, &step_cfg, |params, jobs, rate| {
            let run = |job| forward_bag_training(params, job, rate);
            match pool {
                Some(pool) => pool.install(|| jobs.par_iter().map(run).collect::<Vec<_>>()),
                None => jobs.iter().map(run).collect::<Vec<milvad_core::Result<BagForward>>>(),
            }
        });
        if let Err(milvad_core::Error::NonFiniteLoss { iteration }) = &report {
            log::error!("loss became non-finite at iteration {iteration}; aborting without applying the update");
        }
        Ok(report?)
    }

    /// Runs `steps` more steps. With an output directory, writes the log
    /// as it goes plus periodic and final checkpoints.
    pub fn run(&mut self, steps: u64, out_dir: Option<&Path>) -> Result<TrainLog> {
        let start = Instant::now();
        let mut log_file = match out_dir {
            Some(dir) => Some(open_log(&dir.join(LOG_FILE), self.state.iteration() > 0)?),
            None => None,
        };
        let mut log = TrainLog { records: Vec::with_capacity(steps as usize) };
        for _ in 0..steps {
            let report = self.step()?;
            let record = LogRecord::from_report(&report, start.elapsed().as_millis());
            if let Some((path, w)) = log_file.as_mut() {
                writeln!(w, "{}", record.csv_line()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            log.records.push(record);
            let it = self.state.iteration();
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && it.is_multiple_of(self.cfg.checkpoint_every) {
                    save_training_checkpoint(&self.checkpoint(), dir.join(format!("ckpt_{it:08}.ckpt")))?;
                    log::info!("iteration {it}: loss {:.6}, checkpoint written", report.total);
                }
            }
            if it.is_multiple_of(1000) {
                log::debug!("iteration {it}: loss {:.6}", report.total);
            }
        }
        if let Some((path, mut w)) = log_file {
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        if let Some(dir) = out_dir {
            save_training_checkpoint(&self.checkpoint(), dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(log)
    }
}

fn open_log(path: &Path, append: bool) -> Result<(PathBuf, BufWriter<File>)> {
    let exists = path.exists();
    let file = if append && exists {
        OpenOptions::new().append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if !(append && exists) {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    Ok((path.to_path_buf(), w))
}

/// Trains from scratch for `cfg.iterations` steps.
pub fn train(corpus: &Corpus, cfg: TrainConfig, out_dir: Option<&Path>) -> Result<(ModelParams, TrainLog)> {
    let steps = cfg.iterations;
    let mut trainer = Trainer::new(corpus, cfg)?;
    let log = trainer.run(steps, out_dir)?;
    Ok((trainer.into_params(), log))
}

/// Loads a training checkpoint and runs `cfg.iterations` further steps.
pub fn resume(
    checkpoint: impl AsRef<Path>,
    corpus: &Corpus,
    cfg: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainLog)> {
    let ck = load_training_checkpoint(checkpoint)?;
    let steps = cfg.iterations;
    let mut trainer = Trainer::resume(corpus, cfg, ck)?;
    let log = trainer.run(steps, out_dir)?;
    Ok((trainer.into_params(), log))
}
