//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use milvad_core::corpus::{concat_features, Label, Split, VideoRecord, DEFAULT_SEGMENTS};
use milvad_core::metrics::{expand_scores_to_frames, DEFAULT_FAR_THRESHOLD};
use milvad_core::objective::{LossConfig, RankVariant, DEFAULT_LAMBDA_SMOOTH, DEFAULT_LAMBDA_SPARSE, DEFAULT_LAMBDA_WEIGHTS};
use milvad_core::optim::{Hyperparams, OptimizerKind};
use milvad_core::scorer::DEFAULT_DROPOUT;
use serde_json::json;

use crate::checkpoint::load_checkpoint;
use crate::corpus_io::{load_manifest, write_clip_features, write_manifest, Corpus};
use crate::evaluator::{evaluate, export_series, predict_video, write_series, EvalOptions, VideoSeries};
use crate::gradcheck::{self, GradcheckConfig};
use crate::synth::{self, SynthSpec};
use crate::trainer::{self, TrainConfig, DEFAULT_ITERATIONS};
use crate::{Error, Result};

pub const RUN_MANIFEST: &str = "run.json";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "milvad", version, about = "Multiple-instance video anomaly detection on precomputed clip features")]
pub struct Cli {
    /// Log progress (-v) or details (-vv) to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and print its statistics.
    Ingest(IngestArgs),
    /// Train a scorer.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Score a single video.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Concatenate the features of aligned corpora.
    Concat(ConcatArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Adadelta,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Adadelta => OptimizerKind::Adadelta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Original,
    #[value(name = "mean_normal")]
    MeanNormal,
}

impl From<LossArg> for RankVariant {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Original => RankVariant::Original,
            LossArg::MeanNormal => RankVariant::MeanNormal,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
    pub n_segments: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the run manifest, log and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a training checkpoint; runs `--iterations` more steps.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Learning rate [default: 0.0005 for adam, 0.01 for adadelta]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam first-moment decay
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    /// Adam second-moment decay
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    /// Adadelta decay
    #[arg(long, default_value_t = 0.95)]
    pub rho: f64,
    /// Numerical stabilizer [default: 1e-8 for adam, 1e-6 for adadelta]
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: u64,
    #[arg(long, default_value_t = 1)]
    pub pairs_per_step: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Original)]
    pub loss: LossArg,
    /// Temporal smoothness weight
    #[arg(long, default_value_t = DEFAULT_LAMBDA_SMOOTH)]
    pub lambda1: f64,
    /// Sparsity weight
    #[arg(long, default_value_t = DEFAULT_LAMBDA_SPARSE)]
    pub lambda2: f64,
    /// Weight-norm penalty
    #[arg(long, default_value_t = DEFAULT_LAMBDA_WEIGHTS)]
    pub lambda3: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_DROPOUT)]
    pub dropout_rate: f64,
    /// Steps between checkpoints; 0 writes only final.ckpt
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
    pub n_segments: usize,
    /// Hidden layer widths
    #[arg(long, value_delimiter = ',', default_value = "512,32")]
    pub hidden: Vec<usize>,
    /// Threads for scoring bags within a step
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        let kind = OptimizerKind::from(self.optimizer);
        let defaults = Hyperparams::defaults(kind);
        TrainConfig {
            n_segments: self.n_segments,
            iterations: self.iterations,
            pairs_per_step: self.pairs_per_step,
            optimizer: kind,
            hyper: Hyperparams {
                learning_rate: self.lr.unwrap_or(defaults.learning_rate),
                beta1: self.beta1,
                beta2: self.beta2,
                rho: self.rho,
                epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            },
            loss: LossConfig {
                variant: self.loss.into(),
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
            },
            seed: self.seed,
            dropout_rate: self.dropout_rate,
            checkpoint_every: self.checkpoint_every,
            hidden: self.hidden.clone(),
            jobs: self.jobs,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
    pub n_segments: usize,
    /// Segments of normal videos scoring above this count as false alarms
    #[arg(long, default_value_t = DEFAULT_FAR_THRESHOLD)]
    pub far_threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub video_id: String,
    /// Write `frame,score,label` here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
    pub n_segments: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,3")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    pub n_segments: usize,
    #[arg(long, default_value_t = 25)]
    pub n_configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub n_videos_normal: usize,
    #[arg(long, default_value_t = 40)]
    pub n_videos_anom: usize,
    #[arg(long, default_value_t = DEFAULT_SEGMENTS)]
    pub n_segments: usize,
    #[arg(long, default_value_t = 1)]
    pub min_anomalous_segments: usize,
    #[arg(long, default_value_t = 10)]
    pub max_anomalous_segments: usize,
    /// Anomalous mean shift in units of noise_sigma
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    /// Share of normal segments drawn with doubled noise
    #[arg(long, default_value_t = 0.0)]
    pub noisy_normal_fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            dim: self.dim,
            n_videos_normal: self.n_videos_normal,
            n_videos_anom: self.n_videos_anom,
            n_segments: self.n_segments,
            min_anomalous_segments: self.min_anomalous_segments,
            max_anomalous_segments: self.max_anomalous_segments,
            separation: self.separation,
            noise_sigma: self.noise_sigma,
            noisy_normal_fraction: self.noisy_normal_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConcatArgs {
    /// Manifests describing the same videos; repeat once per corpus
    #[arg(long = "manifest", required = true, num_args = 1)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Synth(a) => run_synth(a),
        Command::Concat(a) => concat(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Records the command, its fully resolved configuration and its paths.
pub fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: &[&Path],
) -> Result<()> {
    create_dir(out_dir)?;
    let manifest = json!({
        "command": command,
        "config": config,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "output": out_dir.display().to_string(),
    });
    let path = out_dir.join(RUN_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("run manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn ingest(a: &IngestArgs) -> Result<i32> {
    let corpus = load_manifest(&a.manifest)?;
    let m = corpus.manifest();
    let mut frames = 0;
    for r in m.records() {
        for v in 0..r.feature_paths.len() {
            corpus.load_bag(r, v, a.n_segments)?;
        }
        frames += r.n_frames;
    }
    let mut out = std::io::stdout().lock();
    let count = |split, label| m.split(split).filter(|r| r.label == label).count();
    let _ = writeln!(out, "videos: {}", m.records().len());
    let _ = writeln!(out, "dim: {}", m.dim());
    let _ = writeln!(out, "frames: {frames}");
    for split in [Split::Train, Split::Test] {
        let _ = writeln!(
            out,
            "{split}: {} normal, {} anomalous",
            count(split, Label::Normal),
            count(split, Label::Anomalous)
        );
    }
    Ok(0)
}

fn train(a: &TrainArgs) -> Result<i32> {
    let cfg = a.config();
    cfg.validate()?;
    let mut inputs = vec![a.manifest.as_path()];
    inputs.extend(a.resume.as_deref());
    let command = if a.resume.is_some() { "train --resume" } else { "train" };
    write_run_manifest(&a.out, command, cfg.to_json(), Some(cfg.seed), &inputs)?;
    let corpus = load_manifest(&a.manifest)?;
    let (_, log) = match &a.resume {
        Some(ck) => trainer::resume(ck, &corpus, cfg, Some(&a.out))?,
        None => trainer::train(&corpus, cfg, Some(&a.out))?,
    };
    if let Some(last) = log.records.last() {
        println!("iteration {}: loss {}", last.iteration, last.total);
    }
    Ok(0)
}

fn eval(a: &EvalArgs) -> Result<i32> {
    let opts = EvalOptions { n_segments: a.n_segments, far_threshold: a.far_threshold, jobs: a.jobs };
    let config = json!({ "n_segments": a.n_segments, "far_threshold": a.far_threshold, "jobs": a.jobs });
    write_run_manifest(&a.out, "eval", config, None, &[&a.manifest, &a.checkpoint])?;
    let corpus = load_manifest(&a.manifest)?;
    let params = load_checkpoint(&a.checkpoint)?;
    let report = evaluate(&params, &corpus, &opts)?;
    export_series(&report, &a.out)?;
    println!("auc: {}", report.auc);
    match report.far_percent {
        Some(far) => println!("far_percent: {far}"),
        None => println!("far_percent: n/a (no normal test videos)"),
    }
    Ok(0)
}

fn predict(a: &PredictArgs) -> Result<i32> {
    let corpus = load_manifest(&a.manifest)?;
    let record = corpus
        .manifest()
        .get(&a.video_id)
        .ok_or_else(|| Error::Config(format!("video {:?} is not in the manifest", a.video_id)))?;
    let params = load_checkpoint(&a.checkpoint)?;
    let scores = predict_video(&params, record, &corpus, a.n_segments)?;
    let series = VideoSeries {
        video_id: record.video_id.clone(),
        label: record.label,
        frame_scores: expand_scores_to_frames(&scores.scores, record.n_frames)?,
        frame_labels: milvad_core::corpus::frame_labels(record),
        segment_scores: scores.scores,
    };
    match &a.out {
        Some(path) => write_series(path, &series)?,
        None => {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "frame,score,label");
            for (f, (s, l)) in series.frame_scores.iter().zip(&series.frame_labels).enumerate() {
                let _ = writeln!(out, "{f},{s},{l}");
            }
        }
    }
    Ok(0)
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig {
        dim: a.dim,
        hidden: a.hidden.clone(),
        n_segments: a.n_segments,
        n_configs: a.n_configs,
        seed: a.seed,
        h: a.h,
    };
    let report = gradcheck::run(&cfg)?;
    println!("configurations: {} (skipped {} near kinks)", report.checked, report.skipped);
    println!("max relative error: {:e}", report.max_rel_error);
    Ok(if report.max_rel_error < GRADCHECK_TOLERANCE { 0 } else { 2 })
}

fn run_synth(a: &SynthArgs) -> Result<i32> {
    let spec = a.spec();
    spec.validate()?;
    let config = json!({
        "dim": spec.dim,
        "n_videos_normal": spec.n_videos_normal,
        "n_videos_anom": spec.n_videos_anom,
        "n_segments": spec.n_segments,
        "min_anomalous_segments": spec.min_anomalous_segments,
        "max_anomalous_segments": spec.max_anomalous_segments,
        "separation": spec.separation,
        "noise_sigma": spec.noise_sigma,
        "noisy_normal_fraction": spec.noisy_normal_fraction,
        "seed": spec.seed,
    });
    write_run_manifest(&a.out, "synth", config, Some(spec.seed), &[])?;
    let corpus = synth::generate(&spec, &a.out)?;
    println!("{}", corpus.manifest_path.display());
    Ok(0)
}

fn aligned<'a>(first: &VideoRecord, other: &'a Corpus, path: &Path) -> Result<&'a VideoRecord> {
    let r = other.manifest().get(&first.video_id).ok_or_else(|| Error::InvalidFile {
        path: path.to_path_buf(),
        message: format!("video {:?} is missing", first.video_id),
    })?;
    if r.split != first.split
        || r.label != first.label
        || r.n_frames != first.n_frames
        || r.intervals != first.intervals
        || r.feature_paths.len() != first.feature_paths.len()
    {
        return Err(Error::InvalidFile {
            path: path.to_path_buf(),
            message: format!("video {:?} does not match the first manifest", first.video_id),
        });
    }
    Ok(r)
}

fn concat(a: &ConcatArgs) -> Result<i32> {
    let inputs: Vec<&Path> = a.manifests.iter().map(PathBuf::as_path).collect();
    write_run_manifest(&a.out, "concat", json!({}), None, &inputs)?;
    let corpora = a.manifests.iter().map(load_manifest).collect::<Result<Vec<_>>>()?;
    let first = &corpora[0];
    for (c, path) in corpora.iter().zip(&a.manifests).skip(1) {
        if c.manifest().records().len() != first.manifest().records().len() {
            return Err(Error::InvalidFile {
                path: path.clone(),
                message: "manifests list different numbers of videos".into(),
            });
        }
    }
    let feat_dir = a.out.join(synth::FEATURES_DIR);
    create_dir(&feat_dir)?;
    let mut records = Vec::with_capacity(first.manifest().records().len());
    for r in first.manifest().records() {
        let others =
            corpora.iter().zip(&a.manifests).map(|(c, p)| aligned(r, c, p)).collect::<Result<Vec<_>>>()?;
        let mut paths = Vec::with_capacity(r.feature_paths.len());
        for v in 0..r.feature_paths.len() {
            let parts = corpora
                .iter()
                .zip(&others)
                .map(|(c, rec)| c.load_variant(rec, v))
                .collect::<Result<Vec<_>>>()?;
            let joined = concat_features(&parts)?;
            let rel = if v == 0 {
                format!("{}/{}.csv", synth::FEATURES_DIR, r.video_id)
            } else {
                format!("{}/{}_{v}.csv", synth::FEATURES_DIR, r.video_id)
            };
            write_clip_features(a.out.join(&rel), &joined)?;
            paths.push(rel);
        }
        records.push(VideoRecord { feature_paths: paths, ..r.clone() });
    }
    let manifest_path = a.out.join(synth::MANIFEST_FILE);
    write_manifest(&manifest_path, &records)?;
    println!("{}", manifest_path.display());
    Ok(0)
}
