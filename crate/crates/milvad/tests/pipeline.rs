use std::fs;
use std::path::Path;

use milvad::checkpoint::load_training_checkpoint;
use milvad::corpus_io::{load_manifest, Corpus};
use milvad::reference::{THROWING_TRAIN_ANOMALOUS, THROWING_TRAIN_NORMAL};
use milvad::synth::{generate, SynthSpec};
use milvad::trainer::{TrainConfig, Trainer};
use milvad_core::corpus::{Label, Manifest, Split, VideoRecord};
use milvad_core::objective::{rank_loss, LossConfig, RankVariant};
use milvad_core::train::PairSampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn record(id: String, label: Label) -> VideoRecord {
    VideoRecord { video_id: id, split: Split::Train, label, n_frames: 512, intervals: vec![], feature_paths: vec!["f.csv".into()] }
}

fn small_corpus(dir: &Path) -> Corpus {
    let spec = SynthSpec { dim: 8, n_videos_normal: 6, n_videos_anom: 6, n_segments: 8, max_anomalous_segments: 3, ..SynthSpec::default() };
    load_manifest(generate(&spec, dir).unwrap().manifest_path).unwrap()
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig { n_segments: 8, iterations: 40, hidden: vec![16, 8], seed, ..TrainConfig::default() }
}

/// Chi-square statistic of `counts` against a uniform distribution.
fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn sampling_is_uniform_within_each_class() {
    let records: Vec<VideoRecord> = (0..THROWING_TRAIN_NORMAL)
        .map(|i| record(format!("n{i}"), Label::Normal))
        .chain((0..THROWING_TRAIN_ANOMALOUS).map(|i| record(format!("a{i}"), Label::Anomalous)))
        .collect();
    let manifest = Manifest::new(records, 4).unwrap();
    manifest.check_trainable().unwrap();
    let train: Vec<&VideoRecord> = manifest.split(Split::Train).collect();
    assert_eq!(train.len(), 267);

    let sampler = PairSampler::new(train.iter().map(|r| r.label)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = vec![0u64; train.len()];
    for _ in 0..100_000 {
        let (a, n) = sampler.sample(&mut rng);
        assert_eq!(train[a].label, Label::Anomalous);
        assert_eq!(train[n].label, Label::Normal);
        counts[a] += 1;
        counts[n] += 1;
    }
    for (class, k) in [(&counts[..THROWING_TRAIN_NORMAL], THROWING_TRAIN_NORMAL), (&counts[THROWING_TRAIN_NORMAL..], THROWING_TRAIN_ANOMALOUS)] {
        let df = (k - 1) as f64;
        let stat = chi_square(class);
        assert!((stat - df).abs() <= 3.0 * (2.0 * df).sqrt(), "chi-square {stat} with {df} degrees of freedom");
    }
}

#[test]
fn forced_pair_and_seeded_sequence() {
    let sampler = PairSampler::new([Label::Normal, Label::Anomalous]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        assert_eq!(sampler.sample(&mut rng), (1, 0));
    }
    let labels = [Label::Normal, Label::Anomalous, Label::Anomalous, Label::Normal, Label::Anomalous];
    let sampler = PairSampler::new(labels).unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert!(PairSampler::new([Label::Normal, Label::Normal]).is_err());
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&dir.path().join("c"));
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        fs::create_dir_all(&out).unwrap();
        Trainer::new(&corpus, small_config(3)).unwrap().run(40, Some(&out)).unwrap();
        files.push(fs::read(out.join("final.ckpt")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn loss_decreases_on_separable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { dim: 16, n_videos_normal: 10, n_videos_anom: 10, n_segments: 16, ..SynthSpec::default() };
    let corpus = load_manifest(generate(&spec, dir.path()).unwrap().manifest_path).unwrap();
    let cfg = TrainConfig { n_segments: 16, hidden: vec![64, 16], seed: 1, ..TrainConfig::default() };
    let log = Trainer::new(&corpus, cfg).unwrap().run(2000, None).unwrap();
    let totals = log.totals();
    let head: f64 = totals[..200].iter().sum::<f64>() / 200.0;
    let tail: f64 = totals[1800..].iter().sum::<f64>() / 200.0;
    assert!(tail < head, "{tail} >= {head}");
    assert!(log.records.windows(2).all(|w| w[0].iteration < w[1].iteration));
}

#[test]
fn unregularized_loss_equals_rank_loss_of_logged_scores() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    for variant in [RankVariant::Original, RankVariant::MeanNormal] {
        let cfg = TrainConfig {
            dropout_rate: 0.0,
            loss: LossConfig { variant, lambda1: 0.0, lambda2: 0.0, lambda3: 0.0 },
            ..small_config(4)
        };
        let mut t = Trainer::new(&corpus, cfg).unwrap();
        for _ in 0..20 {
            let report = t.step().unwrap();
            let pair = &report.pairs[0];
            assert_eq!(report.total, rank_loss(&pair.scores_anom, &pair.scores_norm, variant).unwrap().value);
        }
    }
}

#[test]
fn cached_bags_match_fresh_loads_and_corpus_is_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let snapshot = |c: &Corpus| -> Vec<Vec<u8>> {
        let mut files = vec![fs::read(dir.path().join("manifest.csv")).unwrap()];
        files.extend(c.manifest().records().iter().map(|r| fs::read(c.feature_path(r, 0)).unwrap()));
        files
    };
    let before = snapshot(&corpus);
    let mut t = Trainer::new(&corpus, small_config(2)).unwrap();
    t.run(30, None).unwrap();
    let train: Vec<&VideoRecord> = corpus.manifest().split(Split::Train).collect();
    for (bag, r) in t.bags().iter().zip(&train) {
        assert_eq!(bag, &corpus.load_bag(r, 0, 8).unwrap());
    }
    assert_eq!(before, snapshot(&corpus));
}

#[test]
fn resume_continues_where_training_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&dir.path().join("c"));
    let mut straight = Trainer::new(&corpus, small_config(8)).unwrap();
    straight.run(60, None).unwrap();

    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let cfg = TrainConfig { iterations: 30, ..small_config(8) };
    milvad::trainer::train(&corpus, cfg.clone(), Some(&out)).unwrap();
    let (params, log) = milvad::trainer::resume(out.join("final.ckpt"), &corpus, cfg.clone(), Some(&out)).unwrap();
    assert_eq!(&params, straight.params());
    assert_eq!(log.records.first().unwrap().iteration, 31);
    let csv = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);

    let other_loss = TrainConfig { loss: LossConfig { variant: RankVariant::MeanNormal, ..LossConfig::default() }, ..cfg };
    let ck = load_training_checkpoint(out.join("final.ckpt")).unwrap();
    let mut t = Trainer::resume(&corpus, other_loss, ck).unwrap();
    t.run(5, None).unwrap();
    assert_eq!(t.iteration(), 65);
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(&dir.path().join("c"));
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let cfg = TrainConfig { checkpoint_every: 15, ..small_config(1) };
    milvad::trainer::train(&corpus, cfg, Some(&out)).unwrap();
    for f in ["ckpt_00000015.ckpt", "ckpt_00000030.ckpt", "final.ckpt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(load_training_checkpoint(out.join("ckpt_00000030.ckpt")).unwrap().iteration, 30);
}
