//! Synthetic corpora with known ground truth, plus brute-force oracles.

use std::fs;
use std::path::{Path, PathBuf};

use milvad_core::corpus::{ClipFeatureMatrix, FrameInterval, Label, Split, VideoRecord, FRAMES_PER_CLIP, MAX_INTERVALS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus_io::{write_clip_features, write_manifest};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_videos_normal: usize,
    pub n_videos_anom: usize,
    pub n_segments: usize,
    pub min_anomalous_segments: usize,
    pub max_anomalous_segments: usize,
    /// Distance of the anomalous mean from the origin, in units of `noise_sigma`.
    pub separation: f64,
    pub noise_sigma: f64,
    /// Share of each normal video's segments drawn with doubled noise.
    pub noisy_normal_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            n_videos_normal: 40,
            n_videos_anom: 40,
            n_segments: 32,
            min_anomalous_segments: 1,
            max_anomalous_segments: 10,
            separation: 3.0,
            noise_sigma: 1.0,
            noisy_normal_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.dim == 0 || self.n_segments == 0 {
            return bad("dim and n_segments must be at least 1");
        }
        if self.n_videos_normal == 0 || self.n_videos_anom == 0 {
            return bad("video counts must be at least 1");
        }
        if self.min_anomalous_segments == 0
            || self.min_anomalous_segments > self.max_anomalous_segments
            || self.max_anomalous_segments > self.n_segments.min(MAX_INTERVALS)
        {
            return bad("anomalous segment range must satisfy 1 <= min <= max <= min(10, n_segments)");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be finite and non-negative");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.noisy_normal_fraction) {
            return bad("noisy_normal_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Number of training videos out of `n` under a 70/30 split.
pub fn train_count(n: usize) -> usize {
    (7 * n + 5) / 10
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest_path: PathBuf,
    pub records: Vec<VideoRecord>,
    /// Unit direction of the anomalous mean shift.
    pub direction: Vec<f64>,
}

fn gaussian_row(rng: &mut ChaCha8Rng, mean: Option<(&[f64], f64)>, sigma: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let z: f64 = StandardNormal.sample(rng);
            let shift = mean.map_or(0.0, |(u, m)| m * u[j]);
            shift + sigma * z
        })
        .collect()
}

/// Writes `manifest.csv` and `features/<video_id>.csv` under `out_dir`.
///
/// Every video has one clip per segment and `16 * n_segments` frames, so
/// clips, segments and frame ranges line up exactly.
pub fn generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let feat_dir = out_dir.join(FEATURES_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let raw = gaussian_row(&mut rng, None, 1.0, spec.dim);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let direction: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let magnitude = spec.separation * spec.noise_sigma;
    let n_frames = FRAMES_PER_CLIP * spec.n_segments;
    let mut records = Vec::with_capacity(spec.n_videos_normal + spec.n_videos_anom);

    let n_noisy = (spec.noisy_normal_fraction * spec.n_segments as f64).round() as usize;
    for v in 0..spec.n_videos_normal {
        let video_id = format!("normal_{v:04}");
        let mut noisy = vec![false; spec.n_segments];
        for i in rand::seq::index::sample(&mut rng, spec.n_segments, n_noisy) {
            noisy[i] = true;
        }
        let rows: Vec<Vec<f64>> = noisy
            .iter()
            .map(|&loud| {
                let sigma = if loud { 2.0 * spec.noise_sigma } else { spec.noise_sigma };
                gaussian_row(&mut rng, None, sigma, spec.dim)
            })
            .collect();
        let split = if v < train_count(spec.n_videos_normal) { Split::Train } else { Split::Test };
        records.push(write_video(out_dir, &video_id, split, Label::Normal, vec![], n_frames, spec.dim, &rows)?);
    }

    for v in 0..spec.n_videos_anom {
        let video_id = format!("anomalous_{v:04}");
        let k = rng.random_range(spec.min_anomalous_segments..=spec.max_anomalous_segments);
        let start = rng.random_range(0..=spec.n_segments - k);
        let rows: Vec<Vec<f64>> = (0..spec.n_segments)
            .map(|i| {
                let mean = (start..start + k).contains(&i).then_some((direction.as_slice(), magnitude));
                gaussian_row(&mut rng, mean, spec.noise_sigma, spec.dim)
            })
            .collect();
        let interval = FrameInterval::new(start * FRAMES_PER_CLIP, (start + k) * FRAMES_PER_CLIP);
        let split = if v < train_count(spec.n_videos_anom) { Split::Train } else { Split::Test };
        records.push(write_video(out_dir, &video_id, split, Label::Anomalous, vec![interval], n_frames, spec.dim, &rows)?);
    }

    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest_path, &records)?;
    Ok(SynthCorpus { manifest_path, records, direction })
}

#[allow(clippy::too_many_arguments)]
fn write_video(
    out_dir: &Path,
    video_id: &str,
    split: Split,
    label: Label,
    intervals: Vec<FrameInterval>,
    n_frames: usize,
    dim: usize,
    rows: &[Vec<f64>],
) -> Result<VideoRecord> {
    let rel = format!("{FEATURES_DIR}/{video_id}.csv");
    write_clip_features(out_dir.join(&rel), &ClipFeatureMatrix::from_rows(video_id, dim, rows)?)?;
    let record = VideoRecord { video_id: video_id.into(), split, label, n_frames, intervals, feature_paths: vec![rel] };
    record.validate()?;
    Ok(record)
}

/// AUC by comparing every positive with every negative.
pub fn oracle_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(milvad_core::Error::LengthMismatch { expected: scores.len(), found: labels.len() }.into());
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l != 0).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(milvad_core::Error::SingleClass.into());
    }
    let mut credit = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (pos.len() as f64 * neg.len() as f64))
}

/// Central-difference gradient of `f` at `theta`.
pub fn oracle_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(milvad_core::Error::InvalidHyperparameter { name: "h", value: h }.into());
    }
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = f(&x);
        x[i] = theta[i] - h;
        let down = f(&x);
        x[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(milvad_core::Error::NonFinite("finite-difference evaluation").into());
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::load_manifest;

    fn small() -> SynthSpec {
        SynthSpec { dim: 6, n_videos_normal: 5, n_videos_anom: 4, n_segments: 8, max_anomalous_segments: 3, ..SynthSpec::default() }
    }

    #[test]
    fn oracle_auc_examples() {
        assert_eq!(oracle_auc(&[0.9, 0.4, 0.1, 0.6], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(oracle_auc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(oracle_auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(oracle_auc(&[0.3, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn oracle_grad_examples() {
        let g = oracle_grad(|t| t[0] * t[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-7);
        let g = oracle_grad(|_| 4.0, &[1.0, -2.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(oracle_grad(|t| t[0].ln(), &[0.0], 1e-4).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec { n_videos_anom: 0, ..small() }.validate().is_err());
        assert!(SynthSpec { separation: -1.0, ..small() }.validate().is_err());
        assert!(SynthSpec { max_anomalous_segments: 9, ..small() }.validate().is_err());
        assert!(SynthSpec { min_anomalous_segments: 4, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
    }

    #[test]
    fn generated_corpus_loads_and_matches_counts() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&small(), dir.path()).unwrap();
        let corpus = load_manifest(&out.manifest_path).unwrap();
        let m = corpus.manifest();
        assert_eq!(m.dim(), 6);
        let count = |split, label| m.split(split).filter(|r| r.label == label).count();
        assert_eq!(count(Split::Train, Label::Normal), 4);
        assert_eq!(count(Split::Test, Label::Normal), 1);
        assert_eq!(count(Split::Train, Label::Anomalous), 3);
        assert_eq!(count(Split::Test, Label::Anomalous), 1);
        for r in m.records() {
            assert_eq!(r.n_frames, 128);
            let clips = corpus.load_variant(r, 0).unwrap();
            assert_eq!(clips.n_clips(), 8);
            if r.label == Label::Anomalous {
                let len = r.intervals[0].len() / FRAMES_PER_CLIP;
                assert!((1..=3).contains(&len));
            }
        }
        let n: f64 = out.direction.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SynthSpec { noisy_normal_fraction: 0.25, ..small() };
        let ra = generate(&spec, a.path()).unwrap();
        generate(&spec, b.path()).unwrap();
        assert_eq!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(b.path().join(MANIFEST_FILE)).unwrap());
        for r in &ra.records {
            let p = &r.feature_paths[0];
            assert_eq!(fs::read(a.path().join(p)).unwrap(), fs::read(b.path().join(p)).unwrap());
        }
    }

    #[test]
    fn anomalous_segments_shifted_along_direction() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { separation: 50.0, ..small() };
        let out = generate(&spec, dir.path()).unwrap();
        let corpus = load_manifest(&out.manifest_path).unwrap();
        for r in corpus.manifest().records() {
            let clips = corpus.load_variant(r, 0).unwrap();
            for (i, clip) in clips.clips().enumerate() {
                let proj: f64 = clip.iter().zip(&out.direction).map(|(a, b)| a * b).sum();
                let inside = r.intervals.iter().any(|iv| (iv.start..iv.end).contains(&(i * FRAMES_PER_CLIP)));
                assert_eq!(proj > 25.0, inside, "{} segment {i}", r.video_id);
            }
        }
    }
}
