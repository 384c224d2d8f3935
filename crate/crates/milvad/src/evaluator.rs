//! Corpus-level scoring, AUC, false alarms and plot-ready exports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use milvad_core::corpus::{frame_labels, Label, Split, VideoRecord, DEFAULT_SEGMENTS};
use milvad_core::metrics::{
    expand_scores_to_frames, false_alarm_percent, mean_scores, roc_auc, roc_curve, RocPoint, DEFAULT_FAR_THRESHOLD,
};
use milvad_core::scorer::{score_bag, ModelParams, SegmentScores};
use rayon::prelude::*;
use serde_json::json;

use crate::corpus_io::Corpus;
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const SERIES_DIR: &str = "series";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_segments: usize,
    pub far_threshold: f64,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_segments: DEFAULT_SEGMENTS, far_threshold: DEFAULT_FAR_THRESHOLD, jobs: 1 }
    }
}

/// Frame-level scores and ground truth for one test video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSeries {
    pub video_id: String,
    pub label: Label,
    pub segment_scores: Vec<f64>,
    pub frame_scores: Vec<f64>,
    pub frame_labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    /// `None` when the test split has no normal videos.
    pub far_percent: Option<f64>,
    pub far_threshold: f64,
    pub roc: Vec<RocPoint>,
    pub videos: Vec<VideoSeries>,
}

impl EvalReport {
    pub fn n_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frame_scores.len()).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "auc": self.auc,
            "far_percent": self.far_percent,
            "far_threshold": self.far_threshold,
            "n_videos": self.videos.len(),
            "n_frames": self.n_frames(),
        })
    }
}

/// Segment scores of one video, averaged over all of its feature variants.
pub fn predict_video(params: &ModelParams, record: &VideoRecord, corpus: &Corpus, n_segments: usize) -> Result<SegmentScores> {
    let variants = (0..record.feature_paths.len())
        .map(|v| {
            let bag = corpus.load_bag(record, v, n_segments)?;
            Ok(score_bag(params, &bag)?.scores)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentScores { video_id: record.video_id.clone(), scores: mean_scores(&variants)? })
}

fn predict_all(
    params: &ModelParams,
    records: &[&VideoRecord],
    corpus: &Corpus,
    opts: &EvalOptions,
) -> Result<Vec<SegmentScores>> {
    let run = |r: &&VideoRecord| predict_video(params, r, corpus, opts.n_segments);
    if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", opts.jobs)))?;
        pool.install(|| records.par_iter().map(run).collect())
    } else {
        records.iter().map(run).collect()
    }
}

/// Percentage of normal-video segments scoring above `threshold`.
pub fn false_alarm_rate(
    params: &ModelParams,
    records: &[&VideoRecord],
    corpus: &Corpus,
    threshold: f64,
    opts: &EvalOptions,
) -> Result<f64> {
    let normal: Vec<&VideoRecord> = records.iter().copied().filter(|r| r.label == Label::Normal).collect();
    if normal.is_empty() {
        return Err(milvad_core::Error::MissingLabelClass(Label::Normal).into());
    }
    let scores: Vec<f64> = predict_all(params, &normal, corpus, opts)?.into_iter().flat_map(|s| s.scores).collect();
    Ok(false_alarm_percent(&scores, threshold)?)
}

/// Scores every test video and computes one AUC over all their frames,
/// concatenated in manifest order.
pub fn evaluate(params: &ModelParams, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalReport> {
    let records: Vec<&VideoRecord> = corpus.manifest().split(Split::Test).collect();
    if records.is_empty() {
        return Err(milvad_core::Error::Empty("test split").into());
    }
    let predictions = predict_all(params, &records, corpus, opts)?;
    let mut videos = Vec::with_capacity(records.len());
    for (record, pred) in records.iter().zip(predictions) {
        videos.push(VideoSeries {
            video_id: record.video_id.clone(),
            label: record.label,
            frame_scores: expand_scores_to_frames(&pred.scores, record.n_frames)?,
            frame_labels: frame_labels(record),
            segment_scores: pred.scores,
        });
    }
    let scores: Vec<f64> = videos.iter().flat_map(|v| v.frame_scores.iter().copied()).collect();
    let labels: Vec<u8> = videos.iter().flat_map(|v| v.frame_labels.iter().copied()).collect();
    let normal: Vec<f64> = videos
        .iter()
        .filter(|v| v.label == Label::Normal)
        .flat_map(|v| v.segment_scores.iter().copied())
        .collect();
    let far_percent = if normal.is_empty() { None } else { Some(false_alarm_percent(&normal, opts.far_threshold)?) };
    Ok(EvalReport {
        auc: roc_auc(&scores, &labels)?,
        far_percent,
        far_threshold: opts.far_threshold,
        roc: roc_curve(&scores, &labels)?,
        videos,
    })
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        writeln!(w, "{row}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `frame,score,label` rows for one video.
pub fn write_series(path: impl AsRef<Path>, video: &VideoSeries) -> Result<()> {
    let rows = video
        .frame_scores
        .iter()
        .zip(&video.frame_labels)
        .enumerate()
        .map(|(f, (s, l))| format!("{f},{s},{l}"));
    write_lines(path.as_ref(), "frame,score,label", rows)
}

/// Writes `report.json`, `roc.csv` and one `series/<video_id>.csv` per video.
pub fn export_series(report: &EvalReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let series_dir = out_dir.join(SERIES_DIR);
    fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    for video in &report.videos {
        write_series(series_dir.join(format!("{}.csv", video.video_id)), video)?;
    }
    let roc = report
        .roc
        .iter()
        .map(|p| format!("{},{},{}", p.false_positive_rate, p.true_positive_rate, p.threshold));
    write_lines(&out_dir.join(ROC_FILE), "fpr,tpr,threshold", roc)?;
    let path = out_dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report.to_json()).expect("report values serialize");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::{load_manifest, write_clip_features, write_manifest};
    use milvad_core::corpus::{ClipFeatureMatrix, FrameInterval};
    use milvad_core::scorer::{init_params, ModelParams};

    fn record(id: &str, split: Split, label: Label, intervals: Vec<FrameInterval>, paths: &[&str]) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            split,
            label,
            n_frames: 64,
            intervals,
            feature_paths: paths.iter().map(|p| p.to_string()).collect(),
        }
    }

    fn corpus(dir: &Path) -> Corpus {
        let feats = |id: &str, file: &str, shift: f64| {
            let rows: Vec<Vec<f64>> = (0..4).map(|k| vec![shift + k as f64 * 0.1, -0.2]).collect();
            write_clip_features(dir.join(file), &ClipFeatureMatrix::from_rows(id, 2, &rows).unwrap()).unwrap();
        };
        feats("tr_a", "tr_a.csv", 1.0);
        feats("tr_n", "tr_n.csv", 0.0);
        feats("te_a", "te_a.csv", 1.0);
        feats("te_a", "te_a_flip.csv", 1.0);
        feats("te_n", "te_n.csv", 0.0);
        let records = vec![
            record("tr_a", Split::Train, Label::Anomalous, vec![], &["tr_a.csv"]),
            record("tr_n", Split::Train, Label::Normal, vec![], &["tr_n.csv"]),
            record("te_a", Split::Test, Label::Anomalous, vec![FrameInterval::new(16, 48)], &["te_a.csv", "te_a_flip.csv"]),
            record("te_n", Split::Test, Label::Normal, vec![], &["te_n.csv"]),
        ];
        write_manifest(dir.join("m.csv"), &records).unwrap();
        load_manifest(dir.join("m.csv")).unwrap()
    }

    #[test]
    fn zero_model_scores_half_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(dir.path());
        let params = ModelParams::zeros(&[2, 3, 2, 1]).unwrap();
        let opts = EvalOptions { n_segments: 4, ..EvalOptions::default() };
        let report = evaluate(&params, &c, &opts).unwrap();
        assert_eq!(report.auc, 0.5);
        assert_eq!(report.far_percent, Some(0.0));
        assert_eq!(report.n_frames(), 128);
        assert_eq!(report.roc.len(), 3);
    }

    #[test]
    fn identical_variants_match_single() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(dir.path());
        let params = init_params(2, 3, Some(&[3, 2])).unwrap();
        let rec = c.manifest().get("te_a").unwrap();
        let both = predict_video(&params, rec, &c, 4).unwrap();
        let single = score_bag(&params, &c.load_bag(rec, 0, 4).unwrap()).unwrap();
        assert_eq!(both, single);
    }

    #[test]
    fn parallel_matches_serial_and_export_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(dir.path());
        let params = init_params(2, 11, Some(&[3, 2])).unwrap();
        let serial = evaluate(&params, &c, &EvalOptions { n_segments: 4, ..EvalOptions::default() }).unwrap();
        let parallel = evaluate(&params, &c, &EvalOptions { n_segments: 4, jobs: 2, ..EvalOptions::default() }).unwrap();
        assert_eq!(serial, parallel);

        let out1 = dir.path().join("e1");
        let out2 = dir.path().join("e2");
        export_series(&serial, &out1).unwrap();
        export_series(&parallel, &out2).unwrap();
        for f in ["report.json", "roc.csv", "series/te_a.csv", "series/te_n.csv"] {
            assert_eq!(fs::read(out1.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
        }
        let series = fs::read_to_string(out1.join("series/te_a.csv")).unwrap();
        assert_eq!(series.lines().count(), 65);
        let roc = fs::read_to_string(out1.join("roc.csv")).unwrap();
        assert_eq!(roc.lines().count(), serial.roc.len() + 1);
    }

    #[test]
    fn far_needs_normal_videos() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(dir.path());
        let params = ModelParams::zeros(&[2, 3, 2, 1]).unwrap();
        let anomalous: Vec<&VideoRecord> = vec![c.manifest().get("te_a").unwrap()];
        let opts = EvalOptions { n_segments: 4, ..EvalOptions::default() };
        assert!(false_alarm_rate(&params, &anomalous, &c, 0.5, &opts).is_err());
        let normal: Vec<&VideoRecord> = c.manifest().split(Split::Test).collect();
        assert_eq!(false_alarm_rate(&params, &normal, &c, 0.4, &opts).unwrap(), 100.0);
    }
}
