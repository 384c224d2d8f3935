//! Data model for videos as bags of segments.
//!
//! Upstream extractors produce one feature vector per consecutive 16-frame
//! clip. Clips are averaged into a fixed number of segments, and segment,
//! clip and frame indices are related by the same floor-proportional rule:
//! part `i` of `n` covers `[floor(i * total / n), floor((i + 1) * total / n))`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::{Error, Result};

/// Default number of segments per video.
pub const DEFAULT_SEGMENTS: usize = 32;

/// Number of frames covered by one upstream clip.
pub const FRAMES_PER_CLIP: usize = 16;

/// Maximum number of annotated anomalies in one test video.
pub const MAX_INTERVALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(Label::Normal),
            "anomalous" => Some(Label::Anomalous),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index range of part `index` when `total` items are divided into `parts`.
///
/// Ranges for `index in 0..parts` are disjoint and tile `0..total`. When
/// `total < parts` some ranges are empty.
pub fn proportional_range(index: usize, total: usize, parts: usize) -> Range<usize> {
    debug_assert!(parts > 0 && index < parts);
    let bound = |i: usize| ((i as u128 * total as u128) / parts as u128) as usize;
    bound(index)..bound(index + 1)
}

/// Per-clip features of one video, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatureMatrix {
    video_id: String,
    dim: usize,
    data: Vec<f64>,
}

impl ClipFeatureMatrix {
    pub fn new(video_id: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::Empty("clip feature matrix"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: data.len() % dim });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("clip features"));
        }
        Ok(Self { video_id: video_id.into(), dim, data })
    }

    /// Builds a matrix from individual clip rows.
    pub fn from_rows(video_id: impl Into<String>, dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(video_id, dim, data)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_clips(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn clip(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn clips(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Concatenates features from several extractors clip by clip, in argument order.
pub fn concat_features(matrices: &[ClipFeatureMatrix]) -> Result<ClipFeatureMatrix> {
    let first = matrices.first().ok_or(Error::Empty("feature matrices to concatenate"))?;
    for m in &matrices[1..] {
        if m.video_id != first.video_id {
            return Err(Error::VideoIdMismatch {
                expected: first.video_id.clone(),
                found: m.video_id.clone(),
            });
        }
        if m.n_clips() != first.n_clips() {
            return Err(Error::LengthMismatch { expected: first.n_clips(), found: m.n_clips() });
        }
    }
    let dim: usize = matrices.iter().map(|m| m.dim).sum();
    let mut data = Vec::with_capacity(dim * first.n_clips());
    for k in 0..first.n_clips() {
        for m in matrices {
            data.extend_from_slice(m.clip(k));
        }
    }
    Ok(ClipFeatureMatrix { video_id: first.video_id.clone(), dim, data })
}

/// One video as a fixed number of segment feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    video_id: String,
    label: Label,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureBag {
    pub fn new(video_id: impl Into<String>, label: Label, dim: usize, segments: &[Vec<f64>]) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Empty("bag segments"));
        }
        let matrix = ClipFeatureMatrix::from_rows(video_id, dim, segments)?;
        Ok(Self { video_id: matrix.video_id, label, dim, data: matrix.data })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_segments(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn segments(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Averages clip features into `n` segments.
///
/// A segment whose clip range is empty (fewer clips than segments) takes the
/// clip at the start of its range.
pub fn pool_segments(clips: &ClipFeatureMatrix, n: usize, label: Label) -> Result<FeatureBag> {
    if n == 0 {
        return Err(Error::InvalidConfig("segment count must be positive".into()));
    }
    let n_clips = clips.n_clips();
    let dim = clips.dim;
    let mut data = vec![0.0; n * dim];
    for (i, out) in data.chunks_exact_mut(dim).enumerate() {
        let range = proportional_range(i, n_clips, n);
        if range.is_empty() {
            out.copy_from_slice(clips.clip(range.start));
            continue;
        }
        let count = range.len() as f64;
        for k in range {
            for (o, v) in out.iter_mut().zip(clips.clip(k)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= count;
        }
    }
    Ok(FeatureBag { video_id: clips.video_id.clone(), label, dim, data })
}

/// Half-open frame range `[start, end)` of segment `segment_index`.
pub fn segment_frame_range(segment_index: usize, n_frames: usize, n: usize) -> Result<(usize, usize)> {
    if segment_index >= n {
        return Err(Error::IndexOutOfRange { index: segment_index, len: n });
    }
    if n_frames == 0 {
        return Err(Error::Empty("video frames"));
    }
    let r = proportional_range(segment_index, n_frames, n);
    Ok((r.start, r.end))
}

/// A ground-truth anomaly as a 0-based half-open frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameInterval {
    pub start: usize,
    pub end: usize,
}

impl FrameInterval {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub split: Split,
    pub label: Label,
    pub n_frames: usize,
    pub intervals: Vec<FrameInterval>,
    /// Feature files, relative to the manifest. Entries after the first are
    /// test-time augmentation variants of the same video.
    pub feature_paths: Vec<String>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::Empty("video_id"));
        }
        if self.n_frames == 0 {
            return Err(Error::Empty("video frames"));
        }
        if self.feature_paths.is_empty() {
            return Err(Error::Empty("feature_paths"));
        }
        let count = self.intervals.len();
        let count_ok = match (self.label, self.split) {
            (Label::Normal, _) => count == 0,
            (Label::Anomalous, Split::Test) => (1..=MAX_INTERVALS).contains(&count),
            (Label::Anomalous, Split::Train) => count <= MAX_INTERVALS,
        };
        if !count_ok {
            return Err(Error::IntervalCount { video_id: self.video_id.clone(), label: self.label, count });
        }
        let mut prev_end = 0;
        for (k, iv) in self.intervals.iter().enumerate() {
            if iv.start >= iv.end || iv.end > self.n_frames {
                return Err(Error::InvalidInterval {
                    video_id: self.video_id.clone(),
                    start: iv.start,
                    end: iv.end,
                    n_frames: self.n_frames,
                });
            }
            if k > 0 && iv.start < prev_end {
                return Err(Error::OverlappingIntervals { video_id: self.video_id.clone() });
            }
            prev_end = iv.end;
        }
        Ok(())
    }
}

/// Per-frame ground truth: 1 inside an annotated interval, 0 elsewhere.
pub fn frame_labels(record: &VideoRecord) -> Vec<u8> {
    let mut labels = vec![0u8; record.n_frames];
    for iv in &record.intervals {
        let end = iv.end.min(record.n_frames);
        for l in &mut labels[iv.start.min(end)..end] {
            *l = 1;
        }
    }
    labels
}

/// A validated set of videos sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<VideoRecord>,
    dim: usize,
}

impl Manifest {
    pub fn new(records: Vec<VideoRecord>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        if records.is_empty() {
            return Err(Error::Empty("manifest"));
        }
        let mut ids: Vec<&str> = Vec::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            ids.push(&r.video_id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateVideoId(w[0].into()));
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Pair sampling needs at least one training video of each label.
    pub fn check_trainable(&self) -> Result<()> {
        for label in [Label::Anomalous, Label::Normal] {
            if !self.split(Split::Train).any(|r| r.label == label) {
                return Err(Error::MissingLabelClass(label));
            }
        }
        Ok(())
    }
}
