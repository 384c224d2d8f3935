//! Manifest and feature-file formats.
//!
//! Manifest CSV columns: `video_id,split,label,n_frames,intervals,feature_paths`.
//! `intervals` holds `;`-separated `start-end` frame pairs (0-based,
//! half-open) and `feature_paths` holds `;`-separated paths relative to the
//! manifest file.
//!
//! A feature file starts with a `video_id,dim,n_clips` line followed by one
//! line of `dim` comma-separated numbers per clip.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use milvad_core::corpus::{
    pool_segments, ClipFeatureMatrix, FeatureBag, FrameInterval, Label, Manifest, Split, VideoRecord,
};

use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["video_id", "split", "label", "n_frames", "intervals", "feature_paths"];

/// A manifest together with the directory its feature paths are relative to.
#[derive(Debug, Clone)]
pub struct Corpus {
    manifest: Manifest,
    root: PathBuf,
}

impl Corpus {
    pub fn new(manifest: Manifest, root: impl Into<PathBuf>) -> Self {
        Self { manifest, root: root.into() }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim()
    }

    pub fn feature_path(&self, record: &VideoRecord, variant: usize) -> PathBuf {
        self.root.join(&record.feature_paths[variant])
    }

    /// Loads one feature variant of a video and checks it belongs to it.
    pub fn load_variant(&self, record: &VideoRecord, variant: usize) -> Result<ClipFeatureMatrix> {
        let path = self.feature_path(record, variant);
        let m = load_clip_features(&path, self.dim())?;
        if m.video_id() != record.video_id {
            return Err(Error::InvalidFile {
                path,
                message: format!("feature file is for video {:?}, manifest expects {:?}", m.video_id(), record.video_id),
            });
        }
        Ok(m)
    }

    pub fn load_bag(&self, record: &VideoRecord, variant: usize, n_segments: usize) -> Result<FeatureBag> {
        let clips = self.load_variant(record, variant)?;
        Ok(pool_segments(&clips, n_segments, record.label)?)
    }
}

fn parse_intervals(field: &str) -> std::result::Result<Vec<FrameInterval>, String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (s, e) = pair.split_once('-').ok_or_else(|| format!("interval {pair:?} is not start-end"))?;
            let start = s.trim().parse().map_err(|_| format!("bad interval start {s:?}"))?;
            let end = e.trim().parse().map_err(|_| format!("bad interval end {e:?}"))?;
            Ok(FrameInterval::new(start, end))
        })
        .collect()
}

fn parse_record(row: &csv::StringRecord) -> std::result::Result<VideoRecord, String> {
    if row.len() != MANIFEST_HEADER.len() {
        return Err(format!("expected {} fields, found {}", MANIFEST_HEADER.len(), row.len()));
    }
    let split = Split::parse(row[1].trim()).ok_or_else(|| format!("unknown split {:?}", &row[1]))?;
    let label = Label::parse(row[2].trim()).ok_or_else(|| format!("unknown label {:?}", &row[2]))?;
    let n_frames = row[3].trim().parse().map_err(|_| format!("bad n_frames {:?}", &row[3]))?;
    let intervals = parse_intervals(&row[4])?;
    let feature_paths = row[5].split(';').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect();
    Ok(VideoRecord { video_id: row[0].trim().to_string(), split, label, n_frames, intervals, feature_paths })
}

/// Reads and validates a manifest, checking that every feature file exists
/// and that all of them declare the same dimension.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(parse_err(1, format!("header must be {}", MANIFEST_HEADER.join(","))));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    let mut dim: Option<(usize, PathBuf)> = None;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let record = parse_record(&row).map_err(|m| parse_err(line, m))?;
        record.validate().map_err(|e| parse_err(line, e.to_string()))?;
        for rel in &record.feature_paths {
            let feature = root.join(rel);
            if !feature.is_file() {
                return Err(Error::MissingFeatureFile(feature));
            }
            let header = read_feature_header(&feature)?;
            match &dim {
                None => dim = Some((header.dim, feature)),
                Some((d, first)) if *d != header.dim => {
                    return Err(Error::InvalidFile {
                        path: feature,
                        message: format!("dimension {} differs from {} declared by {}", header.dim, d, first.display()),
                    })
                }
                Some(_) => {}
            }
        }
        records.push(record);
    }
    let dim = dim.map(|(d, _)| d).ok_or_else(|| parse_err(1, "manifest has no records".into()))?;
    Ok(Corpus::new(Manifest::new(records, dim)?, root))
}

fn format_intervals(intervals: &[FrameInterval]) -> String {
    intervals.iter().map(|i| format!("{}-{}", i.start, i.end)).collect::<Vec<_>>().join(";")
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[VideoRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for r in records {
        w.write_record([
            r.video_id.as_str(),
            r.split.as_str(),
            r.label.as_str(),
            &r.n_frames.to_string(),
            &format_intervals(&r.intervals),
            &r.feature_paths.join(";"),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureHeader {
    pub video_id: String,
    pub dim: usize,
    pub n_clips: usize,
}

fn parse_header(path: &Path, line: &str) -> Result<FeatureHeader> {
    let bad = |message: String| Error::Parse { path: path.to_path_buf(), line: 1, message };
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 3 {
        return Err(bad("first line must be video_id,dim,n_clips".into()));
    }
    let dim: usize = fields[1].trim().parse().map_err(|_| bad(format!("bad dim {:?}", fields[1])))?;
    let n_clips: usize = fields[2].trim().parse().map_err(|_| bad(format!("bad n_clips {:?}", fields[2])))?;
    if dim == 0 || n_clips == 0 {
        return Err(bad("dim and n_clips must be positive".into()));
    }
    Ok(FeatureHeader { video_id: fields[0].trim().to_string(), dim, n_clips })
}

/// Reads only the first line of a feature file.
pub fn read_feature_header(path: impl AsRef<Path>) -> Result<FeatureHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim().is_empty() {
        return Err(Error::InvalidFile { path: path.to_path_buf(), message: "empty feature file".into() });
    }
    parse_header(path, &line)
}

pub fn load_clip_features(path: impl AsRef<Path>, expected_dim: usize) -> Result<ClipFeatureMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::InvalidFile { path: path.to_path_buf(), message: "empty feature file".into() }),
    };
    let header = parse_header(path, &first)?;
    if header.dim != expected_dim {
        return Err(Error::Core(milvad_core::Error::DimensionMismatch { expected: expected_dim, found: header.dim }));
    }
    let mut data = Vec::with_capacity(header.dim * header.n_clips);
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k as u64 + 2;
        let bad = |message: String| Error::Parse { path: path.to_path_buf(), line: lineno, message };
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| bad(format!("bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(bad("non-finite feature value".into()));
            }
            data.push(v);
        }
        if data.len() - before != header.dim {
            return Err(bad(format!("expected {} values, found {}", header.dim, data.len() - before)));
        }
        rows += 1;
    }
    if rows != header.n_clips {
        return Err(Error::InvalidFile {
            path: path.to_path_buf(),
            message: format!("header declares {} clips, file has {rows}", header.n_clips),
        });
    }
    Ok(ClipFeatureMatrix::new(header.video_id, header.dim, data)?)
}

/// Writes values in shortest round-trip form, so reloading is exact.
pub fn write_clip_features(path: impl AsRef<Path>, matrix: &ClipFeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{},{},{}", matrix.video_id(), matrix.dim(), matrix.n_clips()).map_err(io)?;
    let mut line = String::new();
    for clip in matrix.clips() {
        line.clear();
        for (i, v) in clip.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
