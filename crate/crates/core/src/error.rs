use alloc::string::String;
use core::fmt;

use crate::corpus::Label;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix width did not match the configured feature dimension.
    DimensionMismatch { expected: usize, found: usize },
    /// Two sequences that must be aligned have different lengths.
    LengthMismatch { expected: usize, found: usize },
    /// A sequence that must be non-empty was empty.
    Empty(&'static str),
    NonFinite(&'static str),
    IndexOutOfRange { index: usize, len: usize },
    InvalidInterval { video_id: String, start: usize, end: usize, n_frames: usize },
    OverlappingIntervals { video_id: String },
    IntervalCount { video_id: String, label: Label, count: usize },
    DuplicateVideoId(String),
    VideoIdMismatch { expected: String, found: String },
    MissingLabelClass(Label),
    /// Metrics that need both classes were given only one.
    SingleClass,
    InvalidHyperparameter { name: &'static str, value: f64 },
    InvalidConfig(String),
    NonFiniteLoss { iteration: u64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::InvalidInterval { video_id, start, end, n_frames } => {
                if start >= end {
                    write!(f, "{video_id}: interval start ≥ end ({start}-{end})")
                } else {
                    write!(f, "{video_id}: interval {start}-{end} exceeds {n_frames} frames")
                }
            }
            Error::OverlappingIntervals { video_id } => {
                write!(f, "{video_id}: intervals must be sorted and non-overlapping")
            }
            Error::IntervalCount { video_id, label, count } => {
                write!(f, "{video_id}: {count} intervals not allowed for a {label} video")
            }
            Error::DuplicateVideoId(id) => write!(f, "duplicate video_id {id}"),
            Error::VideoIdMismatch { expected, found } => {
                write!(f, "video_id mismatch: expected {expected}, found {found}")
            }
            Error::MissingLabelClass(label) => {
                write!(f, "training split has no {label} videos")
            }
            Error::SingleClass => write!(f, "both positive and negative labels are required"),
            Error::InvalidHyperparameter { name, value } => {
                write!(f, "invalid hyperparameter {name} = {value}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFiniteLoss { iteration } => {
                write!(f, "non-finite loss at iteration {iteration}; training diverged")
            }
        }
    }
}

impl core::error::Error for Error {}
