//! Allocation-only core of a multiple-instance video anomaly detector.
//!
//! A video is a *bag* of temporal segments (instances). Each segment is the
//! mean of the upstream clip features that fall inside it, and a small
//! fully connected network maps a segment to an anomaly score in `(0, 1)`.
//! Training only sees video-level labels: a hinge ranking loss pushes the
//! highest-scoring segment of an anomalous video above the highest (or the
//! mean) score of a normal video.
//!
//! Everything here is pure computation over in-memory values. File formats,
//! checkpoints and the command line live in the `milvad` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
mod error;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod scorer;
pub mod train;

pub use error::{Error, Result};
