//! Corpus IO, training, evaluation and command-line plumbing built on
//! `milvad-core`.

pub mod checkpoint;
pub mod cli;
pub mod corpus_io;
mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod reference;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
