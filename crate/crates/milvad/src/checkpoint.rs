//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MILTHROW1"
//! u64 layer count, then that many u64 layer widths
//! f64 weights (row-major, out x in) then f64 biases, for each layer
//! [optional training section]
//! u32 CRC32 of everything between the magic and the checksum
//! ```
//!
//! The training section starts with the tag `TRNS` and carries the
//! iteration, optimizer state, trainer random-stream position and the loss
//! variant, so a run can resume exactly where it stopped.

use std::fs;
use std::path::{Path, PathBuf};

use milvad_core::objective::RankVariant;
use milvad_core::optim::{Hyperparams, OptimizerKind, OptimizerState};
use milvad_core::scorer::{param_count, ModelParams};
use milvad_core::train::RngSnapshot;

use crate::{Error, Result};

pub const MAGIC: &[u8; 9] = b"MILTHROW1";
const MAGIC_FAMILY: &[u8] = b"MILTHROW";
const TRAINING_TAG: &[u8; 4] = b"TRNS";
const MAX_LAYERS: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCheckpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub rng: RngSnapshot,
    /// Completed optimizer steps.
    pub iteration: u64,
    pub variant: RankVariant,
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn model_payload(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * params.values().len());
    put_u64(&mut buf, params.layer_dims().len() as u64);
    for &d in params.layer_dims() {
        put_u64(&mut buf, d as u64);
    }
    put_f64s(&mut buf, params.values());
    buf
}

fn finish(payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    finish(model_payload(params))
}

pub fn encode_training(ck: &TrainingCheckpoint) -> Vec<u8> {
    let mut buf = model_payload(&ck.params);
    buf.extend_from_slice(TRAINING_TAG);
    put_u64(&mut buf, ck.iteration);
    buf.push(match ck.optimizer.kind() {
        OptimizerKind::Adam => 0,
        OptimizerKind::Adadelta => 1,
    });
    let h = ck.optimizer.hyperparams();
    put_f64s(&mut buf, &[h.learning_rate, h.beta1, h.beta2, h.rho, h.epsilon]);
    put_u64(&mut buf, ck.optimizer.step_count());
    put_f64s(&mut buf, ck.optimizer.first());
    put_f64s(&mut buf, ck.optimizer.second());
    buf.extend_from_slice(&ck.rng.seed);
    put_u64(&mut buf, ck.rng.stream);
    buf.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    buf.push(match ck.variant {
        RankVariant::Original => 0,
        RankVariant::MeanNormal => 1,
    });
    finish(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("truncated file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.corrupt("implausible length"))?;
        let raw = self.take(len)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<(ModelParams, Option<TrainingCheckpoint>)> {
    let corrupt = |message: &str| Error::Checkpoint { path: path.to_path_buf(), message: message.into() };
    if bytes.len() < MAGIC.len() {
        return Err(corrupt(if MAGIC.starts_with(bytes) { "truncated file" } else { "not a checkpoint file" }));
    }
    if !bytes.starts_with(MAGIC_FAMILY) {
        return Err(corrupt("not a checkpoint file"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[MAGIC_FAMILY.len()..MAGIC.len()]).into_owned(),
        });
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(corrupt("truncated file"));
    }
    let (payload, crc) = bytes[MAGIC.len()..].split_at(bytes.len() - MAGIC.len() - 4);
    if u32::from_le_bytes(crc.try_into().unwrap()) != crc32fast::hash(payload) {
        return Err(corrupt("checksum mismatch (truncated or corrupted file)"));
    }
    let mut r = Reader { bytes: payload, pos: 0, path };
    let n_dims = r.u64()?;
    if !(2..=MAX_LAYERS).contains(&n_dims) {
        return Err(corrupt("invalid layer count"));
    }
    let dims = (0..n_dims)
        .map(|_| r.u64().and_then(|d| usize::try_from(d).map_err(|_| corrupt("invalid layer width"))))
        .collect::<Result<Vec<usize>>>()?;
    let count = dims
        .windows(2)
        .try_fold(0usize, |acc, w| w[0].checked_mul(w[1]).and_then(|m| m.checked_add(w[1])).and_then(|m| acc.checked_add(m)))
        .ok_or_else(|| corrupt("invalid layer widths"))?;
    if count.checked_mul(8).is_none_or(|b| b > r.remaining()) {
        return Err(corrupt("truncated file"));
    }
    debug_assert_eq!(count, param_count(&dims));
    let values = r.f64s(count)?;
    let params = ModelParams::from_values(&dims, values).map_err(|e| corrupt(&e.to_string()))?;
    if r.remaining() == 0 {
        return Ok((params, None));
    }
    if r.take(4)? != TRAINING_TAG {
        return Err(corrupt("unknown trailing section"));
    }
    let iteration = r.u64()?;
    let kind = match r.u8()? {
        0 => OptimizerKind::Adam,
        1 => OptimizerKind::Adadelta,
        _ => return Err(corrupt("unknown optimizer kind")),
    };
    let h = r.f64s(5)?;
    let hyper = Hyperparams { learning_rate: h[0], beta1: h[1], beta2: h[2], rho: h[3], epsilon: h[4] };
    let step_count = r.u64()?;
    let first = r.f64s(count)?;
    let second = r.f64s(count)?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let variant = match r.u8()? {
        0 => RankVariant::Original,
        1 => RankVariant::MeanNormal,
        _ => return Err(corrupt("unknown loss variant")),
    };
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes"));
    }
    let optimizer =
        OptimizerState::from_parts(kind, hyper, step_count, first, second).map_err(|e| corrupt(&e.to_string()))?;
    let ck = TrainingCheckpoint {
        params: params.clone(),
        optimizer,
        rng: RngSnapshot { seed, stream, word_pos },
        iteration,
        variant,
    };
    Ok((params, Some(ck)))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(params))
}

pub fn save_training_checkpoint(ck: &TrainingCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_training(ck))
}

/// Loads the model from either kind of checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path).map(|(p, _)| p)
}

pub fn load_training_checkpoint(path: impl AsRef<Path>) -> Result<TrainingCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)?.1.ok_or_else(|| Error::Checkpoint {
        path: path.to_path_buf(),
        message: "no training state; cannot resume from a model-only checkpoint".into(),
    })
}
