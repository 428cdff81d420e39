//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic         8 bytes  "CLSPCKPT"
//! version       u32
//! flags         u32      bit 0: optimizer state follows the parameters
//! d_in_speech   u64
//! d_in_text     u64
//! hidden        u64
//! d             u64
//! parameters    f64 x P  speech w1,b1,w2,b2 | text w1,b1,w2,b2 | log_tau
//! [optimizer]   u64 adam_step, u64 train_step, f64 x P first moments,
//!               f64 x P second moments
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClspModel, ModelError, ProjectionHead, Result};
use crate::curriculum::{AdamState, TrainState};
use crate::linalg::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CLSPCKPT";
const FLAG_OPTIMIZER: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_in_speech: usize,
    pub d_in_text: usize,
    pub hidden: usize,
    pub d: usize,
}

impl ClspModel {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_in_speech: self.speech_head.d_in(),
            d_in_text: self.text_head.d_in(),
            hidden: self.speech_head.hidden(),
            d: self.speech_head.d_out(),
        }
    }
}

fn encode(model: &ClspModel, opt: Option<(&AdamState, usize)>) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::with_capacity(48 + 8 * model.param_count() * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let flags = if opt.is_some() { FLAG_OPTIMIZER } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in [dims.d_in_speech, dims.d_in_text, dims.hidden, dims.d] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for seg in model.segments() {
        for v in seg {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some((adam, step)) = opt {
        out.extend_from_slice(&adam.step.to_le_bytes());
        out.extend_from_slice(&(step as u64).to_le_bytes());
        for v in adam.m.iter().chain(&adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            ModelError::Malformed(format!("need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            ModelError::Malformed("parameter count overflow".to_string())
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&d| d > 0 && d < (1 << 24))
            .ok_or_else(|| ModelError::Malformed(format!("implausible dimension {v}")))
    }
}

fn read_head(r: &mut Reader<'_>, d_in: usize, hidden: usize, d: usize) -> Result<ProjectionHead> {
    Ok(ProjectionHead {
        w1: Matrix::from_vec(d_in, hidden, r.f64s(d_in * hidden)?),
        b1: r.f64s(hidden)?,
        w2: Matrix::from_vec(hidden, d, r.f64s(hidden * d)?),
        b2: r.f64s(d)?,
    })
}

fn decode(bytes: &[u8], expect: Option<&ModelDims>) -> Result<(ClspModel, Option<(AdamState, usize)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).map_err(|_| ModelError::BadMagic)? != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let flags = r.u32()?;
    let dims = ModelDims {
        d_in_speech: r.dim()?,
        d_in_text: r.dim()?,
        hidden: r.dim()?,
        d: r.dim()?,
    };
    if let Some(e) = expect {
        let checks = [
            ("d_in_speech", e.d_in_speech, dims.d_in_speech),
            ("d_in_text", e.d_in_text, dims.d_in_text),
            ("hidden", e.hidden, dims.hidden),
            ("d", e.d, dims.d),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(ModelError::DimMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
    }
    let speech_head = read_head(&mut r, dims.d_in_speech, dims.hidden, dims.d)?;
    let text_head = read_head(&mut r, dims.d_in_text, dims.hidden, dims.d)?;
    let log_tau = r.f64s(1)?[0];
    let model = ClspModel {
        speech_head,
        text_head,
        log_tau,
    };
    if !model.is_finite() {
        return Err(ModelError::NonFinite("checkpoint parameters"));
    }
    let opt = if flags & FLAG_OPTIMIZER != 0 {
        let step = r.u64()?;
        let train_step = r.u64()? as usize;
        let p = model.param_count();
        let m = r.f64s(p)?;
        let v = r.f64s(p)?;
        Some((AdamState { step, m, v }, train_step))
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(ModelError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((model, opt))
}

fn write(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(model: &ClspModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), encode(model, None))
}

/// Loads model parameters. When `expect` is given, every dimension must
/// match it. Optimizer state, if present, is ignored.
pub fn load_checkpoint(path: impl AsRef<Path>, expect: Option<&ModelDims>) -> Result<ClspModel> {
    Ok(decode(&read(path.as_ref())?, expect)?.0)
}

/// Saves parameters together with optimizer moments and the step counter.
pub fn save_train_state(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    write(
        path.as_ref(),
        encode(&state.model, Some((&state.optimizer, state.step))),
    )
}

pub fn load_train_state(path: impl AsRef<Path>, expect: Option<&ModelDims>) -> Result<TrainState> {
    let (model, opt) = decode(&read(path.as_ref())?, expect)?;
    let (optimizer, step) = match opt {
        Some(o) => o,
        None => (AdamState::new(model.param_count()), 0),
    };
    Ok(TrainState {
        model,
        optimizer,
        step,
    })
}
