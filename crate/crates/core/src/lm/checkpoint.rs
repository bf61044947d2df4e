//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        7 bytes   "COLDLM1"
//! direction    u8        0 = forward, 1 = reverse
//! vocab_size   u32
//! hidden       u32
//! vocabulary   vocab_size × (u32 byte length, UTF-8 bytes)
//! vocab_hash   32 bytes  SHA-256 of the newline-joined token list
//! corpus_hash  32 bytes
//! seed         u64
//! epochs       u32
//! parameters   f64 × (V·d + d·d + d·d + d + d·V + V), in the order
//!              embedding, w_in, w_rec, b_hidden, w_out, b_out
//! ```

use std::path::Path;

use super::{Direction, LanguageModel, LmParams, TrainingMeta};
use crate::error::{Error, Result};
use crate::numerics::{Array, Real};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 7] = b"COLDLM1";

pub fn to_bytes(lm: &LanguageModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match lm.direction() {
        Direction::Forward => 0,
        Direction::Reverse => 1,
    });
    out.extend_from_slice(&(lm.vocab_size() as u32).to_le_bytes());
    out.extend_from_slice(&(lm.hidden() as u32).to_le_bytes());
    for t in lm.vocab().tokens() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    out.extend_from_slice(&lm.vocab().hash());
    out.extend_from_slice(&lm.meta.corpus_hash);
    out.extend_from_slice(&lm.meta.seed.to_le_bytes());
    out.extend_from_slice(&lm.meta.epochs.to_le_bytes());
    for a in lm.params().arrays() {
        for &v in a.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated checkpoint: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<[u8; 32]> {
        Ok(self.take(32)?.try_into().unwrap())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<LanguageModel> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| Error::Format("missing magic bytes".into()))?;
    if magic != MAGIC {
        if magic[..6] == MAGIC[..6] {
            return Err(Error::VersionMismatch {
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        return Err(Error::Format("bad magic bytes".into()));
    }
    let direction = match r.u8()? {
        0 => Direction::Forward,
        1 => Direction::Reverse,
        other => return Err(Error::Format(format!("unknown direction byte {other}"))),
    };
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    if v == 0 || d == 0 || v > 1 << 20 || d > 1 << 16 {
        return Err(Error::Format(format!("implausible sizes V={v} d={d}")));
    }
    let mut tokens = Vec::with_capacity(v);
    for _ in 0..v {
        let len = r.u32()? as usize;
        let bytes = r.take(len)?;
        let s = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("vocabulary entry: {e}")))?;
        tokens.push(s.to_string());
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    if r.hash()? != vocab.hash() {
        return Err(Error::VocabularyMismatch);
    }
    let meta = TrainingMeta {
        corpus_hash: r.hash()?,
        seed: r.u64()?,
        epochs: r.u32()?,
    };
    let mut params = LmParams::zeros(v, d);
    for a in params.arrays_mut() {
        let [rows, cols] = a.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()? as Real);
        }
        *a = Array::new(rows, cols, data)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    LanguageModel::new(vocab, direction, params, meta)
}

pub fn save_checkpoint(lm: &LanguageModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(lm)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LanguageModel> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

/// Loads a checkpoint and rejects it unless it was trained in `direction`.
pub fn load_checkpoint_expecting(path: &Path, direction: Direction) -> Result<LanguageModel> {
    let lm = load_checkpoint(path)?;
    lm.expect_direction(direction)?;
    Ok(lm)
}
