//! Binary model file: an 8-byte magic, a header, then little-endian f64
//! arrays for the standardizer and each layer's weights and biases.
//!
//! ```text
//! magic "MCMLP\0\0\x01"
//! u8 input_mode | u64 seed | u32 len + corpus hash bytes
//! u32 n_dims | u32 dims[n_dims]
//! f64 mean[d] | f64 scale[d]
//! per layer: f64 w[out * in] | f64 b[out]
//! ```

use std::fs;
use std::path::Path;

use super::mlp::{Layer, Network};
use super::{InputMode, MlpModel, N_OUTPUTS, Standardizer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCMLP\0\0\x01";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat(format!("unexpected end of file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("array too large".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.input_mode.code());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.corpus_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.corpus_hash.as_bytes());
        let dims = self.net.dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        put_f64s(&mut out, &self.standardizer.mean);
        put_f64s(&mut out, &self.standardizer.scale);
        for l in &self.net.layers {
            put_f64s(&mut out, &l.w);
            put_f64s(&mut out, &l.b);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("not a model file (bad magic)".into()));
        }
        let input_mode = InputMode::from_code(r.u8()?)
            .ok_or_else(|| Error::ModelFormat("unknown input mode".into()))?;
        let seed = r.u64()?;
        let hash_len = r.u32()? as usize;
        let corpus_hash = String::from_utf8(r.take(hash_len)?.to_vec())
            .map_err(|_| Error::ModelFormat("corpus hash is not UTF-8".into()))?;
        let n_dims = r.u32()? as usize;
        if !(2..=16).contains(&n_dims) {
            return Err(Error::ModelFormat(format!("implausible layer count {n_dims}")));
        }
        let dims: Vec<usize> = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        if dims[0] != input_mode.dim() || dims[n_dims - 1] != N_OUTPUTS || dims.contains(&0) {
            return Err(Error::ModelFormat(format!("dims {dims:?} do not match input mode {input_mode}")));
        }
        let d = dims[0];
        let standardizer = Standardizer {
            mean: r.f64s(d)?,
            scale: r.f64s(d)?,
        };
        let layers = dims
            .windows(2)
            .map(|w| {
                Ok(Layer {
                    n_in: w[0],
                    n_out: w[1],
                    w: r.f64s(w[0] * w[1])?,
                    b: r.f64s(w[1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if r.pos != buf.len() {
            return Err(Error::ModelFormat(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            input_mode,
            standardizer,
            seed,
            corpus_hash,
            net: Network { layers },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
