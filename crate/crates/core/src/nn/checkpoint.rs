//! `FDCKPT01` checkpoint container, little-endian throughout:
//!
//! ```text
//! magic    b"FDCKPT01"
//! config   u32 byte length + UTF-8 model config text
//! n_params u32
//! params   n_params × { u32 name length, UTF-8 name, u32 ndim, ndim × u64 dim,
//!                       u8 requires_grad, prod(dims) × f32 }
//! adam     u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps, u8 has_moments,
//!          if has_moments: for each param, prod(dims) × f32 first moment then
//!          prod(dims) × f32 second moment
//! epoch    u64
//! val_lsd  f64
//! ```
//!
//! No bytes may follow `val_lsd`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::adam::Adam;
use super::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"FDCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not an FDCKPT01 file")]
    BadMagic,
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Serialized model config the parameters belong to.
    pub config: String,
    pub params: ParamStore<f32>,
    pub adam: Adam,
    pub epoch: u64,
    pub val_lsd: f64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, ckpt.config.len());
    out.extend_from_slice(ckpt.config.as_bytes());
    put_u32(&mut out, ckpt.params.len());
    for (name, t) in ckpt.params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.push(u8::from(t.requires_grad));
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let a = &ckpt.adam;
    out.extend_from_slice(&a.step_count().to_le_bytes());
    for v in [a.lr, a.beta1, a.beta2, a.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match a.moments() {
        Some((m, v)) => {
            out.push(1);
            for (mi, vi) in m.iter().zip(v) {
                for x in mi.iter().chain(vi) {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        None => out.push(0),
    }
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    out.extend_from_slice(&ckpt.val_lsd.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Utf8(what))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(self.buf.len()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { buf, pos: MAGIC.len() };
    let config = r.str("config")?;
    let n = r.u32()?;
    let mut params = ParamStore::new();
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str("parameter name")?;
        if params.find(&name).is_some() {
            return Err(CheckpointError::Invalid(format!("duplicate parameter {name}")));
        }
        let ndim = r.u32()?;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let requires_grad = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(CheckpointError::Invalid(format!("bad requires_grad byte {b}"))),
        };
        let numel = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| CheckpointError::Invalid(format!("shape {shape:?} overflows")))?;
        let mut t = Tensor::from_vec(&shape, r.f32s(numel)?);
        t.requires_grad = requires_grad;
        params.add(name, t);
        sizes.push(numel);
    }
    let step = r.u64()?;
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let moments = match r.u8()? {
        0 => None,
        1 => {
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for numel in &sizes {
                m.push(r.f32s(*numel)?);
                v.push(r.f32s(*numel)?);
            }
            Some((m, v))
        }
        b => return Err(CheckpointError::Invalid(format!("bad moment flag {b}"))),
    };
    let epoch = r.u64()?;
    let val_lsd = r.f64()?;
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }
    let adam = Adam::restore(lr, beta1, beta2, eps, step, moments);
    Ok(Checkpoint { config, params, adam, epoch, val_lsd })
}

pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ckpt)).map_err(|source| CheckpointError::Io { path: path.into(), source })
}

pub fn read(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    decode(&buf)
}
