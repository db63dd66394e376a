//! Versioned binary checkpoints for networks and flat parameter vectors.
//!
//! Layout (all integers little-endian):
//! magic `BFSSLCK\0`, `u32` version, `u8` kind, kind-specific header,
//! `u64` value count, the `f64` values, then a SHA-256 digest of everything
//! before it.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::aggregate::ModelParams;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

const MAGIC: &[u8; 8] = b"BFSSLCK\0";
pub const VERSION: u32 = 1;
const KIND_MLP: u8 = 0;
const KIND_PARAMS: u8 = 1;

fn header(kind: u8) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    buf
}

fn push_values(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn encode_mlp(net: &Mlp) -> Vec<u8> {
    let mut buf = header(KIND_MLP);
    buf.extend_from_slice(&(net.dims().len() as u32).to_le_bytes());
    for &d in net.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend(net.activations().iter().map(|a| a.tag()));
    push_values(&mut buf, &net.params);
    seal(buf)
}

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let mut buf = header(KIND_PARAMS);
    push_values(&mut buf, &params.values);
    seal(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
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

    fn values(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("value count overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Check magic, version, digest and kind; return a cursor over the body.
fn open(bytes: &[u8], kind: u8) -> Result<Cursor<'_>> {
    if bytes.len() < MAGIC.len() + 5 + 32 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut cur = Cursor { bytes: body, at: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let found = cur.u8()?;
    if found != kind {
        return Err(Error::Checkpoint(format!("expected kind {kind}, found {found}")));
    }
    Ok(cur)
}

fn finish(cur: &Cursor<'_>) -> Result<()> {
    if cur.at != cur.bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(())
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp> {
    let mut cur = open(bytes, KIND_MLP)?;
    let n = cur.u32()? as usize;
    if n < 2 {
        return Err(Error::Checkpoint("network needs at least two layer sizes".into()));
    }
    let dims = (0..n).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let acts = (0..n - 1)
        .map(|_| {
            let t = cur.u8()?;
            Activation::from_tag(t).ok_or_else(|| Error::Checkpoint(format!("unknown activation tag {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = cur.values()?;
    finish(&cur)?;
    let mut net = Mlp::zeros(&dims, &acts)?;
    if values.len() != net.num_params() {
        return Err(Error::DimensionMismatch { expected: net.num_params(), got: values.len() });
    }
    net.params = values;
    Ok(net)
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut cur = open(bytes, KIND_PARAMS)?;
    let values = cur.values()?;
    finish(&cur)?;
    Ok(ModelParams::new(values))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    write_file(path, &encode_mlp(net))
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    decode_mlp(&read_file(path)?)
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    write_file(path, &encode_params(params))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    decode_params(&read_file(path)?)
}
