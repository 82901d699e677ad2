//! Binary model files.
//!
//! All integers are little-endian. Layout:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `DRSN`                            |
//! | 4      | 1    | format version (1)                      |
//! | 5      | 1    | flags, bit 0 = int8 weights             |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 4    | input length D                          |
//! | 12     | 4    | activation count K                      |
//! | 16     | 4    | place count P                           |
//! | 20     | 4    | model count n                           |
//! | 24     | 4    | voting radius r                         |
//! | 28     | 8    | master seed                             |
//! | 36     | ...  | n model records                         |
//!
//! Model record: seed (u64), K column bitsets of `ceil(D/8)` bytes each
//! (row `i` at byte `i/8`, bit `i%8`), then either `scale: f32` followed by
//! `K*P` int8 weights, or `K*P` float32 weights. Weights are row-major, one
//! row per activation.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::drosonet::{DrosoNet, ProjectionMatrix, QuantizedWeights, WeightMatrix, Weights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::voting::Ensemble;

pub const MAGIC: [u8; 4] = *b"DRSN";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 36;
const FLAG_QUANTIZED: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated: {needed} more bytes required")]
    Truncated { needed: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("model file parse error at offset {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Exact size of a model file.
pub fn file_size(models: usize, input_len: usize, activations: usize, places: usize, quantized: bool) -> usize {
    let bitsets = input_len.div_ceil(8) * activations;
    let payload = if quantized {
        4 + activations * places
    } else {
        4 * activations * places
    };
    HEADER_LEN + models * (8 + bitsets + payload)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit the file format")))
}

pub fn to_bytes<T: Scalar>(ensemble: &Ensemble<T>) -> Result<Vec<u8>> {
    let models = ensemble.models();
    let first = &models[0];
    let quantized = first.is_quantized();
    if models.iter().any(|m| m.is_quantized() != quantized) {
        return Err(Error::invalid("ensemble mixes quantized and float members"));
    }
    let (d, k, p) = (first.input_len(), first.activations(), first.places());
    if models.iter().any(|m| m.activations() != k) {
        return Err(Error::invalid("ensemble members differ in activation count"));
    }

    let mut out = Vec::with_capacity(file_size(models.len(), d, k, p, quantized));
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.push(if quantized { FLAG_QUANTIZED } else { 0 });
    out.extend_from_slice(&[0, 0]);
    for (v, what) in [
        (d, "input length"),
        (k, "activation count"),
        (p, "place count"),
        (models.len(), "model count"),
        (ensemble.radius(), "radius"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&ensemble.master_seed().to_le_bytes());

    for m in models {
        out.extend_from_slice(&m.seed().to_le_bytes());
        out.extend_from_slice(&m.projection().to_bitsets());
        match m.weights() {
            Weights::Quantized(q) => {
                out.extend_from_slice(&q.scale().to_single().to_le_bytes());
                out.extend(q.values().iter().map(|&v| v as u8));
            }
            Weights::Float(w) => {
                for &v in w.as_slice() {
                    out.extend_from_slice(&v.to_single().to_le_bytes());
                }
            }
        }
    }
    debug_assert_eq!(out.len(), file_size(models.len(), d, k, p, quantized));
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ParseError {
                offset: self.bytes.len(),
                kind: ParseErrorKind::Truncated {
                    needed: self.pos.saturating_add(n) - self.bytes.len(),
                },
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, ParseError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ParseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ParseError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn invalid(&self, offset: usize, msg: impl std::fmt::Display) -> ParseError {
        ParseError {
            offset,
            kind: ParseErrorKind::Invalid(msg.to_string()),
        }
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Ensemble<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ParseError { offset: 0, kind: ParseErrorKind::BadMagic }.into());
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(ParseError {
            offset: 4,
            kind: ParseErrorKind::UnsupportedVersion(version),
        }
        .into());
    }
    let flags = r.u8()?;
    if flags & !FLAG_QUANTIZED != 0 {
        return Err(r.invalid(5, format!("unknown flags {flags:#04x}")).into());
    }
    let quantized = flags & FLAG_QUANTIZED != 0;
    r.take(2)?;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let p = r.u32()? as usize;
    let n = r.u32()? as usize;
    let radius = r.u32()? as usize;
    let master_seed = r.u64()?;
    if d == 0 || k == 0 || p < 2 || n == 0 {
        return Err(r.invalid(8, format!("invalid shape D={d} K={k} P={p} n={n}")).into());
    }
    // Reject impossible sizes before allocating anything.
    let expected = file_size(n, d, k, p, quantized);
    if bytes.len() < expected {
        return Err(ParseError {
            offset: bytes.len(),
            kind: ParseErrorKind::Truncated { needed: expected - bytes.len() },
        }
        .into());
    }

    let mut models = Vec::with_capacity(n);
    for i in 0..n {
        let record = r.pos;
        let seed = r.u64()?;
        let bits_at = r.pos;
        let projection = ProjectionMatrix::from_bitsets(d, k, r.take(d.div_ceil(8) * k)?)
            .map_err(|e| r.invalid(bits_at, format!("model {i}: {e}")))?;
        let weights_at = r.pos;
        let weights = if quantized {
            let scale = r.f32()?;
            let q = r.take(k * p)?.iter().map(|&b| b as i8).collect();
            QuantizedWeights::from_raw(k, p, T::from_single(scale), q).map(Weights::Quantized)
        } else {
            let raw = r.take(4 * k * p)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::from_single(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            WeightMatrix::new(k, p, data).map(Weights::Float)
        }
        .map_err(|e| r.invalid(weights_at, format!("model {i}: {e}")))?;
        let model = DrosoNet::from_parts(seed, projection, weights)
            .map_err(|e| r.invalid(record, format!("model {i}: {e}")))?;
        models.push(model);
    }
    if r.pos != bytes.len() {
        return Err(ParseError {
            offset: r.pos,
            kind: ParseErrorKind::TrailingBytes(bytes.len() - r.pos),
        }
        .into());
    }
    Ensemble::new(models, radius, master_seed)
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes the ensemble through a temporary file and a rename. Returns the file size.
pub fn save<T: Scalar>(ensemble: &Ensemble<T>, path: &Path) -> Result<u64> {
    let bytes = to_bytes(ensemble)?;
    let tmp = temp_path(path);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(bytes.len() as u64)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Ensemble<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
