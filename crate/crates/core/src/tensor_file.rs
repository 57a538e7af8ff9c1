//! Flat named-tensor container.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic        8 bytes  "NF4TENS\0"
//! version      u32      = 1
//! entry_count  u32
//! entry * entry_count:
//!   name_len   u32
//!   name       name_len bytes, UTF-8, nonempty, unique within the file
//!   dtype      u8       0 = F32, 1 = Q4
//!   rows       u32
//!   cols       u32
//!   payload_len u64
//!   payload    payload_len bytes
//! ```
//!
//! An F32 payload is `rows * cols` `f32` values, row-major. A Q4 payload is
//! `group_size u32, rows u32, cols u32`, then `rows * cols / group_size`
//! `f32` scales (row-major over (row, group)), then `rows * ceil(cols / 2)`
//! packed code bytes. See `docs/format.md` for the full description.

use std::collections::HashSet;
use std::path::Path;

use crate::error::FormatError;
use crate::io::write_atomic;
use crate::matrix::Matrix;
use crate::quant::{QuantizedTensor, Q4_HEADER_BYTES};

pub const MAGIC: [u8; 8] = *b"NF4TENS\0";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_Q4: u8 = 1;
// name_len + dtype + rows + cols + payload_len, with an empty name
const MIN_ENTRY_BYTES: usize = 4 + 1 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Matrix),
    Q4(QuantizedTensor),
}

impl TensorData {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            TensorData::F32(m) => m.shape(),
            TensorData::Q4(q) => q.shape(),
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "F32",
            TensorData::Q4(_) => "Q4",
        }
    }

    pub fn as_f32(&self) -> Option<&Matrix> {
        match self {
            TensorData::F32(m) => Some(m),
            TensorData::Q4(_) => None,
        }
    }

    pub fn as_q4(&self) -> Option<&QuantizedTensor> {
        match self {
            TensorData::Q4(q) => Some(q),
            TensorData::F32(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub data: TensorData,
}

impl TensorEntry {
    pub fn f32(name: impl Into<String>, m: Matrix) -> Self {
        Self { name: name.into(), data: TensorData::F32(m) }
    }

    pub fn q4(name: impl Into<String>, q: QuantizedTensor) -> Self {
        Self { name: name.into(), data: TensorData::Q4(q) }
    }
}

/// Looks up an entry by name.
pub fn find<'a>(entries: &'a [TensorEntry], name: &str) -> Option<&'a TensorEntry> {
    entries.iter().find(|e| e.name == name)
}

fn dim_u32(name: &str, what: &str, v: usize) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::InvalidPayload {
        name: name.to_string(),
        reason: format!("{what} {v} does not fit in u32"),
    })
}

/// Serializes entries in order. Identical inputs give identical bytes.
pub fn encode_tensor_file(entries: &[TensorEntry]) -> Result<Vec<u8>, FormatError> {
    if entries.is_empty() {
        return Err(FormatError::NoEntries);
    }
    let mut seen = HashSet::new();
    for e in entries {
        if e.name.is_empty() {
            return Err(FormatError::InvalidName);
        }
        if !seen.insert(e.name.as_str()) {
            return Err(FormatError::DuplicateName(e.name.clone()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32("<file>", "entry count", entries.len())?.to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&dim_u32(&e.name, "name length", name.len())?.to_le_bytes());
        out.extend_from_slice(name);
        let (rows, cols) = e.data.shape();
        let (rows, cols) = (dim_u32(&e.name, "rows", rows)?, dim_u32(&e.name, "cols", cols)?);
        let payload = match &e.data {
            TensorData::F32(m) => {
                out.push(DTYPE_F32);
                let mut p = Vec::with_capacity(m.len() * 4);
                for v in m.as_slice() {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                p
            }
            TensorData::Q4(q) => {
                out.push(DTYPE_Q4);
                encode_q4_payload(&e.name, q)?
            }
        };
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    Ok(out)
}

fn encode_q4_payload(name: &str, q: &QuantizedTensor) -> Result<Vec<u8>, FormatError> {
    let mut p = Vec::with_capacity(q.storage_bytes());
    p.extend_from_slice(&dim_u32(name, "group_size", q.group_size())?.to_le_bytes());
    p.extend_from_slice(&dim_u32(name, "rows", q.rows())?.to_le_bytes());
    p.extend_from_slice(&dim_u32(name, "cols", q.cols())?.to_le_bytes());
    for s in q.scales() {
        p.extend_from_slice(&s.to_le_bytes());
    }
    p.extend_from_slice(q.packed_codes());
    Ok(p)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

fn bad(name: &str, reason: impl Into<String>) -> FormatError {
    FormatError::InvalidPayload { name: name.to_string(), reason: reason.into() }
}

/// Parses a container from memory. Rejects anything that is not exactly one
/// well-formed file.
pub fn decode_tensor_file(bytes: &[u8]) -> Result<Vec<TensorEntry>, FormatError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8, "magic").map_err(|_| FormatError::BadMagic)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = cur.u32("entry count")? as usize;
    if count == 0 {
        return Err(FormatError::NoEntries);
    }
    if count > cur.remaining() / MIN_ENTRY_BYTES {
        return Err(FormatError::Truncated("entry table"));
    }
    let mut entries = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?).map_err(|_| FormatError::InvalidName)?;
        if name.is_empty() {
            return Err(FormatError::InvalidName);
        }
        if !seen.insert(name.to_string()) {
            return Err(FormatError::DuplicateName(name.to_string()));
        }
        let dtype = cur.u8("dtype")?;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let payload_len = usize::try_from(cur.u64("payload length")?).map_err(|_| FormatError::Truncated("payload"))?;
        let payload = cur.take(payload_len, "payload")?;
        let data = match dtype {
            DTYPE_F32 => {
                let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(4));
                if expected != Some(payload_len) {
                    return Err(bad(name, format!("F32 payload of {payload_len} bytes for {rows}x{cols}")));
                }
                let m = Matrix::new(rows, cols, f32s(payload)).map_err(|e| bad(name, e.to_string()))?;
                m.ensure_finite().map_err(|source| FormatError::Quant { name: name.to_string(), source })?;
                TensorData::F32(m)
            }
            DTYPE_Q4 => {
                let q = decode_q4_payload_named(name, payload)?;
                if q.shape() != (rows, cols) {
                    return Err(bad(name, format!("Q4 header {:?} disagrees with entry {rows}x{cols}", q.shape())));
                }
                TensorData::Q4(q)
            }
            other => return Err(FormatError::UnknownDtype(other)),
        };
        entries.push(TensorEntry { name: name.to_string(), data });
    }
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining()));
    }
    Ok(entries)
}

/// Parses a standalone Q4 payload (header, scales, packed codes).
pub fn decode_q4_payload(payload: &[u8]) -> Result<QuantizedTensor, FormatError> {
    decode_q4_payload_named("<q4>", payload)
}

fn decode_q4_payload_named(name: &str, payload: &[u8]) -> Result<QuantizedTensor, FormatError> {
    let mut cur = Cursor { buf: payload, pos: 0 };
    let group_size = cur.u32("Q4 group size")? as usize;
    let rows = cur.u32("Q4 rows")? as usize;
    let cols = cur.u32("Q4 cols")? as usize;
    if group_size == 0 || cols % group_size != 0 {
        return Err(FormatError::Quant {
            name: name.to_string(),
            source: crate::QuantError::ShapeMismatch { rows, cols, group_size },
        });
    }
    let n_scales = rows.checked_mul(cols / group_size).ok_or_else(|| bad(name, "scale count overflows"))?;
    let n_codes = rows.checked_mul(cols.div_ceil(2)).ok_or_else(|| bad(name, "code count overflows"))?;
    let expected =
        n_scales.checked_mul(4).and_then(|s| s.checked_add(n_codes)).and_then(|s| s.checked_add(Q4_HEADER_BYTES));
    if expected != Some(payload.len()) {
        return Err(bad(name, format!("Q4 payload of {} bytes for {rows}x{cols}/g{group_size}", payload.len())));
    }
    let scales = f32s(cur.take(n_scales * 4, "Q4 scales")?);
    let codes = cur.take(n_codes, "Q4 codes")?.to_vec();
    QuantizedTensor::from_parts(rows, cols, group_size, scales, codes)
        .map_err(|source| FormatError::Quant { name: name.to_string(), source })
}

/// Writes a container atomically.
pub fn write_tensor_file(path: impl AsRef<Path>, entries: &[TensorEntry]) -> Result<(), FormatError> {
    let bytes = encode_tensor_file(entries)?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Vec<TensorEntry>, FormatError> {
    let bytes = std::fs::read(path)?;
    decode_tensor_file(&bytes)
}
