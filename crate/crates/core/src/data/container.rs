//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SDVT" | version u32 | entry_count u32
//! per entry: name_len u32 | name utf-8 | dtype u8 (0 = f32, 1 = f64)
//!            | rank u32 | dims u64 × rank | offset u64 | byte_len u64
//! header_crc u32                          (CRC32 of every preceding byte)
//! per entry, at `offset`: payload (byte_len bytes) | payload_crc u32
//! ```
//!
//! Payloads are laid out in entry order with no gaps; the file ends right
//! after the last payload CRC.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Array;

pub const MAGIC: &[u8; 4] = b"SDVT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub array: Array,
}

/// Where an entry's payload landed in the encoded byte stream.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EntryLayout {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub byte_len: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<TensorEntry>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a named tensor. `F32` entries must hold values that are exactly
    /// representable in single precision so that a round trip is lossless.
    pub fn push(&mut self, name: impl Into<String>, array: Array, dtype: DType) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::Parameter(format!("invalid entry name {name:?}")));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Validation(format!("duplicate entry name {name:?}")));
        }
        if dtype == DType::F32 {
            if let Some(v) = array.data().iter().find(|v| (**v as f32) as f64 != **v) {
                return Err(Error::Parameter(format!(
                    "entry {name:?}: value {v} is not exactly representable as f32"
                )));
            }
        }
        self.entries.push(TensorEntry { name, dtype, array });
        Ok(())
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.array)
    }

    /// Like [`get`](Self::get) but a missing entry is a format error.
    pub fn require(&self, name: &str) -> Result<&Array> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing entry {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode().0
    }

    /// Encodes the container and reports each payload's placement.
    pub fn encode(&self) -> (Vec<u8>, Vec<EntryLayout>) {
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());

        let header_len: usize = 12
            + self
                .entries
                .iter()
                .map(|e| 4 + e.name.len() + 1 + 4 + 8 * e.array.shape().len() + 16)
                .sum::<usize>()
            + 4;

        let mut offset = header_len as u64;
        let mut payloads = Vec::new();
        let mut layout = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let payload = encode_payload(&e.array, e.dtype);
            let crc = crc32fast::hash(&payload);
            header.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            header.extend_from_slice(e.name.as_bytes());
            header.push(e.dtype.code());
            header.extend_from_slice(&(e.array.shape().len() as u32).to_le_bytes());
            for &d in e.array.shape() {
                header.extend_from_slice(&(d as u64).to_le_bytes());
            }
            header.extend_from_slice(&offset.to_le_bytes());
            header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            layout.push(EntryLayout {
                name: e.name.clone(),
                dtype: e.dtype,
                shape: e.array.shape().to_vec(),
                offset,
                byte_len: payload.len() as u64,
                crc32: crc,
            });
            offset += payload.len() as u64 + 4;
            payloads.extend_from_slice(&payload);
            payloads.extend_from_slice(&crc.to_le_bytes());
        }
        let hcrc = crc32fast::hash(&header);
        header.extend_from_slice(&hcrc.to_le_bytes());
        debug_assert_eq!(header.len(), header_len);
        header.extend_from_slice(&payloads);
        (header, layout)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        struct Raw {
            name: String,
            dtype: DType,
            shape: Vec<usize>,
            offset: u64,
            byte_len: u64,
        }
        let mut raws = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("entry name is not utf-8".into()))?
                .to_string();
            let dtype = DType::from_code(r.take(1)?[0])?;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 16 {
                return Err(Error::Format(format!("entry {name:?} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()?;
            let byte_len = r.u64()?;
            raws.push(Raw {
                name,
                dtype,
                shape,
                offset,
                byte_len,
            });
        }
        let header_end = r.pos;
        let stored = r.u32()?;
        if crc32fast::hash(&bytes[..header_end]) != stored {
            return Err(Error::Format("header checksum mismatch".into()));
        }

        let mut expected_offset = r.pos as u64;
        let mut out = TensorContainer::new();
        for raw in raws {
            let numel = raw
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("entry {:?} is too large", raw.name)))?;
            if raw.byte_len != (numel * raw.dtype.size()) as u64 {
                return Err(Error::Format(format!(
                    "entry {:?}: payload length {} disagrees with shape {:?}",
                    raw.name, raw.byte_len, raw.shape
                )));
            }
            if raw.offset != expected_offset {
                return Err(Error::Format(format!(
                    "entry {:?}: offset {} overlaps or leaves a gap (expected {expected_offset})",
                    raw.name, raw.offset
                )));
            }
            let start = raw.offset as usize;
            let end = start + raw.byte_len as usize;
            if end + 4 > bytes.len() {
                return Err(Error::Format(format!("entry {:?} is truncated", raw.name)));
            }
            let payload = &bytes[start..end];
            let crc = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
            if crc32fast::hash(payload) != crc {
                return Err(Error::Format(format!(
                    "checksum mismatch in entry {:?}",
                    raw.name
                )));
            }
            let data = decode_payload(payload, raw.dtype);
            let array = Array::new(raw.shape, data)
                .map_err(|e| Error::Format(format!("entry {:?}: {e}", raw.name)))?;
            out.push(raw.name, array, raw.dtype)
                .map_err(|e| Error::Format(e.to_string()))?;
            expected_offset = end as u64 + 4;
        }
        if expected_offset as usize != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last entry",
                bytes.len() as i64 - expected_offset as i64
            )));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<Vec<EntryLayout>> {
        let (bytes, layout) = self.encode();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        Ok(layout)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn encode_payload(a: &Array, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() * dtype.size());
    match dtype {
        DType::F32 => a
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => a
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn decode_payload(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
