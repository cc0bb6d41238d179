//! MSIF feature files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MSIF" | u16 version=1 | u32 records | u32 classes | u32 text_dim | u32 audio_dim | u32 frame_dim
//! per record:
//!   u16 id_len | id (UTF-8) | u32 label | u32 frames
//!   f32 text[text_dim] | f32 audio[audio_dim] | f32 frames[frames * frame_dim] (row-major)
//! ```
//!
//! Floats are stored as `f32` and widened to `f64` on read. Values that are
//! already `f32`-representable therefore round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bytes::Cursor;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"MSIF";
pub const VERSION: u16 = 1;

/// Dimensions shared by every record in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub classes: u32,
    pub text_dim: u32,
    pub audio_dim: u32,
    pub frame_dim: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: usize,
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    /// T×frame_dim per-frame visual features.
    pub frames: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<FeatureRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&FeatureRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Subset by record index, keeping the header.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            header: self.header,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Checks every record against the header.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        for (n, r) in self.records.iter().enumerate() {
            let bad = |msg: String| Error::Input(format!("record {n} ({:?}): {msg}", r.id));
            if r.label >= h.classes as usize {
                return Err(bad(format!("label {} >= classes {}", r.label, h.classes)));
            }
            if r.text.len() != h.text_dim as usize {
                return Err(bad(format!("text has {} values, header says {}", r.text.len(), h.text_dim)));
            }
            if r.audio.len() != h.audio_dim as usize {
                return Err(bad(format!("audio has {} values, header says {}", r.audio.len(), h.audio_dim)));
            }
            if r.frames.cols() != h.frame_dim as usize {
                return Err(bad(format!("frames have {} columns, header says {}", r.frames.cols(), h.frame_dim)));
            }
            if r.id.len() > u16::MAX as usize {
                return Err(bad("id longer than 65535 bytes".into()));
            }
            let all = r.text.iter().chain(&r.audio).chain(r.frames.data());
            if all.clone().any(|v| !v.is_finite()) {
                return Err(bad("non-finite feature value".into()));
            }
        }
        Ok(())
    }
}

/// Serializes a dataset to MSIF bytes.
pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let h = &dataset.header;
    let count = u32::try_from(dataset.len()).map_err(|_| Error::Input("too many records".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [count, h.classes, h.text_dim, h.audio_dim, h.frame_dim] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in &dataset.records {
        out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        out.extend_from_slice(&(r.label as u32).to_le_bytes());
        out.extend_from_slice(&(r.frames.rows() as u32).to_le_bytes());
        for v in r.text.iter().chain(&r.audio).chain(r.frames.data()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(dataset)?)?;
    Ok(())
}

/// Parses MSIF bytes.
pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor::new(bytes);
    if c.take(4, "magic")? != MAGIC {
        return Err(c.err(0, "bad magic, expected \"MSIF\""));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(c.err(4, &format!("unsupported version {version}")));
    }
    let count = c.u32("record count")?;
    let header = DatasetHeader {
        classes: c.u32("class count")?,
        text_dim: c.u32("text dim")?,
        audio_dim: c.u32("audio dim")?,
        frame_dim: c.u32("frame dim")?,
    };
    let mut records = Vec::new();
    for n in 0..count {
        let start = c.pos;
        let id_len = c.u16("id length")? as usize;
        let id_bytes = c.take(id_len, "id")?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| c.err(start + 2, &format!("record {n}: id is not UTF-8")))?
            .to_string();
        let label_at = c.pos;
        let label = c.u32("label")?;
        if label >= header.classes {
            return Err(c.err(label_at, &format!("record {n}: label {label} >= classes {}", header.classes)));
        }
        let t_at = c.pos;
        let t = c.u32("frame count")? as usize;
        if t == 0 || header.frame_dim == 0 {
            return Err(c.err(t_at, &format!("record {n}: empty frame matrix")));
        }
        let text = c.f32s(header.text_dim as usize, "text")?;
        let audio = c.f32s(header.audio_dim as usize, "audio")?;
        let frame_vals = c.f32s(t * header.frame_dim as usize, "frames")?;
        let frames = Matrix::new(t, header.frame_dim as usize, frame_vals)?;
        records.push(FeatureRecord {
            id,
            label: label as usize,
            text,
            audio,
            frames,
        });
    }
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, &format!("{} trailing bytes after {count} records", bytes.len() - c.pos)));
    }
    Ok(Dataset { header, records })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode(&fs::read(path)?)
}
