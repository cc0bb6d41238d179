//! MSCK checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MSCK" | u16 version=1 | u32 config_len | config JSON (UTF-8)
//! u64 step | u64 epoch | u32 tensors
//! per tensor: u16 name_len | name | u32 ndims | u32 dims[ndims] | f64 values
//! ```
//!
//! Tensors are the model blocks in layout order, followed by the optimizer
//! moments named `adam.m.<block>` and `adam.v.<block>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::model::{BlockInfo, Model};
use super::train::{Adam, ModelState};
use crate::bytes::Cursor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MSCK";
pub const VERSION: u16 = 1;

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(state.config()).map_err(|e| Error::Input(e.to_string()))?;
    let info = state.model.block_info();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.epoch.to_le_bytes());
    out.extend_from_slice(&((info.len() * 3) as u32).to_le_bytes());
    for (b, values) in info.iter().zip(state.model.blocks()) {
        put_tensor(&mut out, &b.name, &b.shape, values);
    }
    for (prefix, moments) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for (b, values) in info.iter().zip(moments) {
            put_tensor(&mut out, &format!("{prefix}{}", b.name), &b.shape, values);
        }
    }
    Ok(out)
}

pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(state)?)?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut c = Cursor::new(bytes);
    if c.take(4, "magic")? != MAGIC {
        return Err(c.err(0, "bad magic, expected \"MSCK\""));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(c.err(4, &format!("unsupported version {version}")));
    }
    let len = c.u32("config length")? as usize;
    let config_at = c.pos;
    let config: ModelConfig = serde_json::from_slice(c.take(len, "config")?)
        .map_err(|e| c.err(config_at, &format!("bad config: {e}")))?;
    config
        .validate()
        .map_err(|e| c.err(config_at, &format!("bad config: {e}")))?;
    let step = c.u64("step")?;
    let epoch = c.u64("epoch")?;
    let count = c.u32("tensor count")? as usize;

    let mut tensors: HashMap<String, (usize, Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..count {
        let at = c.pos;
        let name_len = c.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| c.err(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let ndims = c.u32("tensor rank")? as usize;
        if ndims > 8 {
            return Err(c.err(c.pos - 4, &format!("tensor {name}: rank {ndims} too large")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(c.u32("tensor dim")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| c.err(at, "tensor size overflow"))?;
        if n.saturating_mul(8) > c.remaining() {
            return Err(c.err(c.pos, &format!("truncated: tensor {name} needs {n} values")));
        }
        let values = c.f64s(n, &name)?;
        if tensors.insert(name.clone(), (at, shape, values)).is_some() {
            return Err(c.err(at, &format!("duplicate tensor {name}")));
        }
    }
    if c.remaining() != 0 {
        return Err(c.err(c.pos, &format!("{} trailing bytes", c.remaining())));
    }

    let mut model = Model::init(&config)?;
    let info = model.block_info();
    let mut fetch = |name: &str, b: &BlockInfo| -> Result<Vec<f64>> {
        let (at, shape, values) = tensors
            .remove(name)
            .ok_or_else(|| c.err(bytes.len(), &format!("missing tensor {name}")))?;
        if shape != b.shape {
            return Err(c.err(at, &format!("tensor {name} has shape {shape:?}, expected {:?}", b.shape)));
        }
        Ok(values)
    };
    let mut blocks = Vec::with_capacity(info.len());
    let mut adam = Adam::new(&model);
    for b in &info {
        blocks.push(fetch(&b.name, b)?);
    }
    for (i, b) in info.iter().enumerate() {
        adam.m[i] = fetch(&format!("adam.m.{}", b.name), b)?;
        adam.v[i] = fetch(&format!("adam.v.{}", b.name), b)?;
    }
    if let Some((name, (at, _, _))) = tensors.iter().next() {
        return Err(c.err(*at, &format!("unexpected tensor {name}")));
    }
    for (dst, src) in model.blocks_mut().into_iter().zip(&blocks) {
        dst.copy_from_slice(src);
    }
    Ok(ModelState {
        model,
        adam,
        step,
        epoch,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::pipeline::model::Sample;

    fn trained_state() -> ModelState {
        let cfg = ModelConfig {
            text_dim: 3,
            audio_dim: 2,
            visual_dim: 4,
            projection_dim: 3,
            classes: 2,
            frames: 5,
            batch_size: 2,
            seed: 9,
            ..ModelConfig::default()
        };
        let samples: Vec<Sample> = (0..4)
            .map(|i| Sample {
                text: vec![i as f64, 1.0, -0.5],
                audio: vec![0.3, -(i as f64)],
                frames: Matrix::from_fn(5, 4, |r, c| ((r * 7 + c * 3 + i) % 5) as f64 - 2.0),
                label: i % 2,
            })
            .collect();
        let mut state = ModelState::new(&cfg).unwrap();
        state.train(&samples, 2, |_| {}).unwrap();
        state
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let state = trained_state();
        let bytes = encode_checkpoint(&state).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, state);
        for (a, b) in back.model.blocks().iter().zip(state.model.blocks()) {
            let bits = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_a_format_error() {
        let bytes = encode_checkpoint(&trained_state()).unwrap();
        for cut in (0..bytes.len()).step_by(7) {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = bytes.clone();
        bad[10] = b'#';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 10, .. })));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { .. })));
        let mut bad = bytes;
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { .. })));
    }
}
