//! Bounds-checked little-endian reading shared by the binary formats.

use crate::error::{Error, Result};

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated: need {n} bytes for {what}, {} left", self.remaining()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// `n` little-endian `f32` values widened to `f64`; rejects non-finite ones.
    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        self.floats(n, 4, what, |c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
    }

    /// `n` little-endian `f64` values; rejects non-finite ones.
    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        self.floats(n, 8, what, |c| f64::from_le_bytes(c.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize, width: usize, what: &str, conv: impl Fn(&[u8]) -> f64) -> Result<Vec<f64>> {
        let start = self.pos;
        let len = n.checked_mul(width).ok_or_else(|| self.err(start, "size overflow"))?;
        let vals: Vec<f64> = self.take(len, what)?.chunks_exact(width).map(conv).collect();
        if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
            return Err(self.err(start + width * k, &format!("non-finite value in {what}")));
        }
        Ok(vals)
    }

    pub(crate) fn err(&self, offset: usize, message: &str) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.to_string(),
        }
    }
}
