//! On-disk formats: PGM images, MFLD field files and MBAS basis files.
//!
//! Every format has a pure byte-level encoder/decoder plus thin path wrappers.

mod basis;
mod mfld;
mod pgm;

pub use basis::{decode_basis, encode_basis, read_basis, write_basis, BASIS_MAGIC, BASIS_VERSION};
pub use mfld::{
    decode_field_file, encode_field_file, read_field, read_field_file, read_log_field, read_scalar_field, write_field,
    write_field_file, write_log_field, write_scalar_field, FieldFile, FieldFileHeader, FIELD_MAGIC, FIELD_VERSION,
};
pub use pgm::{
    decode_pgm, encode_pgm_image, encode_pgm_labels, read_pgm_image, read_pgm_labels, write_pgm_image,
    write_pgm_labels, Pgm,
};

use std::path::Path;

use crate::error::Result;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    Ok(std::fs::write(path, bytes)?)
}

/// Little-endian cursor over a byte buffer that reports truncation as a payload error.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(crate::Error::Format(format!(
                "file ends inside the {what} at byte {}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    /// `count` little-endian f64 values; a short buffer is a truncated payload.
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let expected = count * 8;
        if self.remaining() < expected {
            return Err(crate::Error::TruncatedPayload {
                expected,
                found: self.remaining(),
            });
        }
        let raw = self.take(expected, "payload")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite(i));
        }
        Ok(values)
    }
}

fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
