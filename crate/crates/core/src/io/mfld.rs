//! MFLD: a small binary raster of little-endian f64 values.
//!
//! ```text
//! "MFLD" | version u16 | height u32 | width u32 | channels u8 | payload
//! ```
//!
//! The payload is row-major and channel-interleaved. One channel holds a scalar
//! image, two hold a displacement or log field as `(row, col)` pairs.

use std::path::Path;

use super::{push_f64s, read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::field::{DisplacementField, Grid, ScalarImage};
use crate::lie::LogField;

pub const FIELD_MAGIC: &[u8; 4] = b"MFLD";
pub const FIELD_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldFileHeader {
    pub version: u16,
    pub height: u32,
    pub width: u32,
    pub channels: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub header: FieldFileHeader,
    pub payload: Vec<f64>,
}

impl FieldFile {
    fn new(grid: Grid, channels: u8, payload: Vec<f64>) -> Self {
        Self {
            header: FieldFileHeader {
                version: FIELD_VERSION,
                height: grid.height() as u32,
                width: grid.width() as u32,
                channels,
            },
            payload,
        }
    }

    pub fn from_field(field: &DisplacementField) -> Self {
        Self::new(
            field.grid(),
            2,
            field.data().iter().flat_map(|v| [v[0], v[1]]).collect(),
        )
    }

    pub fn from_log_field(v: &LogField) -> Self {
        Self::new(v.grid(), 2, v.flatten())
    }

    pub fn from_scalar(image: &ScalarImage) -> Self {
        Self::new(image.grid(), 1, image.values().to_vec())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.header.height as usize, self.header.width as usize)
    }

    fn pairs(&self) -> Result<(Grid, Vec<[f64; 2]>)> {
        if self.header.channels != 2 {
            return Err(Error::Format(format!(
                "expected a 2-channel field, file has {} channel(s)",
                self.header.channels
            )));
        }
        Ok((
            self.grid()?,
            self.payload.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        ))
    }

    pub fn into_field(self) -> Result<DisplacementField> {
        let (grid, data) = self.pairs()?;
        DisplacementField::new(grid, data)
    }

    pub fn into_log_field(self) -> Result<LogField> {
        let (grid, data) = self.pairs()?;
        LogField::new(grid, data)
    }

    pub fn into_scalar(self) -> Result<ScalarImage> {
        if self.header.channels != 1 {
            return Err(Error::Format(format!(
                "expected a 1-channel image, file has {} channels",
                self.header.channels
            )));
        }
        ScalarImage::new(self.grid()?, self.payload)
    }
}

pub fn encode_field_file(file: &FieldFile) -> Vec<u8> {
    let h = &file.header;
    let mut out = Vec::with_capacity(15 + 8 * file.payload.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&h.height.to_le_bytes());
    out.extend_from_slice(&h.width.to_le_bytes());
    out.push(h.channels);
    push_f64s(&mut out, file.payload.iter().copied());
    out
}

pub fn decode_field_file(bytes: &[u8]) -> Result<FieldFile> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4.min(bytes.len()), "magic")?;
    if magic != FIELD_MAGIC {
        return Err(Error::BadMagic {
            expected: "MFLD".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u16("header")?;
    if version != FIELD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let height = r.u32("header")?;
    let width = r.u32("header")?;
    let channels = r.u8("header")?;
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedChannels(channels));
    }
    let count = (height as usize)
        .checked_mul(width as usize)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let payload = r.f64s(count)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after the payload",
            r.remaining()
        )));
    }
    let file = FieldFile {
        header: FieldFileHeader {
            version,
            height,
            width,
            channels,
        },
        payload,
    };
    file.grid()?;
    Ok(file)
}

pub fn read_field_file(path: &Path) -> Result<FieldFile> {
    decode_field_file(&read_bytes(path)?)
}

pub fn write_field_file(path: &Path, file: &FieldFile) -> Result<()> {
    write_bytes(path, &encode_field_file(file))
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    read_field_file(path)?.into_field()
}

pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    write_field_file(path, &FieldFile::from_field(field))
}

pub fn read_log_field(path: &Path) -> Result<LogField> {
    read_field_file(path)?.into_log_field()
}

pub fn write_log_field(path: &Path, v: &LogField) -> Result<()> {
    write_field_file(path, &FieldFile::from_log_field(v))
}

pub fn read_scalar_field(path: &Path) -> Result<ScalarImage> {
    read_field_file(path)?.into_scalar()
}

pub fn write_scalar_field(path: &Path, image: &ScalarImage) -> Result<()> {
    write_field_file(path, &FieldFile::from_scalar(image))
}
