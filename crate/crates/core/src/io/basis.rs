//! MBAS: serialized [`LogEuclideanBasis`].
//!
//! ```text
//! "MBAS" | version u16 | height u32 | width u32 | d u32 | flags u8 | sign convention u8
//! | total variance f64 | mean (h*w*2 f64) | d components (h*w*2 f64 each) | d singular values
//! ```
//!
//! Flag bit 0 marks a symmetrized basis. Orthonormality is re-checked on load.

use std::path::Path;

use super::{push_f64s, read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::field::Grid;
use crate::latent::LogEuclideanBasis;
use crate::lie::LogField;

pub const BASIS_MAGIC: &[u8; 4] = b"MBAS";
pub const BASIS_VERSION: u16 = 1;
/// Largest-magnitude entry of each component is positive.
const SIGN_CONVENTION: u8 = 1;

pub fn encode_basis(basis: &LogEuclideanBasis) -> Vec<u8> {
    let grid = basis.grid();
    let mut out = Vec::new();
    out.extend_from_slice(BASIS_MAGIC);
    out.extend_from_slice(&BASIS_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(basis.dim() as u32).to_le_bytes());
    out.push(basis.symmetrized() as u8);
    out.push(SIGN_CONVENTION);
    push_f64s(&mut out, [basis.total_variance()]);
    push_f64s(&mut out, basis.mean().flatten());
    for c in basis.components() {
        push_f64s(&mut out, c.flatten());
    }
    push_f64s(&mut out, basis.singular_values().iter().copied());
    out
}

pub fn decode_basis(bytes: &[u8]) -> Result<LogEuclideanBasis> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4.min(bytes.len()), "magic")?;
    if magic != BASIS_MAGIC {
        return Err(Error::BadMagic {
            expected: "MBAS".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u16("header")?;
    if version != BASIS_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let height = r.u32("header")? as usize;
    let width = r.u32("header")? as usize;
    let d = r.u32("header")? as usize;
    let flags = r.u8("header")?;
    let sign = r.u8("header")?;
    if sign != SIGN_CONVENTION {
        return Err(Error::Format(format!("unknown sign convention {sign}")));
    }
    if flags > 1 {
        return Err(Error::Format(format!("unknown flag bits {flags:#04b}")));
    }
    let grid = Grid::new(height, width)?;
    let block = 2 * grid.len();
    let count = 1 + block * (d + 1) + d;
    let values = r.f64s(count)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after the basis",
            r.remaining()
        )));
    }
    let total_variance = values[0];
    let mean = LogField::from_flat(grid, &values[1..1 + block])?;
    let components = (0..d)
        .map(|k| {
            let start = 1 + block * (k + 1);
            LogField::from_flat(grid, &values[start..start + block])
        })
        .collect::<Result<Vec<_>>>()?;
    let singular_values = values[count - d..].to_vec();
    LogEuclideanBasis::from_parts(mean, components, singular_values, total_variance, flags & 1 == 1)
}

pub fn read_basis(path: &Path) -> Result<LogEuclideanBasis> {
    decode_basis(&read_bytes(path)?)
}

pub fn write_basis(path: &Path, basis: &LogEuclideanBasis) -> Result<()> {
    write_bytes(path, &encode_basis(basis))
}
