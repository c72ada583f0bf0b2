//! Netpbm greymaps, plain (P2) and raw (P5).

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::field::{Grid, LabelImage, ScalarImage};

/// Decoded raster with its raw sample values.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub grid: Grid,
    pub maxval: u32,
    pub samples: Vec<u32>,
}

impl Pgm {
    /// Intensities scaled to `[0, 1]` by `maxval`.
    pub fn to_image(&self) -> Result<ScalarImage> {
        let m = self.maxval as f64;
        ScalarImage::new(self.grid, self.samples.iter().map(|&s| s as f64 / m).collect())
    }

    /// Raw sample values as labels.
    pub fn to_labels(&self) -> Result<LabelImage> {
        LabelImage::new(self.grid, self.samples.clone())
    }
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Tokens<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                message: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let plain = match bytes.get(..2) {
        Some(b"P2") => true,
        Some(b"P5") => false,
        _ => {
            let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
            return Err(Error::Format(format!("not a PGM file (magic {found:?})")));
        }
    };
    let mut t = Tokens { bytes, pos: 2 };
    if !t.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::Parse {
            offset: 2,
            message: "expected whitespace after the magic number".into(),
        });
    }
    let width = t.number("width")?;
    let height = t.number("height")?;
    t.skip_space_and_comments();
    let maxval_at = t.pos;
    let maxval = t.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse {
            offset: maxval_at,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    let grid = Grid::new(height as usize, width as usize)?;
    let count = grid.len();
    let mut samples = Vec::with_capacity(count);

    if plain {
        for _ in 0..count {
            t.skip_space_and_comments();
            let at = t.pos;
            let s = t.number("sample")?;
            if s > maxval {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("sample {s} exceeds maxval {maxval}"),
                });
            }
            samples.push(s);
        }
    } else {
        if !bytes.get(t.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Parse {
                offset: t.pos,
                message: "expected a single whitespace byte before the raster".into(),
            });
        }
        let start = t.pos + 1;
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        let raster = &bytes[start..];
        if raster.len() < count * width_bytes {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: format!("raster ends early: need {} bytes", count * width_bytes),
            });
        }
        for i in 0..count {
            let s = if width_bytes == 1 {
                raster[i] as u32
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
            };
            if s > maxval {
                return Err(Error::Parse {
                    offset: start + i * width_bytes,
                    message: format!("sample {s} exceeds maxval {maxval}"),
                });
            }
            samples.push(s);
        }
    }
    Ok(Pgm { grid, maxval, samples })
}

fn encode_raw(grid: Grid, maxval: u32, samples: impl Iterator<Item = u32>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", grid.width(), grid.height(), maxval).into_bytes();
    for s in samples {
        if maxval < 256 {
            out.push(s as u8);
        } else {
            out.extend_from_slice(&(s as u16).to_be_bytes());
        }
    }
    out
}

/// 8-bit P5; intensities are clamped to `[0, 1]` and rounded half up.
pub fn encode_pgm_image(image: &ScalarImage) -> Vec<u8> {
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u32;
    encode_raw(image.grid(), 255, image.values().iter().map(|&v| quantize(v)))
}

/// P5 at maxval 255, or 65535 when a label exceeds 255.
pub fn encode_pgm_labels(labels: &LabelImage) -> Result<Vec<u8>> {
    let max = labels.labels().iter().copied().max().unwrap_or(0);
    let maxval = match max {
        0..=255 => 255,
        256..=65535 => 65535,
        _ => return Err(Error::Domain(format!("label {max} does not fit a 16-bit PGM"))),
    };
    Ok(encode_raw(labels.grid(), maxval, labels.labels().iter().copied()))
}

pub fn read_pgm_image(path: &Path) -> Result<ScalarImage> {
    decode_pgm(&read_bytes(path)?)?.to_image()
}

pub fn read_pgm_labels(path: &Path) -> Result<LabelImage> {
    decode_pgm(&read_bytes(path)?)?.to_labels()
}

pub fn write_pgm_image(path: &Path, image: &ScalarImage) -> Result<()> {
    write_bytes(path, &encode_pgm_image(image))
}

pub fn write_pgm_labels(path: &Path, labels: &LabelImage) -> Result<()> {
    write_bytes(path, &encode_pgm_labels(labels)?)
}
