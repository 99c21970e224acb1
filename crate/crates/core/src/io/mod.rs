//! On-disk formats.
//!
//! Cube files (`.cidc`) are little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `CIDC`                            |
//! | 4      | 2    | version (u16, = 1)                      |
//! | 6      | 2    | dtype code (u16, 1 = float32)           |
//! | 8      | 12   | dims as u32 `(bands, height, width)`    |
//! | 20     | 4·n  | band-major float32 payload              |
//!
//! The same container holds measurements and intensity planes (one band)
//! and the tensors of attention parameter bundles.

pub mod bundle;
pub mod scene;

use std::fs;
use std::path::Path;

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::sensing::CodedMask;

pub const MAGIC: &[u8; 4] = b"CIDC";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 1;
pub const HEADER_LEN: usize = 20;

pub fn encode_cube(cube: &SpectralCube) -> Vec<u8> {
    let (h, w, b) = cube.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * cube.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for d in [b, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in cube.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<SpectralCube> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected \"CIDC\"".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "header truncated: need {HEADER_LEN} bytes, have {}",
                bytes.len()
            ),
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;

    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let dtype = u16_at(6);
    if dtype != DTYPE_F32 {
        return Err(Error::Parse {
            offset: 6,
            message: format!("unsupported dtype code {dtype}"),
        });
    }
    let (bands, height, width) = (u32_at(8), u32_at(12), u32_at(16));
    if bands == 0 || height == 0 || width == 0 {
        return Err(Error::Parse {
            offset: 8,
            message: format!("zero dimension in ({bands}, {height}, {width})"),
        });
    }
    let count = bands
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::Parse {
            offset: 8,
            message: "dims overflow".into(),
        })?;
    let expected = count * 4;
    let actual = bytes.len() - HEADER_LEN;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::Parse {
            offset: HEADER_LEN + expected,
            message: format!("{} trailing bytes after payload", actual - expected),
        });
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: HEADER_LEN + 4 * i,
                message: "non-finite sample".into(),
            });
        }
        data.push(v as f64);
    }
    SpectralCube::new(height, width, bands, data)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes)
}

pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_cube(cube))
}

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Binary P5 mask: any nonzero sample maps to 1.0.
pub fn decode_pgm_mask(bytes: &[u8]) -> Result<CodedMask> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Parse {
            offset: 0,
            message: "not a binary PGM (expected \"P5\")".into(),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse {
                offset: pos,
                message: "expected a decimal header field".into(),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: "header field out of range".into(),
            })?;
    }
    let [width, height, maxval] = fields;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Parse {
            offset: pos,
            message: format!("only 8-bit PGM is supported, maxval {maxval}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: pos,
            message: "zero PGM dimension".into(),
        });
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Parse {
            offset: pos,
            message: "missing whitespace before raster".into(),
        });
    }
    pos += 1;
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: raster.len(),
        });
    }
    let values = raster[..expected]
        .iter()
        .map(|&v| if v > 0 { 1.0 } else { 0.0 })
        .collect();
    CodedMask::new(height, width, values)
}

/// Writes a binary mask as P5 with 0/255 samples. Graded masks are refused.
pub fn encode_pgm_mask(mask: &CodedMask) -> Result<Vec<u8>> {
    if mask.values().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData(
            "graded masks cannot be stored as PGM; use the cube format".into(),
        ));
    }
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(
        mask.values()
            .iter()
            .map(|&v| if v == 1.0 { 255u8 } else { 0 }),
    );
    Ok(out)
}

/// Reads a mask from either a single-band cube file or a P5 PGM.
pub fn read_mask(path: impl AsRef<Path>) -> Result<CodedMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let cube = decode_cube(&bytes)?;
        if cube.bands() != 1 {
            return Err(Error::Shape(format!(
                "mask cube must have 1 band, got {}",
                cube.bands()
            )));
        }
        CodedMask::new(cube.height(), cube.width(), cube.into_data())
    } else {
        decode_pgm_mask(&bytes)
    }
}

pub fn write_mask_pgm(mask: &CodedMask, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_pgm_mask(mask)?)
}
