//! Binary PPM (P6, maxval 255) reading and writing.
//!
//! The emitted grammar is exactly `P6\n<width> <height>\n255\n` followed by
//! `3*W*H` bytes, so files round-trip bit-exactly. The parser tolerates
//! arbitrary whitespace runs between header fields and reports the byte
//! offset of whatever it rejects.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes P6 bytes into a `3 x H x W` tensor with values in [0, 1]
/// (byte / 255).
pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::Parse {
            offset: 0,
            message: "expected magic 'P6'".into(),
        });
    }
    pos += 2;
    let width = read_header_number(bytes, &mut pos, "width")?;
    let height = read_header_number(bytes, &mut pos, "height")?;
    let maxval = read_header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval}, only 255"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: pos,
                message: "expected single whitespace after maxval".into(),
            })
        }
    }
    let need = 3usize
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .ok_or(Error::Format("image dimensions overflow".into()))?;
    if bytes.len() < pos + need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "raster truncated: need {need} bytes, have {}",
                bytes.len() - pos
            ),
        });
    }
    let raster = &bytes[pos..pos + need];
    let mut img = Tensor::zeros(&[3, height, width]);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let v = raster[(y * width + x) * 3 + c] as f64 / 255.0;
                img.set3(c, y, x, v);
            }
        }
    }
    Ok(img)
}

fn read_header_number(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Parse {
            offset: start,
            message: format!("expected {field} digits"),
        });
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).expect("digits are ascii");
    text.parse::<usize>().map_err(|_| Error::Parse {
        offset: start,
        message: format!("{field} out of range"),
    })
}

/// Encodes a `3 x H x W` tensor (values clamped to [0, 1], quantized by
/// round(v * 255)) into canonical P6 bytes.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    if img.shape().len() != 3 || img.shape()[0] != 3 {
        return Err(Error::dim("encode_ppm image", img.shape(), &[3, 0, 0]));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (img.at3(c, y, x).clamp(0.0, 1.0) * 255.0).round();
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

/// Reads a P6 file into an image tensor.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ppm(&bytes)
}

/// Writes an image tensor as a P6 file. The bytes are assembled fully in
/// memory before a single write, so a failed transfer never leaves a
/// partial image behind.
pub fn save_image(path: &Path, img: &Tensor) -> Result<()> {
    let bytes = encode_ppm(img)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
