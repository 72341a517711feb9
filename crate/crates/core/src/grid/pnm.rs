//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255 or 65535.

use std::path::Path;

use super::Grid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Grid<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn write_pnm<T: Scalar>(grid: &Grid<T>, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(grid, maxval)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    /// Returns the parsed value and the offset of its first digit.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

/// Parses an in-memory PGM/PPM. Samples are scaled to `[0, 1]` by `maxval`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Grid<f32>> {
    if bytes.len() < 2 {
        return Err(Error::parse(0, "missing magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::parse(0, "magic must be P5 or P6")),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::parse(cur.pos, "expected whitespace after magic"));
    }
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(maxval_at, "zero image dimension"));
    }
    let sample_bytes = match maxval {
        255 => 1,
        65535 => 2,
        other => return Err(Error::parse(maxval_at, format!("unsupported maxval {other}"))),
    };
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::parse(cur.pos, "expected single whitespace after maxval"));
    }
    let payload_start = cur.pos + 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels * sample_bytes))
        .ok_or_else(|| Error::parse(maxval_at, "image dimensions overflow"))?;
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::parse(
            payload_start + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let scale = maxval as f32;
    let data: Vec<f32> = if sample_bytes == 1 {
        payload.iter().map(|&b| b as f32 / scale).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f32 / scale)
            .collect()
    };
    Ok(Grid::from_parts(height, width, channels, data))
}

/// Serializes with the fixed header `P5\n<w> <h>\n<maxval>\n` (`P6` for RGB).
pub fn encode_pnm<T: Scalar>(grid: &Grid<T>, maxval: u16) -> Result<Vec<u8>> {
    let magic = match grid.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidArgument(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Unsupported(format!("maxval {maxval}")));
    }
    let header = format!("{magic}\n{} {}\n{maxval}\n", grid.width(), grid.height());
    let wide = maxval > 255;
    let mut out = Vec::with_capacity(header.len() + grid.data().len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    let m = maxval as f64;
    for &v in grid.data() {
        let q = quantize(v.to_f64_lossy(), m);
        if wide {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

/// Clamp to `[0, 1]` and round half up.
#[inline]
fn quantize(v: f64, maxval: f64) -> u16 {
    (v.clamp(0.0, 1.0) * maxval + 0.5).floor() as u16
}
