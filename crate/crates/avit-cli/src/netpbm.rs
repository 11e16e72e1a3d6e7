//! Binary NetPBM codec: P6 (8-bit RGB) and P5 (8-bit grayscale).
//!
//! The parser reports every failure with the byte offset where it gave up.
//! Headers follow the NetPBM rules: tokens separated by whitespace, `#`
//! comments allowed between tokens, a single whitespace byte after the
//! maxval, then the raw payload. Only maxval 255 is supported.

use crate::error::{parse_err, Result};
use std::fs;
use std::path::Path;

/// A decoded image: `pixels` is interleaved row-major, `channels` bytes per
/// pixel (3 for P6, 1 for P5).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_separators(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => {
                    return Err(parse_err(self.pos, "unexpected end of header"));
                }
            }
        }
    }

    fn decimal(&mut self, what: &str) -> Result<usize> {
        self.skip_separators()?;
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| parse_err(start, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(parse_err(self.pos, format!("expected {what} digits")));
        }
        Ok(value)
    }
}

/// Decodes P6/P5 bytes.
pub fn parse(bytes: &[u8]) -> Result<RawImage> {
    let channels = match bytes.get(0..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        Some(_) => {
            return Err(parse_err(0, "bad magic, expected \"P6\" or \"P5\""));
        }
        None => return Err(parse_err(0, "file shorter than a NetPBM magic")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.decimal("width")?;
    let height = cur.decimal("height")?;
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image dimension"));
    }
    let maxval_at = {
        cur.skip_separators()?;
        cur.pos
    };
    let maxval = cur.decimal("maxval")?;
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => {
            return Err(parse_err(cur.pos, "expected single whitespace after maxval"));
        }
        None => return Err(parse_err(cur.pos, "unexpected end of header")),
    }
    let need = width * height * channels;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("payload truncated: need {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(parse_err(
            cur.pos + need,
            format!("{} trailing bytes after payload", have - need),
        ));
    }
    Ok(RawImage {
        channels,
        height,
        width,
        pixels: bytes[cur.pos..].to_vec(),
    })
}

pub fn read(path: &Path) -> Result<RawImage> {
    parse(&fs::read(path)?)
}

fn encode(magic: &str, width: usize, height: usize, channels: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height * channels, "payload size");
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Serializes interleaved RGB bytes as binary P6.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    encode("P6", width, height, 3, rgb)
}

/// Serializes grayscale bytes as binary P5.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    encode("P5", width, height, 1, gray)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_ppm(width, height, rgb))?)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_pgm(width, height, gray))?)
}
