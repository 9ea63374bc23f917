use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Reads a binary (P5) or ASCII (P2) PGM, scaling samples by `maxval`.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Writes a P5 PGM storing each intensity as `round(i * maxval)`.
pub fn save_pgm(image: &Image, path: impl AsRef<Path>, maxval: u32) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(image, maxval)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_pgm(image: &Image, maxval: u32) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::invalid(format!(
            "pgm maxval must be 255 or 65535, got {maxval}"
        )));
    }
    let header = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval);
    let wide = maxval > 255;
    let mut out = Vec::with_capacity(header.len() + image.data().len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    for &v in image.data() {
        // Round half up.
        let q = (v * maxval as f64 + 0.5).floor() as u32;
        let q = q.min(maxval);
        if wide {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn header_number(&mut self, field: &str) -> Result<u32> {
        let tok = self
            .token()
            .ok_or_else(|| Error::PgmHeader(format!("missing {field}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                Error::PgmHeader(format!(
                    "{field} is not an unsigned integer: {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

pub(crate) fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .token()
        .ok_or_else(|| Error::PgmHeader("empty file".into()))?;
    let ascii = match magic {
        b"P5" => false,
        b"P2" => true,
        other => return Err(Error::PgmMagic(String::from_utf8_lossy(other).into_owned())),
    };
    let width = cur.header_number("width")? as usize;
    let height = cur.header_number("height")? as usize;
    let maxval = cur.header_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::PgmHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::PgmHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    let expected = width * height;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(expected);

    if ascii {
        while data.len() < expected {
            let Some(tok) = cur.token() else { break };
            let v = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse::<u32>().ok())
                .filter(|&v| v <= maxval)
                .ok_or_else(|| {
                    Error::PgmHeader(format!("invalid sample {:?}", String::from_utf8_lossy(tok)))
                })?;
            data.push(v as f64 / scale);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(Error::PgmTruncated { expected, found: 0 });
        }
        let raster = &bytes[cur.pos + 1..];
        if maxval < 256 {
            data.extend(raster.iter().take(expected).map(|&b| b as f64 / scale));
        } else {
            data.extend(
                raster
                    .chunks_exact(2)
                    .take(expected)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale),
            );
        }
        if data.iter().any(|&v| v > 1.0) {
            return Err(Error::PgmHeader(format!("sample exceeds maxval {maxval}")));
        }
    }

    if data.len() < expected {
        return Err(Error::PgmTruncated {
            expected,
            found: data.len(),
        });
    }
    Image::new(width, height, data)
}
