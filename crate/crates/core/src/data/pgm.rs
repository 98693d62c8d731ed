//! Binary PGM (P5) reading and 16-bit writing.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn fail<T>(path: &Path, offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    })
}

/// Encodes as `P5` with maxval 65535 and big-endian samples. Pixels must
/// lie in [0, 1].
pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    if let Some(v) = img.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("pixel value {v} is outside [0, 1]")));
    }
    let header = format!("P5\n{} {}\n65535\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + 2 * img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    for &v in &img.pixels {
        out.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
    }
    Ok(out)
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
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

    /// Returns the value and the offset where it starts.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return fail(self.path, start, format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match text.parse::<usize>() {
            Ok(v) => Ok((v, start)),
            Err(_) => fail(self.path, start, format!("{what} `{text}` is out of range")),
        }
    }
}

/// Decodes a binary PGM with maxval up to 65535. `path` is only used in
/// error messages.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return fail(path, 0, "not a PGM file (missing `P` magic)");
    }
    match bytes[1] {
        b'5' => {}
        b'2' => return fail(path, 0, "unsupported variant P2 (ASCII PGM); only binary P5 is read"),
        c => return fail(path, 0, format!("unsupported variant P{}", c as char)),
    }
    let mut p = HeaderParser { bytes, pos: 2, path };
    let (width, width_at) = p.number("width")?;
    let (height, _) = p.number("height")?;
    let (maxval, maxval_at) = p.number("maxval")?;
    if width == 0 || height == 0 {
        return fail(path, width_at, "zero image dimension");
    }
    if maxval == 0 || maxval > 65535 {
        return fail(path, maxval_at, format!("maxval {maxval} outside 1..=65535"));
    }
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return fail(path, p.pos, "expected a single whitespace byte after maxval");
    }
    let data_start = p.pos + 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bps))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: 2,
            msg: "image dimensions overflow".into(),
        })?;
    let available = bytes.len() - data_start;
    if available < need {
        return fail(
            path,
            bytes.len(),
            format!("truncated payload: {available} of {need} sample bytes present"),
        );
    }
    let payload = &bytes[data_start..data_start + need];
    let scale = maxval as f64;
    let pixels: Vec<f64> = if bps == 1 {
        payload.iter().map(|&b| b as f64 / scale).collect()
    } else {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale).collect()
    };
    if let Some(i) = pixels.iter().position(|&v| v > 1.0) {
        return fail(path, data_start + i * bps, "sample exceeds maxval");
    }
    Image::new(width, height, pixels)
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode_pgm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}
