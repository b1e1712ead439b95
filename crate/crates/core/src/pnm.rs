//! Binary PPM (`P6`) and PGM (`P5`) files with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    write(path, b"P6", width, height, rgb)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), width * height);
    write(path, b"P5", width, height, gray)
}

fn write(path: &Path, magic: &[u8], width: usize, height: usize, body: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(body.len() + 20);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    buf.extend_from_slice(body);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a `P6` file, returning `(width, height, rgb bytes)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read(path, b"P6", 3)
}

/// Reads a `P5` file, returning `(width, height, gray bytes)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read(path, b"P5", 1)
}

fn read(path: &Path, magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::format(path, msg);
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(bad("wrong magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only 8-bit samples are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let expected = width * height * channels;
    let body = &buf[pos..];
    if body.len() < expected {
        return Err(bad(&format!(
            "truncated raster: {} of {expected} bytes",
            body.len()
        )));
    }
    Ok((width, height, body[..expected].to_vec()))
}
