//! Binary PGM (P5) encoding and decoding, 8-bit only.
//!
//! The writer produces a fixed header layout (`P5\n{w} {h}\n255\n`) so
//! identical pixel data always yields identical bytes. The reader accepts any
//! spec-conforming P5 with maxval <= 255, including `#` comments.

use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count mismatch");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parse a P5 image into (width, height, pixels).
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let err = |reason: &str| Error::Decode {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(err("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected integer in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        *field = text.parse().map_err(|_| err("header value overflow"))?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(err("zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit maxval supported"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing separator before pixel data")),
    }
    let need = width * height;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(err("truncated pixel data"));
    }
    Ok((width, height, data[..need].to_vec()))
}
