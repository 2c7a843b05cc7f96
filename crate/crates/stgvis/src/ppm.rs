//! Binary PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::error::{read, write, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
}

pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::format(path, 0, "missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        fields[i] = text.parse().map_err(|_| Error::format(path, start, format!("expected {name}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, pos, format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, pos, "expected whitespace after header"));
    }
    pos += 1;
    let n = width * height * 3;
    let body = &bytes[pos..];
    if body.len() != n {
        return Err(Error::format(path, pos, format!("expected {n} pixel bytes, found {}", body.len())));
    }
    Ok(Image {
        width,
        height,
        rgb: body.to_vec(),
    })
}

pub fn save(img: &Image, path: &Path) -> Result<()> {
    write(path, &encode(img))
}

pub fn load(path: &Path) -> Result<Image> {
    decode(&read(path)?, path)
}
