//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (width, height, payload) = parse_header(bytes, b"P6")?;
        let need = width * height * 3;
        if payload.len() < need {
            return Err(format!(
                "expected {need} pixel bytes, found {}",
                payload.len()
            ));
        }
        Ok(Self {
            width,
            height,
            pixels: payload[..need].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
    }
}

/// Encodes values in `[0, 1]` as a P5 image with samples `round(255·v)`.
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode_pgm(width, height, values)).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, samples)`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let (w, h, payload) = parse_header(bytes, b"P5")?;
    if payload.len() < w * h {
        return Err("truncated PGM payload".into());
    }
    Ok((w, h, payload[..w * h].to_vec()))
}

fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &[u8],
) -> std::result::Result<(usize, usize, &'a [u8]), String> {
    if !bytes.starts_with(magic) {
        return Err(format!("missing {} magic", String::from_utf8_lossy(magic)));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    if fields[2] != 255 {
        return Err(format!("unsupported maxval {}", fields[2]));
    }
    if fields[0] == 0 || fields[1] == 0 {
        return Err("zero image dimension".into());
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("truncated header".into());
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}
