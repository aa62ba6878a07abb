//! Binary netpbm readers and writers (P6 PPM for images, P5 PGM for
//! masks), maxval 255, bit-exact round trips.

use std::fs;
use std::path::Path;

use crate::error::DataError;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, `3 * width * height` bytes.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (3 * width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width * height) as usize] }
    }
}

pub fn write_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (width, height, payload) = parse("P6", bytes, 3)?;
    Ok(RgbImage { width, height, data: payload })
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (width, height, payload) = parse("P5", bytes, 1)?;
    Ok(GrayImage { width, height, data: payload })
}

pub fn save_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, write_ppm(img)).map_err(|e| DataError::io(path.display().to_string(), e))
}

pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, write_pgm(img)).map_err(|e| DataError::io(path.display().to_string(), e))
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
    read_ppm(&bytes)
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path.display().to_string(), e))?;
    read_pgm(&bytes)
}

/// Header grammar: magic, then three decimal tokens (width, height,
/// maxval) separated by whitespace and `#` comments, then exactly one
/// whitespace byte before the payload.
fn parse(magic: &str, bytes: &[u8], channels: usize) -> Result<(u32, u32, Vec<u8>)> {
    if bytes.len() < 2 {
        return Err(DataError::MalformedHeader("shorter than the magic".into()));
    }
    let got_magic = &bytes[..2];
    if got_magic != magic.as_bytes() {
        return Err(DataError::UnsupportedFormat {
            magic: String::from_utf8_lossy(got_magic).into_owned(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        pos = skip_separators(bytes, pos)?;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(DataError::MalformedHeader("expected a decimal field".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| DataError::MalformedHeader("non-utf8 header".into()))?;
        *field = text
            .parse::<u32>()
            .map_err(|_| DataError::MalformedHeader(format!("bad number {text:?}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::BadMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(DataError::MalformedHeader("zero extent".into()));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataError::MalformedHeader("missing payload separator".into()));
    }
    pos += 1;
    let expected = channels * (width as usize) * (height as usize);
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(DataError::Truncated { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(DataError::TrailingData);
    }
    Ok((width, height, payload.to_vec()))
}

fn skip_separators(bytes: &[u8], mut pos: usize) -> Result<usize> {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        if pos >= bytes.len() {
            return Err(DataError::MalformedHeader("header ended early".into()));
        }
        return Ok(pos);
    }
}
