//! Label grids.

use crate::error::DataError;
use crate::netpbm::GrayImage;
use crate::vocab::Vocab;
use crate::Result;

/// Per-pixel class ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage { width: self.width, height: self.height, data: self.data.clone() }
    }

    /// Interpret a gray image as a mask, validating every value against
    /// the vocabulary.
    pub fn from_gray(img: GrayImage, vocab: &Vocab) -> Result<Self> {
        if let Some(&bad) = img.data.iter().find(|&&v| v as usize > vocab.len()) {
            return Err(DataError::MaskValueOutOfRange { value: bad, classes: vocab.len() });
        }
        Ok(Self { width: img.width, height: img.height, data: img.data })
    }

    /// Pixel count per mask value, indexed by value.
    pub fn histogram(&self, channels: usize) -> Vec<usize> {
        let mut h = vec![0usize; channels];
        for &v in &self.data {
            if (v as usize) < channels {
                h[v as usize] += 1;
            }
        }
        h
    }
}
