use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Quantizes real intensities (clamped to `[0, 255]`, rounded).
    pub fn from_f64(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|v| v.clamp(0.0, 255.0).round() as u8)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[x + self.width * y]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    /// Bilinear intensity at a continuous point (pixel centers at integers),
    /// clamped to the border.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        sample_clamped(&self.pixels, self.width, self.height, x, y, |p| p as f64)
    }
}

pub(crate) fn sample_clamped<T: Copy>(
    data: &[T],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
    conv: impl Fn(T) -> f64,
) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| conv(data[xx + width * yy]);
    let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
    let bot = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
    top + (bot - top) * fy
}
