use std::path::Path;

use crate::error::Result;
use crate::io_util::write_atomic;

/// What a render composited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Color,
    /// The per-Gaussian semantic embedding.
    Feature,
    /// Binary prompt channel `i`.
    Mask(usize),
}

/// Row-major `height × width` grid with `stride` values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub channel: Channel,
    pub data: Vec<f64>,
}

impl RenderedImage {
    pub fn zeros(width: usize, height: usize, stride: usize, channel: Channel) -> Self {
        RenderedImage { width, height, stride, channel, data: vec![0.0; width * height * stride] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.stride;
        &self.data[o..o + self.stride]
    }

    /// First component at `(x, y)`; the mask value for mask renders.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.data[(y * self.width + x) * self.stride]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Mean of the first component over all pixels.
    pub fn mean_value(&self) -> f64 {
        self.data.iter().step_by(self.stride).sum::<f64>() / self.pixel_count() as f64
    }

    /// Binary PGM (P5) of the first component.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().step_by(self.stride).map(|&v| quantize(v)));
        out
    }

    /// Binary PPM (P6) of the first three components.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in self.data.chunks(self.stride) {
            for c in 0..3 {
                out.push(quantize(px.get(c).copied().unwrap_or(0.0)));
            }
        }
        out
    }

    /// PGM for masks, PPM otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = match self.channel {
            Channel::Mask(_) => self.to_pgm(),
            _ => self.to_ppm(),
        };
        write_atomic(path.as_ref(), &bytes)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
