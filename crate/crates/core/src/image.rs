use std::io::Cursor;
use std::path::Path;

use contexp_tensor::Tensor;

use crate::error::{Error, Result};

/// Gamma used by the reference rendering and the brightness-only baseline.
pub const DISPLAY_GAMMA: f32 = 2.2;

/// Planar RGB image, values nominally in `[0, 1]`, stored as `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SrgbImage {
    tensor: Tensor,
}

impl SrgbImage {
    pub fn new(tensor: Tensor) -> Result<Self> {
        match *tensor.shape() {
            [3, h, w] if h > 0 && w > 0 => Ok(Self { tensor }),
            [1, 3, h, w] if h > 0 && w > 0 => Ok(Self { tensor: tensor.reshape([3, h, w])? }),
            _ => Err(Error::Config(format!("expected a [3, H, W] image, got {:?}", tensor.shape()))),
        }
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width() * self.height();
        &self.tensor.data()[c * n..(c + 1) * n]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Vec<f32> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter().zip(g).zip(b).map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b).collect()
    }

    pub fn mean(&self) -> f64 {
        self.data().iter().map(|&v| f64::from(v)).sum::<f64>() / self.data().len() as f64
    }

    pub fn clamped(&self) -> Self {
        Self { tensor: self.tensor.map(|v| v.clamp(0.0, 1.0)) }
    }

    /// Window `[x0, x0 + width) x [y0, y0 + height)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width() || y0 + height > self.height() {
            return Err(Error::Config(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds image {}x{}",
                self.width(),
                self.height()
            )));
        }
        let (w, h) = (self.width(), self.height());
        let mut out = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in y0..y0 + height {
                let row = c * w * h + y * w;
                out.extend_from_slice(&self.data()[row + x0..row + x0 + width]);
            }
        }
        Self::new(Tensor::new([3, height, width], out)?)
    }

    /// Box-filter downscale by an integer factor.
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width() % factor != 0 || self.height() % factor != 0 {
            return Err(Error::Config(format!("cannot downscale {}x{} by {factor}", self.width(), self.height())));
        }
        let (w, h) = (self.width(), self.height());
        let (ow, oh) = (w / factor, h / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut out = vec![0.0f32; 3 * ow * oh];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[c * ow * oh + (y / factor) * ow + x / factor] += self.data()[c * w * h + y * w + x] * norm;
                }
            }
        }
        Self::new(Tensor::new([3, oh, ow], out)?)
    }

    /// 8-bit interleaved RGB, rounding to nearest after clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width() * self.height();
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push((self.data()[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width() as u32, self.height() as u32, self.to_rgb8())
            .ok_or_else(|| Error::Config("image buffer size mismatch".into()))?;
        let mut bytes = Vec::new();
        buf.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
            .map_err(|e| Error::Config(format!("PNG encoding failed: {e}")))?;
        Ok(bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Power-law display encoding `v^(1/2.2)` on a value clamped to `[0, 1]`.
pub fn gamma_encode(v: f32) -> f32 {
    v.clamp(0.0, 1.0).powf(1.0 / DISPLAY_GAMMA)
}
