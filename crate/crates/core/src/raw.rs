//! Raw-domain transforms: Bayer packing, black-level subtraction and
//! brightness amplification.

use std::fmt;
use std::str::FromStr;

use contexp_tensor::Tensor;

use crate::error::{Error, Result};

/// Largest brightness ratio the pipeline accepts; larger ratios are truncated.
pub const MAX_BRIGHTNESS_RATIO: f32 = 100.0;

/// Colour filter array layout. Only RGGB is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CfaLayout {
    #[default]
    Rggb,
}

impl FromStr for CfaLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Self::Rggb),
            other => Err(Error::Raw(format!("unsupported CFA layout {other}; only RGGB is accepted"))),
        }
    }
}

impl fmt::Display for CfaLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RGGB")
    }
}

/// Single-channel Bayer mosaic of linear intensities normalised so the white
/// point is 1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    black_level: f32,
    cfa: CfaLayout,
}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>, black_level: f32) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Raw(format!("mosaic dimensions {width}x{height} must be positive and even")));
        }
        if data.len() != width * height {
            return Err(Error::Raw(format!("mosaic has {} values, expected {}", data.len(), width * height)));
        }
        if !(0.0..1.0).contains(&black_level) {
            return Err(Error::Raw(format!("black level {black_level} outside [0, 1)")));
        }
        Ok(Self { width, height, data, black_level, cfa: CfaLayout::Rggb })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn black_level(&self) -> f32 {
        self.black_level
    }

    pub fn cfa(&self) -> CfaLayout {
        self.cfa
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn with_black_level(self, black_level: f32) -> Result<Self> {
        Self::new(self.width, self.height, self.data, black_level)
    }
}

/// Four-channel half-resolution tensor `[1, 4, H/2, W/2]` in R, G1, B, G2
/// order, black level removed.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    tensor: Tensor,
    source_width: usize,
    source_height: usize,
}

/// Packed channel index for each site of an RGGB quad, row-major `(dy, dx)`.
const QUAD_CHANNEL: [[usize; 2]; 2] = [[0, 1], [3, 2]];

impl PackedRaw {
    /// Wraps a `[1, 4, h, w]` tensor.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let [n, c, h, w] = tensor.dims4("PackedRaw")?;
        if n != 1 || c != 4 {
            return Err(Error::Raw(format!("packed raw must have shape [1, 4, h, w], got {:?}", tensor.shape())));
        }
        Ok(Self { tensor, source_width: 2 * w, source_height: 2 * h })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// Packed spatial size `(width, height)`.
    pub fn size(&self) -> (usize, usize) {
        (self.source_width / 2, self.source_height / 2)
    }

    pub fn source_size(&self) -> (usize, usize) {
        (self.source_width, self.source_height)
    }

    /// Channel plane `c` (0 = R, 1 = G1, 2 = B, 3 = G2).
    pub fn channel(&self, c: usize) -> &[f32] {
        let (w, h) = self.size();
        &self.tensor.data()[c * w * h..(c + 1) * w * h]
    }

    /// Centre crop to a `width x height` packed window.
    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        let (w, h) = self.size();
        if width > w || height > h || width == 0 || height == 0 {
            return Err(Error::Raw(format!("crop {width}x{height} exceeds packed size {w}x{h}")));
        }
        Ok(self.crop((w - width) / 2, (h - height) / 2, width, height))
    }

    /// Box-filter downscale by an integer factor; trailing rows and columns
    /// that do not fill a block are dropped.
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        let (w, h) = self.size();
        if factor == 0 || factor > w || factor > h {
            return Err(Error::Raw(format!("cannot downscale packed {w}x{h} by {factor}")));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (ow, oh) = (w / factor, h / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut out = vec![0.0f32; 4 * ow * oh];
        for c in 0..4 {
            let plane = self.channel(c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for y in oy * factor..(oy + 1) * factor {
                        acc += plane[y * w + ox * factor..y * w + (ox + 1) * factor].iter().sum::<f32>();
                    }
                    out[(c * oh + oy) * ow + ox] = acc * norm;
                }
            }
        }
        Self::from_tensor(Tensor::new([1, 4, oh, ow], out)?)
    }

    pub(crate) fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        let (w, h) = self.size();
        let mut out = Vec::with_capacity(4 * width * height);
        for c in 0..4 {
            for y in y0..y0 + height {
                let row = c * w * h + y * w;
                out.extend_from_slice(&self.tensor.data()[row + x0..row + x0 + width]);
            }
        }
        Self {
            tensor: Tensor::new([1, 4, height, width], out).expect("crop shape"),
            source_width: 2 * width,
            source_height: 2 * height,
        }
    }
}

/// Packs an RGGB mosaic into four half-resolution planes, subtracting the
/// black level and clamping at zero.
pub fn pack_bayer(raw: &RawImage) -> PackedRaw {
    let (w, h) = (raw.width / 2, raw.height / 2);
    let black = raw.black_level;
    let mut out = vec![0.0f32; 4 * w * h];
    for y in 0..raw.height {
        for x in 0..raw.width {
            let c = QUAD_CHANNEL[y % 2][x % 2];
            out[c * w * h + (y / 2) * w + x / 2] = (raw.at(x, y) - black).max(0.0);
        }
    }
    PackedRaw {
        tensor: Tensor::new([1, 4, h, w], out).expect("packed shape"),
        source_width: raw.width,
        source_height: raw.height,
    }
}

/// Inverse of [`pack_bayer`]; the result carries a zero black level.
pub fn unpack_bayer(packed: &PackedRaw) -> Result<RawImage> {
    let [_, c, h, w] = packed.tensor.dims4("unpack_bayer")?;
    if c != 4 {
        return Err(Error::Raw(format!("expected 4 packed channels, got {c}")));
    }
    let (width, height) = (2 * w, 2 * h);
    let src = packed.tensor.data();
    let mut data = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let c = QUAD_CHANNEL[y % 2][x % 2];
            data[y * width + x] = src[c * w * h + (y / 2) * w + x / 2];
        }
    }
    RawImage::new(width, height, data, 0.0)
}

/// Multiplies by `min(alpha1, 100)` and clips to `[0, 1]`.
pub fn apply_brightness(packed: &PackedRaw, alpha1: f32) -> Result<PackedRaw> {
    if !(alpha1.is_finite() && alpha1 > 0.0) {
        return Err(Error::Knob(format!("brightness ratio {alpha1} must be positive")));
    }
    let gain = alpha1.min(MAX_BRIGHTNESS_RATIO);
    Ok(PackedRaw {
        tensor: packed.tensor.map(|v| (v * gain).clamp(0.0, 1.0)),
        source_width: packed.source_width,
        source_height: packed.source_height,
    })
}

/// `target / input`, truncated at 100.
pub fn exposure_ratio(input_exposure: f32, target_exposure: f32) -> Result<f32> {
    if !(input_exposure > 0.0 && target_exposure > 0.0) {
        return Err(Error::Config(format!(
            "exposure times must be positive (input {input_exposure}s, target {target_exposure}s)"
        )));
    }
    Ok((target_exposure / input_exposure).min(MAX_BRIGHTNESS_RATIO))
}

/// Allowed range for the enhancement knob.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnobBounds {
    pub alpha2_min: f32,
    pub alpha2_max: f32,
}

impl KnobBounds {
    pub const NOMINAL: Self = Self { alpha2_min: 0.0, alpha2_max: 1.0 };
    pub const EXTRAPOLATE: Self = Self { alpha2_min: -0.5, alpha2_max: 1.5 };

    pub fn new(extrapolate: bool) -> Self {
        if extrapolate {
            Self::EXTRAPOLATE
        } else {
            Self::NOMINAL
        }
    }

    /// Strict validation: `alpha1` must lie in `[1, 100]` and `alpha2` inside
    /// the bounds. Nothing is silently truncated.
    pub fn check(&self, alpha1: f32, alpha2: f32) -> Result<TuningKnobs> {
        if !(1.0..=MAX_BRIGHTNESS_RATIO).contains(&alpha1) {
            return Err(Error::Knob(format!(
                "alpha1 = {alpha1} outside [1, {MAX_BRIGHTNESS_RATIO}] (brightness ratio is truncated at {MAX_BRIGHTNESS_RATIO})"
            )));
        }
        if !(self.alpha2_min..=self.alpha2_max).contains(&alpha2) {
            return Err(Error::Knob(format!("alpha2 = {alpha2} outside [{}, {}]", self.alpha2_min, self.alpha2_max)));
        }
        Ok(TuningKnobs { alpha1, alpha2 })
    }
}

impl Default for KnobBounds {
    fn default() -> Self {
        Self::NOMINAL
    }
}

/// Runtime controls: brightness ratio and enhancement level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuningKnobs {
    pub alpha1: f32,
    pub alpha2: f32,
}

impl TuningKnobs {
    /// Knobs with `alpha1` truncated to 100, as used when deriving the ratio
    /// from exposure times. `alpha2` is not range-checked.
    pub fn truncated(alpha1: f32, alpha2: f32) -> Self {
        Self { alpha1: alpha1.min(MAX_BRIGHTNESS_RATIO), alpha2 }
    }
}
