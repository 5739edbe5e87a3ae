//! Procedural clean scenes standing in for long-exposure captures.

use std::f32::consts::PI;
use std::fmt;
use std::str::FromStr;

use contexp_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneStyle {
    Indoor,
    Outdoor,
}

/// Knobs that distinguish the two scene styles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleParams {
    /// Per-channel multiplier on the background ramp.
    pub tint: [f32; 3],
    /// Exponent applied to the background ramp; larger is darker on average.
    pub ramp_gamma: f32,
    pub shape_count: usize,
    pub light_count: usize,
    pub texture_amplitude: f32,
}

impl SceneStyle {
    pub const ALL: [SceneStyle; 2] = [SceneStyle::Indoor, SceneStyle::Outdoor];

    /// Indoor scenes are warm and lit by indirect light (brighter ramp, one
    /// lamp); outdoor scenes are cool night scenes with a darker ramp and
    /// several point lights.
    pub fn params(self) -> StyleParams {
        match self {
            SceneStyle::Indoor => StyleParams {
                tint: [1.0, 0.9, 0.75],
                ramp_gamma: 0.8,
                shape_count: 8,
                light_count: 1,
                texture_amplitude: 0.15,
            },
            SceneStyle::Outdoor => StyleParams {
                tint: [0.8, 0.9, 1.0],
                ramp_gamma: 1.8,
                shape_count: 6,
                light_count: 3,
                texture_amplitude: 0.1,
            },
        }
    }
}

impl fmt::Display for SceneStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneStyle::Indoor => "indoor",
            SceneStyle::Outdoor => "outdoor",
        })
    }
}

impl FromStr for SceneStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(Self::Indoor),
            "outdoor" => Ok(Self::Outdoor),
            other => Err(Error::Config(format!("unknown scene style `{other}`"))),
        }
    }
}

/// Linear radiance `[3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanScene {
    pub radiance: Tensor,
    pub seed: u64,
    pub style: SceneStyle,
}

impl CleanScene {
    pub fn width(&self) -> usize {
        self.radiance.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.radiance.shape()[1]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width() * self.height();
        &self.radiance.data()[c * n..(c + 1) * n]
    }
}

enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (cx, cy) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (sx, sy) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
        if rng.random_bool(0.5) {
            Shape::Rect { x0: cx - sx, y0: cy - sy, x1: cx + sx, y1: cy + sy }
        } else {
            Shape::Ellipse { cx, cy, rx: sx, ry: sy }
        }
    }

    fn contains(&self, u: f32, v: f32) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&u) && (y0..y1).contains(&v),
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((u - cx) / rx, (v - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

/// Generates a deterministic scene: a tinted background ramp across the full
/// range, flat-coloured shapes, band-limited sinusoidal texture, one deep
/// shadow region and a few saturated point lights.
pub fn generate_scene(seed: u64, width: usize, height: usize, style: SceneStyle) -> Result<CleanScene> {
    if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
        return Err(Error::Config(format!("scene size {width}x{height} must be positive and even")));
    }
    let params = style.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let angle = rng.random_range(0.0..2.0 * PI);
    let (dir_x, dir_y) = (angle.cos(), angle.sin());
    let corners = [(0.0f32, 0.0f32), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
    let proj: Vec<f32> = corners.iter().map(|(u, v)| u * dir_x + v * dir_y).collect();
    let lo = proj.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = proj.iter().cloned().fold(f32::NEG_INFINITY, f32::max);

    let shapes: Vec<(Shape, [f32; 3])> = (0..params.shape_count)
        .map(|_| {
            let shape = Shape::random(&mut rng);
            let level = rng.random_range(0.0f32..1.0);
            let color = [0, 1, 2].map(|c| (level * rng.random_range(0.6..1.0) * params.tint[c]).min(1.0));
            (shape, color)
        })
        .collect();
    let waves: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.random_range(2.0..12.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                rng.random_range(2.0..12.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let shadow = Shape::Ellipse {
        cx: rng.random_range(0.2..0.8),
        cy: rng.random_range(0.2..0.8),
        rx: rng.random_range(0.1..0.25),
        ry: rng.random_range(0.1..0.25),
    };
    let lights: Vec<(f32, f32, f32)> = (0..params.light_count)
        .map(|_| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.015..0.04)))
        .collect();

    let n = width * height;
    let mut data = vec![0.0f32; 3 * n];
    for y in 0..height {
        let v = (y as f32 + 0.5) / height as f32;
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let t = ((u * dir_x + v * dir_y - lo) / (hi - lo)).clamp(0.0, 1.0);
            let ramp = t.powf(params.ramp_gamma);
            let mut rgb = params.tint.map(|k| k * ramp);
            for (shape, color) in &shapes {
                if shape.contains(u, v) {
                    rgb = *color;
                }
            }
            let texture: f32 =
                waves.iter().map(|&(fx, fy, phase)| (2.0 * PI * (fx * u + fy * v) + phase).sin()).sum::<f32>()
                    / waves.len() as f32;
            let modulation = 1.0 + params.texture_amplitude * texture;
            let shade = if shadow.contains(u, v) { 0.03 } else { 1.0 };
            let glow: f32 = lights
                .iter()
                .map(|&(lx, ly, r)| {
                    let d2 = (u - lx).powi(2) + (v - ly).powi(2);
                    (-d2 / (2.0 * r * r)).exp() * 1.5
                })
                .sum();
            for c in 0..3 {
                data[c * n + y * width + x] = (rgb[c] * modulation * shade + glow).clamp(0.0, 1.0);
            }
        }
    }
    Ok(CleanScene { radiance: Tensor::new([3, height, width], data)?, seed, style })
}
