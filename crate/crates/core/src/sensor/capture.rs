//! Noise-free capture: mosaicing, exposure scaling and the reference rendering.

use contexp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::image::{gamma_encode, SrgbImage};
use crate::raw::RawImage;
use crate::sensor::scene::CleanScene;

/// Colour plane sampled at mosaic site `(x, y)` for RGGB.
pub fn cfa_color(x: usize, y: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

/// Samples the scene through an RGGB filter: each site takes its colour
/// plane's value at the same pixel. The result is the expected signal before
/// exposure scaling and noise.
pub fn mosaic(scene: &CleanScene) -> RawImage {
    let (w, h) = (scene.width(), scene.height());
    let data = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            scene.plane(cfa_color(x, y))[i]
        })
        .collect();
    RawImage::new(w, h, data, 0.0).expect("scene dimensions are even")
}

/// Scales the signal by `exposure / reference` and clips at full well (1.0).
pub fn expose(signal: &RawImage, exposure: f32, reference: f32) -> Result<RawImage> {
    if !(exposure > 0.0 && reference > 0.0) {
        return Err(Error::Config(format!(
            "exposure times must be positive (got {exposure}s with reference {reference}s)"
        )));
    }
    let gain = exposure / reference;
    let black = signal.black_level();
    Ok(signal.map(|v| (black + (v - black) * gain).min(1.0)))
}

/// Reference rendering of the clean radiance: gamma 1/2.2.
pub fn render_reference_srgb(scene: &CleanScene) -> SrgbImage {
    SrgbImage::new(scene.radiance.map(gamma_encode)).expect("scene is [3, H, W]")
}

/// Reference rendering of the scene as captured at `exposure` seconds, with
/// radiance 1.0 reaching full well at `reference` seconds.
pub fn render_reference_at(scene: &CleanScene, exposure: f32, reference: f32) -> Result<SrgbImage> {
    if !(exposure > 0.0 && reference > 0.0) {
        return Err(Error::Config("exposure times must be positive".into()));
    }
    let gain = exposure / reference;
    let t: Tensor = scene.radiance.map(|v| gamma_encode((v * gain).min(1.0)));
    SrgbImage::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::scene::SceneStyle;

    fn flat_scene(rgb: [f32; 3]) -> CleanScene {
        CleanScene { radiance: Tensor::from_fn([3, 4, 4], |i| rgb[i / 16]), seed: 0, style: SceneStyle::Indoor }
    }

    #[test]
    fn gray_and_red_scenes() {
        assert!(mosaic(&flat_scene([0.3; 3])).data().iter().all(|&v| v == 0.3));
        let red = mosaic(&flat_scene([0.8, 0.0, 0.0]));
        for y in 0..4 {
            for x in 0..4 {
                let expected = if x % 2 == 0 && y % 2 == 0 { 0.8 } else { 0.0 };
                assert_eq!(red.at(x, y), expected);
            }
        }
    }

    #[test]
    fn exposure_scaling_and_saturation() {
        let raw = RawImage::new(2, 2, vec![0.5, 0.9, 0.1, 0.0], 0.0).unwrap();
        assert_eq!(expose(&raw, 1.0, 1.0).unwrap(), raw);
        let short = expose(&raw, 0.1, 10.0).unwrap();
        assert!((short.at(0, 0) - 0.005).abs() < 1e-8);
        let bright = expose(&raw, 5.0, 1.0).unwrap();
        assert_eq!(bright.at(1, 0), 1.0);
    }

    #[test]
    fn reference_rendering() {
        let s = flat_scene([0.0, 0.5, 1.0]);
        let r = render_reference_srgb(&s);
        assert_eq!(r.plane(0)[0], 0.0);
        assert!((r.plane(1)[0] - 0.7297).abs() < 1e-4);
        assert_eq!(r.plane(2)[0], 1.0);
        assert_eq!(render_reference_at(&s, 10.0, 10.0).unwrap(), r);
    }
}
