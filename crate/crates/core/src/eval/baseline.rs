//! Brightness-only rendering: amplify, clip, bilinear demosaic, gamma.

use contexp_tensor::Tensor;

use crate::error::Result;
use crate::image::{gamma_encode, SrgbImage};
use crate::raw::{apply_brightness, unpack_bayer, PackedRaw, RawImage};
use crate::sensor::capture::cfa_color;

/// Bilinear demosaic: each missing colour is the mean of the same-colour
/// sites in the surrounding 3×3 neighbourhood (clipped at the borders).
pub fn demosaic_bilinear(raw: &RawImage) -> Tensor {
    let (w, h) = (raw.width(), raw.height());
    let black = raw.black_level();
    let mut out = vec![0.0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let own = cfa_color(x, y);
            let mut sum = [0.0f32; 3];
            let mut count = [0u32; 3];
            for ny in y.saturating_sub(1)..(y + 2).min(h) {
                for nx in x.saturating_sub(1)..(x + 2).min(w) {
                    let c = cfa_color(nx, ny);
                    sum[c] += (raw.at(nx, ny) - black).max(0.0);
                    count[c] += 1;
                }
            }
            for c in 0..3 {
                out[c * w * h + y * w + x] =
                    if c == own { (raw.at(x, y) - black).max(0.0) } else { sum[c] / count[c] as f32 };
            }
        }
    }
    Tensor::new([3, h, w], out).expect("demosaic shape")
}

/// The no-learning reference: multiply the packed raw by `alpha1`, clip,
/// demosaic bilinearly and gamma encode.
pub fn brightness_only_baseline(packed: &PackedRaw, alpha1: f32) -> Result<SrgbImage> {
    let amplified = apply_brightness(packed, alpha1)?;
    let mosaic = unpack_bayer(&amplified)?;
    SrgbImage::new(demosaic_bilinear(&mosaic).map(gamma_encode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::pack_bayer;

    #[test]
    fn flat_mosaic_demosaics_to_flat_planes() {
        let raw = RawImage::new(6, 4, vec![0.25; 24], 0.0).unwrap();
        assert!(demosaic_bilinear(&raw).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn unit_gain_on_bright_image_is_plain_demosaic() {
        let raw = RawImage::new(4, 4, (0..16).map(|i| 0.2 + 0.03 * i as f32).collect(), 0.0).unwrap();
        let out = brightness_only_baseline(&pack_bayer(&raw), 1.0).unwrap();
        let expected = demosaic_bilinear(&raw).map(gamma_encode);
        assert_eq!(out.tensor(), &expected);
    }
}
