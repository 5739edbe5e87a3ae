//! PSNR and SSIM on `[0, 1]` sRGB images.

use crate::error::{Error, Result};
use crate::image::SrgbImage;

/// Reported PSNR for identical images, and the ceiling for all others.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &SrgbImage, b: &SrgbImage) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::Metric(format!(
            "image shapes differ: {:?} vs {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

/// Mean squared error over every channel, accumulated in f64.
pub fn mse(a: &SrgbImage, b: &SrgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` with a peak of 1.0, capped at [`PSNR_CAP`].
pub fn psnr(a: &SrgbImage, b: &SrgbImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * horiz[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of the Rec. 601 luminance planes over every fully covered
/// 11×11 Gaussian window (sigma 1.5, dynamic range 1).
pub fn ssim(a: &SrgbImage, b: &SrgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let la: Vec<f64> = a.luminance().into_iter().map(f64::from).collect();
    let lb: Vec<f64> = b.luminance().into_iter().map(f64::from).collect();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let (mu_a, ow, oh) = filter_valid(&la, w, h, &taps);
    let (mu_b, ..) = filter_valid(&lb, w, h, &taps);
    let (aa, ..) = filter_valid(&prod(&la, &la), w, h, &taps);
    let (bb, ..) = filter_valid(&prod(&lb, &lb), w, h, &taps);
    let (ab, ..) = filter_valid(&prod(&la, &lb), w, h, &taps);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / (ow * oh) as f64)
}
