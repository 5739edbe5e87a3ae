//! Independent f64 oracles shared by the integration tests.

#![allow(dead_code)]

pub mod reference_net;

use contexp_core::image::SrgbImage;

/// Direct-formula PSNR in f64 with the 100 dB cap.
pub fn psnr_oracle(a: &SrgbImage, b: &SrgbImage) -> f64 {
    let n = a.data().len() as f64;
    let mut se = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        se += (f64::from(*x) - f64::from(*y)).powi(2);
    }
    if se == 0.0 {
        return 100.0;
    }
    (-10.0 * (se / n).log10()).min(100.0)
}

/// SSIM by explicit 11×11 window sums at every valid position.
pub fn ssim_oracle(a: &SrgbImage, b: &SrgbImage) -> f64 {
    let (w, h) = (a.width(), a.height());
    let luma = |img: &SrgbImage| -> Vec<f64> {
        let (r, g, bl) = (img.plane(0), img.plane(1), img.plane(2));
        (0..w * h).map(|i| 0.299 * f64::from(r[i]) + 0.587 * f64::from(g[i]) + 0.114 * f64::from(bl[i])).collect()
    };
    let (la, lb) = (luma(a), luma(b));
    let mut kernel = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in kernel.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fy, fx) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *v = (-(fx * fx + fy * fy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let k = kernel[dy][dx] / total;
                    let i = (y0 + dy) * w + x0 + dx;
                    ma += k * la[i];
                    mb += k * lb[i];
                    saa += k * la[i] * la[i];
                    sbb += k * lb[i] * lb[i];
                    sab += k * la[i] * lb[i];
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
