mod common;

use common::{psnr_oracle, ssim_oracle};
use contexp_core::eval::{brightness_only_baseline, psnr, ssim};
use contexp_core::image::SrgbImage;
use contexp_core::raw::pack_bayer;
use contexp_core::sensor::capture::{expose, mosaic, render_reference_at};
use contexp_core::sensor::scene::{generate_scene, SceneStyle};
use contexp_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(w: usize, h: usize, seed: u64) -> SrgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SrgbImage::new(Tensor::from_fn([3, h, w], |_| rng.random_range(0.0f32..1.0))).unwrap()
}

fn blend(a: &SrgbImage, b: &SrgbImage, t: f32) -> SrgbImage {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
    SrgbImage::new(Tensor::new(a.tensor().shape().to_vec(), data).unwrap()).unwrap()
}

#[test]
fn psnr_matches_direct_formula() {
    for seed in 0..5 {
        let a = random_image(17, 13, seed);
        let b = blend(&a, &random_image(17, 13, seed + 100), 0.2);
        assert!((psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs() <= 1e-9);
    }
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    for seed in 0..4 {
        let a = random_image(24, 19, seed);
        let b = blend(&a, &random_image(24, 19, seed + 50), 0.3);
        let (got, want) = (ssim(&a, &b).unwrap(), ssim_oracle(&a, &b));
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in any::<u64>(), t in 0.0f32..1.0) {
        let a = random_image(12, 12, seed);
        let b = blend(&a, &random_image(12, 12, seed ^ 1), t);
        let (p1, p2) = (psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(p1, p2);
        prop_assert!((0.0..=100.0).contains(&p1));
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s1));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn baseline_on_noiseless_input_tracks_the_reference() {
    let scene = generate_scene(12, 64, 64, SceneStyle::Indoor).unwrap();
    let short = expose(&mosaic(&scene), 0.1, 10.0).unwrap();
    let out = brightness_only_baseline(&pack_bayer(&short), 100.0).unwrap();
    let reference = render_reference_at(&scene, 10.0, 10.0).unwrap();
    let p = psnr(&out, &reference).unwrap();
    // only demosaicing error remains
    assert!(p > 20.0, "noiseless baseline PSNR {p}");
}
