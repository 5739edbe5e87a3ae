//! Kernels checked against independent oracles: loop-nest convolution,
//! index-formula rearrangement and central finite differences.

use contexp_tensor::gradcheck::{central_difference, compare};
use contexp_tensor::{ops, Graph, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f32 = 1e-3;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0f32..1.0))
}

/// Values bounded away from zero so no perturbation crosses a kink.
fn random_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1f32..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Straight seven-loop cross-correlation in f64.
fn loop_nest_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let [n, cin, h, wd] = x.dims4("oracle").unwrap();
    let [cout, _, kh, kw] = w.dims4("oracle").unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = f64::from(b.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn max_diff(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(&x, &y)| (f64::from(x) - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_matches_loop_nest_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[1, 2, 5, 5], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let oracle = loop_nest_conv(&x, &w, &b, 1, 1);
    assert!(max_diff(&ops::conv2d(&x, &w, &b, 1, 1).unwrap(), &oracle) <= 1e-5);
    assert!(max_diff(&ops::conv2d_direct(&x, &w, &b, 1, 1).unwrap(), &oracle) <= 1e-5);
}

#[test]
fn conv_matches_oracle_for_model_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Every (kernel, stride, padding) the network uses: "same" 1/3/5/7 convs.
    for k in [1usize, 3, 5, 7] {
        let x = random(&[2, 3, 8, 12], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let b = random(&[4], &mut rng);
        let got = ops::conv2d(&x, &w, &b, 1, (k - 1) / 2).unwrap();
        assert!(max_diff(&got, &loop_nest_conv(&x, &w, &b, 1, (k - 1) / 2)) <= 1e-5, "k={k}");
    }
    let x = random(&[1, 2, 9, 9], &mut rng);
    let w = random(&[2, 2, 3, 3], &mut rng);
    let b = random(&[2], &mut rng);
    let got = ops::conv2d(&x, &w, &b, 2, 1).unwrap();
    assert!(max_diff(&got, &loop_nest_conv(&x, &w, &b, 2, 1)) <= 1e-5);
}

#[test]
fn depth_to_space_matches_index_formula() {
    let x = Tensor::from_fn([2, 12, 3, 4], |i| i as f32);
    let y = ops::depth_to_space(&x, 2).unwrap();
    let [n, c, h, w] = [2usize, 3, 3, 4];
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let out = y.data()[((ni * c + ci) * 2 * h + 2 * yy + dy) * 2 * w + 2 * xx + dx];
                            let inp = x.data()[((ni * 12 + ci * 4 + dy * 2 + dx) * h + yy) * w + xx];
                            assert_eq!(out, inp);
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn depth_to_space_is_a_bijection(
        n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[n, 4 * c, h, w], &mut rng);
        let y = ops::depth_to_space(&x, 2).unwrap();
        prop_assert_eq!(y.shape(), &[n, c, 2 * h, 2 * w][..]);
        prop_assert_eq!(ops::space_to_depth(&y, 2).unwrap(), x);
    }

    #[test]
    fn ops_never_mutate_inputs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 4, 4, 4], &mut rng);
        let w = random(&[4, 4, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let (x0, w0, b0) = (x.clone(), w.clone(), b.clone());
        let _ = ops::conv2d(&x, &w, &b, 1, 1).unwrap();
        let _ = ops::leaky_relu(&x, 0.2).unwrap();
        let _ = ops::max_pool2(&x).unwrap();
        let _ = ops::depth_to_space(&x, 2).unwrap();
        let _ = ops::blend_with_identity(&w, 0.3).unwrap();
        prop_assert_eq!(x, x0);
        prop_assert_eq!(w, w0);
        prop_assert_eq!(b, b0);
    }
}

/// Builds `sum(r * op(x))` on a tape and checks d/dx against finite differences
/// of the eager forward.
fn check_unary(
    x: &Tensor,
    op: impl Fn(&mut Tape, &contexp_tensor::Var) -> contexp_tensor::Var,
    eager: impl Fn(&Tensor) -> Tensor,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = eager(x);
    let r = random(probe.shape(), &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = op(&mut tape, &xv);
    let s = tape.weighted_sum(y, &r).unwrap();
    let analytic = tape.backward(s).unwrap().get(xv).unwrap().clone();
    let numeric = central_difference(
        |t| eager(t).data().iter().zip(r.data()).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum(),
        x,
        H,
    );
    let report = compare(&analytic, &numeric, FLOOR);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn leaky_relu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_away_from_zero(&[1, 2, 4, 4], &mut rng);
    check_unary(&x, |t, v| t.leaky_relu(v, 0.2).unwrap(), |x| ops::leaky_relu(x, 0.2).unwrap(), 1);
}

#[test]
fn pool_and_upsample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Distinct values spaced far beyond 2h, so the argmax never flips.
    let mut vals: Vec<f32> = (0..32).map(|i| i as f32 * 0.05).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new([1, 2, 4, 4], vals).unwrap();
    check_unary(&x, |t, v| t.max_pool2(v).unwrap(), |x| ops::max_pool2(x).unwrap().0, 2);
    check_unary(&x, |t, v| t.upsample2(v).unwrap(), |x| ops::upsample2(x).unwrap(), 3);
    let x12 = random(&[1, 12, 2, 3], &mut rng);
    check_unary(&x12, |t, v| t.depth_to_space(v, 2).unwrap(), |x| ops::depth_to_space(x, 2).unwrap(), 4);
}

#[test]
fn blend_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let w = random(&[3, 3, 3, 3], &mut rng);
    check_unary(&w, |t, v| t.blend_with_identity(v, 0.37).unwrap(), |w| ops::blend_with_identity(w, 0.37).unwrap(), 5);
}

#[test]
fn conv_gradients_match_finite_differences() {
    for (seed, stride, pad, k) in [(21u64, 1usize, 1usize, 3usize), (22, 1, 0, 1), (23, 2, 1, 3), (24, 1, 2, 5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 2, 5, 6], &mut rng);
        let w = random(&[3, 2, k, k], &mut rng);
        let b = random(&[3], &mut rng);
        let out_shape = ops::conv2d(&x, &w, &b, stride, pad).unwrap().shape().to_vec();
        let r = random(&out_shape, &mut rng);

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let wv = tape.leaf(w.clone(), true);
        let bv = tape.leaf(b.clone(), true);
        let y = tape.conv2d(&xv, &wv, &bv, stride, pad).unwrap();
        let s = tape.weighted_sum(y, &r).unwrap();
        let grads = tape.backward(s).unwrap();

        // Differences of the f64 loop-nest oracle, not of the f32 kernel.
        let project = |o: Vec<f64>| -> f64 { o.iter().zip(r.data()).map(|(&a, &b)| a * f64::from(b)).sum() };
        let num_x = central_difference(|t| project(loop_nest_conv(t, &w, &b, stride, pad)), &x, H);
        let num_w = central_difference(|t| project(loop_nest_conv(&x, t, &b, stride, pad)), &w, H);
        let num_b = central_difference(|t| project(loop_nest_conv(&x, &w, t, stride, pad)), &b, H);
        for (name, v, num) in [("input", xv, num_x), ("kernel", wv, num_w), ("bias", bv, num_b)] {
            let report = compare(grads.get(v).unwrap(), &num, FLOOR);
            assert!(report.passes(TOL), "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn l1_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let target = random(&[1, 3, 4, 4], &mut rng);
    let offsets = random_away_from_zero(&[1, 3, 4, 4], &mut rng);
    let pred = Tensor::from_fn([1, 3, 4, 4], |i| target.data()[i] + offsets.data()[i]);
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone(), true);
    let t = tape.input(target.clone());
    let loss = tape.l1_loss(p, t).unwrap();
    let analytic = tape.backward(loss).unwrap().get(p).unwrap().clone();
    let numeric = central_difference(
        |x| {
            let sum: f64 = x.data().iter().zip(target.data()).map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs()).sum();
            sum / x.numel() as f64
        },
        &pred,
        H,
    );
    let report = compare(&analytic, &numeric, FLOOR);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn concat_gradient_splits() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let a = random(&[1, 2, 3, 3], &mut rng);
    let b = random(&[1, 1, 3, 3], &mut rng);
    let r = random(&[1, 3, 3, 3], &mut rng);
    let mut tape = Tape::new();
    let av = tape.leaf(a.clone(), true);
    let bv = tape.leaf(b.clone(), true);
    let c = tape.concat_channels(&[&av, &bv]).unwrap();
    let s = tape.weighted_sum(c, &r).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(av).unwrap().data(), &r.data()[..18]);
    assert_eq!(g.get(bv).unwrap().data(), &r.data()[18..]);
}
