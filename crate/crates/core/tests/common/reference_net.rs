//! A plain f64 re-implementation of the modulated U-Net, written from the
//! architecture description rather than from the library's layer list.

use std::collections::BTreeMap;

use contexp_core::model::{Model, UNetConfig};

/// Parameter name to (shape, values).
pub type Weights = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

pub fn weights_of(model: &Model) -> Weights {
    model
        .params()
        .iter()
        .map(|p| (p.name.clone(), (p.tensor.shape().to_vec(), p.tensor.data().iter().map(|&v| f64::from(v)).collect())))
        .collect()
}

/// A `[C, H, W]` feature map.
#[derive(Clone)]
struct Map {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

fn conv(x: &Map, weight: &[f64], bias: &[f64], cout: usize, k: usize) -> Map {
    let p = (k / 2) as isize;
    let mut v = vec![0.0; cout * x.h * x.w];
    for co in 0..cout {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = bias[co];
                for ci in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - p;
                            let ix = xx as isize + kx as isize - p;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            s += weight[((co * x.c + ci) * k + ky) * k + kx]
                                * x.v[(ci * x.h + iy as usize) * x.w + ix as usize];
                        }
                    }
                }
                v[(co * x.h + y) * x.w + xx] = s;
            }
        }
    }
    Map { c: cout, h: x.h, w: x.w, v }
}

fn leaky(x: Map, slope: f64) -> Map {
    Map { v: x.v.into_iter().map(|a| if a >= 0.0 { a } else { slope * a }).collect(), ..x }
}

fn pool(x: &Map) -> Map {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut v = vec![0.0; x.c * h * w];
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let at = |dy: usize, dx: usize| x.v[(c * x.h + 2 * y + dy) * x.w + 2 * xx + dx];
                v[(c * h + y) * w + xx] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    Map { c: x.c, h, w, v }
}

fn upsample(x: &Map) -> Map {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut v = vec![0.0; x.c * h * w];
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                v[(c * h + y) * w + xx] = x.v[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    Map { c: x.c, h, w, v }
}

fn concat(a: &Map, b: &Map) -> Map {
    let mut v = a.v.clone();
    v.extend_from_slice(&b.v);
    Map { c: a.c + b.c, h: a.h, w: a.w, v }
}

struct Net<'a> {
    w: &'a Weights,
    cfg: UNetConfig,
    modulation: Option<usize>,
    alpha2: f64,
}

impl Net<'_> {
    fn layer(&self, name: &str, x: &Map, act: bool, modulated: bool) -> Map {
        let (shape, weight) = &self.w[&format!("{name}.weight")];
        let (_, bias) = &self.w[&format!("{name}.bias")];
        let mut y = conv(x, weight, bias, shape[0], shape[2]);
        if let (Some(k), true) = (self.modulation, modulated) {
            let (_, mw) = &self.w[&format!("{name}.mod.weight")];
            let (_, mb) = &self.w[&format!("{name}.mod.bias")];
            let c = shape[0];
            let a = self.alpha2;
            let mut eff: Vec<f64> = mw.iter().map(|v| a * v).collect();
            for ch in 0..c {
                eff[((ch * c + ch) * k + k / 2) * k + k / 2] += 1.0 - a;
            }
            let bias: Vec<f64> = mb.iter().map(|v| a * v).collect();
            y = conv(&y, &eff, &bias, c, k);
        }
        if act {
            leaky(y, f64::from(self.cfg.slope))
        } else {
            y
        }
    }
}

/// Output `[3, 2H, 2W]` for a `[4, H, W]` input, not clipped.
pub fn forward(
    weights: &Weights,
    cfg: UNetConfig,
    modulation: Option<usize>,
    input: &[f64],
    h: usize,
    w: usize,
    alpha2: f64,
) -> Vec<f64> {
    let net = Net { w: weights, cfg, modulation, alpha2 };
    let mut x = Map { c: 4, h, w, v: input.to_vec() };
    let mut skips = Vec::new();
    for i in 0..cfg.depth {
        x = net.layer(&format!("enc{i}.conv1"), &x, true, true);
        x = net.layer(&format!("enc{i}.conv2"), &x, true, true);
        skips.push(x.clone());
        x = pool(&x);
    }
    x = net.layer("bottleneck.conv1", &x, true, true);
    x = net.layer("bottleneck.conv2", &x, true, true);
    for i in (0..cfg.depth).rev() {
        x = net.layer(&format!("dec{i}.up"), &upsample(&x), false, true);
        x = concat(&x, &skips[i]);
        x = net.layer(&format!("dec{i}.conv1"), &x, true, true);
        x = net.layer(&format!("dec{i}.conv2"), &x, true, true);
    }
    let y = net.layer("out", &x, false, false);
    // sub-pixel rearrangement: out[c, 2y+dy, 2x+dx] = y[4c + 2dy + dx, y, x]
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; 3 * oh * ow];
    for c in 0..3 {
        for yy in 0..oh {
            for xx in 0..ow {
                let src = 4 * c + 2 * (yy % 2) + xx % 2;
                out[(c * oh + yy) * ow + xx] = y.v[(src * h + yy / 2) * w + xx / 2];
            }
        }
    }
    out
}
