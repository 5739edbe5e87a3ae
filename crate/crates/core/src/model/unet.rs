//! U-Net layout, parameter store and the forward pass shared by training and
//! inference.

use std::collections::BTreeMap;

use contexp_tensor::ops::identity_kernel;
use contexp_tensor::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output channels of the final projection: 3 colours × 2×2 sub-pixels.
pub const OUT_CHANNELS: usize = 12;
pub const IN_CHANNELS: usize = 4;
pub const MODULATION_SIZES: [usize; 4] = [1, 3, 5, 7];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Encoder levels; inputs must be divisible by `2^depth`.
    pub depth: usize,
    pub base_channels: usize,
    pub slope: f32,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 8, slope: 0.2 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config(format!("activation slope {} outside [0, 1)", self.slope)));
        }
        Ok(())
    }

    /// Channels at encoder level `level` (the bottleneck is level `depth`).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial multiple every packed input extent must be divisible by.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }
}

/// One convolution of the network, in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// LeakyReLU after the (modulated) convolution.
    pub activation: bool,
    /// Receives a modulation layer when modulation is inserted.
    pub modulated: bool,
}

fn spec(name: String, cin: usize, cout: usize, k: usize, activation: bool) -> ConvSpec {
    ConvSpec { name, cin, cout, k, activation, modulated: true }
}

/// Every convolution of the network in execution order.
pub fn conv_specs(cfg: &UNetConfig) -> Vec<ConvSpec> {
    let mut v = Vec::new();
    let mut cin = IN_CHANNELS;
    for i in 0..cfg.depth {
        let c = cfg.channels(i);
        v.push(spec(format!("enc{i}.conv1"), cin, c, 3, true));
        v.push(spec(format!("enc{i}.conv2"), c, c, 3, true));
        cin = c;
    }
    let cb = cfg.channels(cfg.depth);
    v.push(spec("bottleneck.conv1".into(), cin, cb, 3, true));
    v.push(spec("bottleneck.conv2".into(), cb, cb, 3, true));
    for i in (0..cfg.depth).rev() {
        let c = cfg.channels(i);
        v.push(spec(format!("dec{i}.up"), cfg.channels(i + 1), c, 3, false));
        v.push(spec(format!("dec{i}.conv1"), 2 * c, c, 3, true));
        v.push(spec(format!("dec{i}.conv2"), c, c, 3, true));
    }
    v.push(ConvSpec {
        name: "out".into(),
        cin: cfg.channels(0),
        cout: OUT_CHANNELS,
        k: 1,
        activation: false,
        modulated: false,
    });
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

/// A trained `(alpha1, alpha2)` pair and the target exposure it was fit to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub alpha1: f32,
    pub alpha2: f32,
    pub exposure: f32,
}

/// Base U-Net weights plus optional modulation layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: UNetConfig,
    /// Modulation kernel size, once inserted.
    pub modulation: Option<usize>,
    pub anchors: Vec<Anchor>,
    /// Free-form training provenance (schedule, seeds, dataset hash).
    pub provenance: BTreeMap<String, String>,
    params: Vec<Param>,
}

pub fn weight_name(conv: &str) -> String {
    format!("{conv}.weight")
}

pub fn bias_name(conv: &str) -> String {
    format!("{conv}.bias")
}

pub fn mod_weight_name(conv: &str) -> String {
    format!("{conv}.mod.weight")
}

pub fn mod_bias_name(conv: &str) -> String {
    format!("{conv}.mod.bias")
}

/// He-normal initialisation for every convolution, zero biases.
pub fn build_unet(config: UNetConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for s in conv_specs(&config) {
        let fan_in = (s.cin * s.k * s.k) as f32;
        let gain = if s.activation { 2.0 / (1.0 + config.slope * config.slope) } else { 1.0 };
        let normal = Normal::new(0.0f32, (gain / fan_in).sqrt()).expect("positive std");
        let n = s.cout * s.cin * s.k * s.k;
        let w: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        params.push(Param {
            name: weight_name(&s.name),
            tensor: Tensor::new([s.cout, s.cin, s.k, s.k], w)?,
            frozen: false,
        });
        params.push(Param { name: bias_name(&s.name), tensor: Tensor::zeros([s.cout]), frozen: false });
    }
    Ok(Model { config, modulation: None, anchors: Vec::new(), provenance: BTreeMap::new(), params })
}

impl Model {
    /// Reassembles a model from stored parts; used by checkpoint loading.
    pub fn from_parts(
        config: UNetConfig,
        modulation: Option<usize>,
        anchors: Vec<Anchor>,
        provenance: BTreeMap<String, String>,
        params: Vec<Param>,
    ) -> Result<Self> {
        config.validate()?;
        let model = Self { config, modulation, anchors, provenance, params };
        model.check_layout()?;
        Ok(model)
    }

    /// Verifies that the stored parameters are exactly the ones the layout needs.
    fn check_layout(&self) -> Result<()> {
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        for s in conv_specs(&self.config) {
            expected.push((weight_name(&s.name), vec![s.cout, s.cin, s.k, s.k]));
            expected.push((bias_name(&s.name), vec![s.cout]));
        }
        if let Some(k) = self.modulation {
            for s in conv_specs(&self.config).iter().filter(|s| s.modulated) {
                expected.push((mod_weight_name(&s.name), vec![s.cout, s.cout, k, k]));
                expected.push((mod_bias_name(&s.name), vec![s.cout]));
            }
        }
        if expected.len() != self.params.len() {
            return Err(Error::Model(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&self.params) {
            if &p.name != name || p.tensor.shape() != shape.as_slice() {
                return Err(Error::Model(format!(
                    "parameter `{}` {:?} does not match layout entry `{name}` {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        self.params.iter().find(|p| p.name == name).ok_or_else(|| Error::Model(format!("no parameter named `{name}`")))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Model(format!("no parameter named `{name}`")))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn is_modulation_param(name: &str) -> bool {
        name.contains(".mod.")
    }

    /// Freezes or unfreezes every parameter (base and modulation alike).
    pub fn set_all_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    /// SHA-256 over the names and bytes of every base (non-modulation) tensor.
    pub fn base_checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| !Self::is_modulation_param(&p.name)) {
            h.update(p.name.as_bytes());
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Adds a `C×C×k×k` modulation layer after every internal convolution,
    /// initialised to the identity kernel and zero bias, and freezes the base.
    pub fn insert_modulation(&mut self, filter_size: usize) -> Result<()> {
        if self.modulation.is_some() {
            return Err(Error::Model("modulation layers are already present".into()));
        }
        if !MODULATION_SIZES.contains(&filter_size) {
            return Err(Error::Model(format!("modulation filter size {filter_size} not supported (use 1, 3, 5 or 7)")));
        }
        for p in &mut self.params {
            p.frozen = true;
        }
        for s in conv_specs(&self.config).iter().filter(|s| s.modulated) {
            self.params.push(Param {
                name: mod_weight_name(&s.name),
                tensor: identity_kernel(s.cout, filter_size)?,
                frozen: false,
            });
            self.params.push(Param { name: mod_bias_name(&s.name), tensor: Tensor::zeros([s.cout]), frozen: false });
        }
        self.modulation = Some(filter_size);
        Ok(())
    }

    /// Copy of the model with modulation layers removed: the frozen base.
    pub fn base(&self) -> Model {
        let mut m = self.clone();
        m.params.retain(|p| !Self::is_modulation_param(&p.name));
        for p in &mut m.params {
            p.frozen = false;
        }
        m.modulation = None;
        m
    }

    fn tensor(&self, name: &str) -> &Tensor {
        &self.param(name).expect("layout checked at construction").tensor
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.param(name).map(|p| p.frozen).unwrap_or(true)
    }
}

/// Effective modulation kernel and bias at `alpha2`:
/// `(alpha2 * w + (1 - alpha2) * I, alpha2 * b)`.
pub fn modulate_weights(w: &Tensor, b: &Tensor, alpha2: f32) -> Result<(Tensor, Tensor)> {
    Ok((contexp_tensor::ops::blend_with_identity(w, alpha2)?, contexp_tensor::ops::scale(b, alpha2)))
}

fn conv_block<G: Graph>(g: &mut G, model: &Model, s: &ConvSpec, x: &G::Value, alpha2: f32) -> Result<G::Value> {
    let (wn, bn) = (weight_name(&s.name), bias_name(&s.name));
    let w = g.param(&wn, model.tensor(&wn), !model.is_frozen(&wn));
    let b = g.param(&bn, model.tensor(&bn), !model.is_frozen(&bn));
    let mut y = g.conv2d(x, &w, &b, 1, s.k / 2)?;
    if let (Some(k), true) = (model.modulation, s.modulated) {
        let (mwn, mbn) = (mod_weight_name(&s.name), mod_bias_name(&s.name));
        let mw = g.param(&mwn, model.tensor(&mwn), !model.is_frozen(&mwn));
        let mb = g.param(&mbn, model.tensor(&mbn), !model.is_frozen(&mbn));
        let mw = g.blend_with_identity(&mw, alpha2)?;
        let mb = g.scale(&mb, alpha2)?;
        y = g.conv2d(&y, &mw, &mb, 1, k / 2)?;
    }
    if s.activation {
        y = g.leaky_relu(&y, model.config.slope)?;
    }
    Ok(y)
}

/// Checks that a packed input of `width × height` fits the network.
pub fn check_input_size(cfg: &UNetConfig, width: usize, height: usize) -> Result<()> {
    let m = cfg.multiple();
    if width % m != 0 || height % m != 0 || width == 0 || height == 0 {
        let need = |v: usize| v.div_ceil(m).max(1) * m;
        return Err(Error::Indivisible {
            width,
            height,
            multiple: m,
            pad_width: need(width),
            pad_height: need(height),
        });
    }
    Ok(())
}

/// Runs the network up to the 12-channel projection. `x` is `[N, 4, h, w]`
/// with `h` and `w` divisible by `2^depth`.
pub fn forward_features<G: Graph>(g: &mut G, model: &Model, x: &G::Value, alpha2: f32) -> Result<G::Value> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != IN_CHANNELS {
        return Err(Error::Model(format!("expected a [N, 4, H, W] input, got {shape:?}")));
    }
    check_input_size(&model.config, shape[3], shape[2])?;
    let specs = conv_specs(&model.config);
    let mut it = specs.iter();
    let mut next = || it.next().expect("layout covers every stage");
    let mut skips = Vec::with_capacity(model.config.depth);
    let mut y = x.clone();
    for _ in 0..model.config.depth {
        y = conv_block(g, model, next(), &y, alpha2)?;
        y = conv_block(g, model, next(), &y, alpha2)?;
        skips.push(y.clone());
        y = g.max_pool2(&y)?;
    }
    y = conv_block(g, model, next(), &y, alpha2)?;
    y = conv_block(g, model, next(), &y, alpha2)?;
    for skip in skips.iter().rev() {
        y = g.upsample2(&y)?;
        y = conv_block(g, model, next(), &y, alpha2)?;
        y = g.concat_channels(&[&y, skip])?;
        y = conv_block(g, model, next(), &y, alpha2)?;
        y = conv_block(g, model, next(), &y, alpha2)?;
    }
    conv_block(g, model, next(), &y, alpha2)
}

/// Full network output `[N, 3, 2h, 2w]`, not clipped.
pub fn forward_graph<G: Graph>(g: &mut G, model: &Model, x: &G::Value, alpha2: f32) -> Result<G::Value> {
    let y = forward_features(g, model, x, alpha2)?;
    Ok(g.depth_to_space(&y, 2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use contexp_tensor::Eager;

    #[test]
    fn layout_names_and_order() {
        let cfg = UNetConfig { depth: 2, base_channels: 4, slope: 0.2 };
        let names: Vec<String> = conv_specs(&cfg).into_iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            [
                "enc0.conv1",
                "enc0.conv2",
                "enc1.conv1",
                "enc1.conv2",
                "bottleneck.conv1",
                "bottleneck.conv2",
                "dec1.up",
                "dec1.conv1",
                "dec1.conv2",
                "dec0.up",
                "dec0.conv1",
                "dec0.conv2",
                "out"
            ]
        );
    }

    #[test]
    fn output_shapes() {
        let model = build_unet(UNetConfig { depth: 2, base_channels: 4, slope: 0.2 }, 1).unwrap();
        let x = Tensor::full([1, 4, 32, 32], 0.1);
        let f = forward_features(&mut Eager, &model, &x, 0.0).unwrap();
        assert_eq!(f.shape(), &[1, 12, 32, 32]);
        let y = forward_graph(&mut Eager, &model, &x, 0.0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 64, 64]);
    }

    #[test]
    fn indivisible_input_names_padding() {
        let model = build_unet(UNetConfig { depth: 3, base_channels: 2, slope: 0.2 }, 1).unwrap();
        let x = Tensor::zeros([1, 4, 12, 20]);
        match forward_features(&mut Eager, &model, &x, 0.0) {
            Err(Error::Indivisible { multiple: 8, pad_width: 24, pad_height: 16, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn modulation_insertion_rules() {
        let mut m = build_unet(UNetConfig { depth: 1, base_channels: 2, slope: 0.2 }, 1).unwrap();
        assert!(m.insert_modulation(4).is_err());
        m.insert_modulation(3).unwrap();
        assert!(m.insert_modulation(3).is_err());
        assert!(m.params().iter().all(|p| p.frozen != Model::is_modulation_param(&p.name)));
        let mw = m.param("enc0.conv1.mod.weight").unwrap();
        assert_eq!(mw.tensor, identity_kernel(2, 3).unwrap());
        assert!(m.param("out.mod.weight").is_err());
    }

    #[test]
    fn modulate_weights_examples() {
        let i = identity_kernel(1, 3).unwrap();
        let w = contexp_tensor::ops::scale(&i, 2.0);
        let b = Tensor::new([1], vec![4.0]).unwrap();
        let (w0, b0) = modulate_weights(&w, &b, 0.0).unwrap();
        assert_eq!(w0, i);
        assert_eq!(b0.data(), &[0.0]);
        let (w1, b1) = modulate_weights(&w, &b, 1.0).unwrap();
        assert_eq!((w1, b1), (w.clone(), b.clone()));
        let (wh, bh) = modulate_weights(&w, &b, 0.5).unwrap();
        assert_eq!(wh, contexp_tensor::ops::scale(&i, 1.5));
        assert_eq!(bh.data(), &[2.0]);
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = UNetConfig::default();
        assert_eq!(build_unet(cfg, 5).unwrap(), build_unet(cfg, 5).unwrap());
        assert_ne!(build_unet(cfg, 5).unwrap(), build_unet(cfg, 6).unwrap());
    }
}
