//! Base training and modulation fine-tuning.

use std::collections::HashMap;
use std::fmt::Write as _;

use contexp_tensor::{Graph, ParamUpdate, Tape, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::augment::{crop_square, Transform};
use crate::model::unet::{forward_graph, Anchor, Model};
use crate::raw::{apply_brightness, exposure_ratio, pack_bayer};
use crate::sensor::dataset::{Dataset, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Square patch extent in packed pixels; the sRGB target patch is twice this.
    pub patch_size: usize,
    pub base_epochs_high: usize,
    pub base_epochs_low: usize,
    pub finetune_epochs: usize,
    pub lr_high: f32,
    pub lr_low: f32,
    pub rotate: bool,
    pub flip: bool,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            patch_size: 64,
            base_epochs_high: 200,
            base_epochs_low: 200,
            finetune_epochs: 200,
            lr_high: 1e-4,
            lr_low: 1e-5,
            rotate: true,
            flip: true,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.base_epochs_high == 0 || self.base_epochs_low == 0 || self.finetune_epochs == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if !(self.lr_high > 0.0 && self.lr_low > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect for a base-training epoch (0-based).
    pub fn base_lr(&self, epoch: usize) -> f32 {
        if epoch < self.base_epochs_high {
            self.lr_high
        } else {
            self.lr_low
        }
    }

    /// Fine-tuning spends its first half at the high rate and the rest at the low one.
    pub fn finetune_lr(&self, epoch: usize) -> f32 {
        if epoch < self.finetune_epochs.div_ceil(2) {
            self.lr_high
        } else {
            self.lr_low
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// Plain-text log: a header line, then `epoch loss lr` per line.
    pub fn metrics_log(&self) -> String {
        let mut s = String::from("epoch loss lr\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{} {:.8} {:e}", e.epoch, e.loss, e.lr);
        }
        s
    }

    /// Mean of the last `window` epoch losses.
    pub fn smoothed_final(&self, window: usize) -> f64 {
        let l = self.losses();
        let tail = &l[l.len().saturating_sub(window.max(1))..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// One training scene: amplified packed input per target, and the target
/// renderings.
struct Pair {
    input: Tensor,
    target: Tensor,
}

/// Prepares the aligned (amplified input, reference) pairs for one target.
fn pairs(dataset: &Dataset, split: Split, input_exposure: f32, target_exposure: f32) -> Result<Vec<Pair>> {
    let ii = dataset.exposure_index(input_exposure)?;
    let ti = dataset.exposure_index(target_exposure)?;
    let ratio = exposure_ratio(input_exposure, target_exposure)?;
    dataset
        .split(split)
        .map(|s| {
            let packed = apply_brightness(&pack_bayer(&s.raws[ii]), ratio)?;
            let target =
                s.references[ti].tensor().reshape([1, 3, s.references[ti].height(), s.references[ti].width()])?;
            Ok(Pair { input: packed.into_tensor(), target })
        })
        .collect()
}

fn sample_patch(pair: &Pair, size: usize, schedule: &TrainSchedule, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tensor)> {
    let s = pair.input.shape();
    let (h, w) = (s[2], s[3]);
    if size > h || size > w {
        return Err(Error::Config(format!("patch size {size} exceeds packed image {w}x{h}")));
    }
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    let input = crop_square(&pair.input, x0, y0, size);
    let target = crop_square(&pair.target, 2 * x0, 2 * y0, 2 * size);
    let t = Transform {
        quarter_turns: if schedule.rotate { rng.random_range(0..4) } else { 0 },
        flip_h: schedule.flip && rng.random_bool(0.5),
        flip_v: schedule.flip && rng.random_bool(0.5),
    };
    Ok((t.apply(&input), t.apply(&target)))
}

/// One L1 + Adam step on a single patch pair. Returns the loss.
fn step(model: &mut Model, adam: &mut contexp_tensor::Adam, input: Tensor, target: Tensor, alpha2: f32) -> Result<f32> {
    let mut tape = Tape::new();
    let x = tape.input(input);
    let y = forward_graph(&mut tape, model, &x, alpha2)?;
    let t = tape.input(target);
    let loss = tape.l1_loss(y, t)?;
    let loss_value = tape_value(&tape, loss);
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let grads = tape.backward(loss)?;
    let index: HashMap<&str, contexp_tensor::Var> = tape.params().iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let mut updates = Vec::new();
    for p in model.params_mut().iter_mut().filter(|p| !p.frozen) {
        let var = index
            .get(p.name.as_str())
            .ok_or_else(|| Error::Model(format!("parameter `{}` not reached by the forward pass", p.name)))?;
        let grad = grads.get(*var).ok_or_else(|| Error::Model(format!("no gradient for `{}`", p.name)))?;
        updates.push(ParamUpdate { name: &p.name, value: &mut p.tensor, grad });
    }
    adam.step(&mut updates)?;
    Ok(loss_value)
}

fn tape_value(tape: &Tape, v: contexp_tensor::Var) -> f32 {
    tape.value(&v).item()
}

fn run_epochs(
    model: &mut Model,
    sources: &[Vec<Pair>],
    schedule: &TrainSchedule,
    epochs: usize,
    lr: impl Fn(usize) -> f32,
    alpha2: f32,
    seed: u64,
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = contexp_tensor::Adam::new(lr(0));
    let scenes = sources[0].len();
    if scenes == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut order: Vec<usize> = (0..scenes).collect();
    let mut report = TrainReport::default();
    for epoch in 0..epochs {
        adam.set_lr(lr(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for &i in &order {
            let k = if sources.len() == 1 { 0 } else { rng.random_range(0..sources.len()) };
            let (input, target) = sample_patch(&sources[k][i], schedule.patch_size, schedule, &mut rng)?;
            let loss = match step(model, &mut adam, input, target, alpha2) {
                Err(Error::Tensor(TensorError::NonFiniteGradient { .. })) => f32::NAN,
                other => other?,
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss });
            }
            total += f64::from(loss);
        }
        let log = EpochLog { epoch: epoch + 1, loss: total / scenes as f64, lr: lr(epoch) };
        log::debug!("epoch {} loss {:.6} lr {:e}", log.epoch, log.loss, log.lr);
        report.epochs.push(log);
    }
    Ok(report)
}

/// Trains every base parameter to map `input_exposure` captures onto the
/// references at `targets`. With several targets each step draws one at
/// random and amplifies the input by that target's exposure ratio.
pub fn train_base(
    model: &mut Model,
    dataset: &Dataset,
    input_exposure: f32,
    targets: &[f32],
    schedule: &TrainSchedule,
) -> Result<TrainReport> {
    schedule.validate()?;
    if model.modulation.is_some() {
        return Err(Error::Model("base training expects a model without modulation layers".into()));
    }
    if targets.is_empty() {
        return Err(Error::Config("at least one target exposure is required".into()));
    }
    for &t in targets {
        if t <= input_exposure {
            return Err(Error::Config(format!(
                "target exposure {t}s must exceed the input exposure {input_exposure}s"
            )));
        }
    }
    let sources =
        targets.iter().map(|&t| pairs(dataset, Split::Train, input_exposure, t)).collect::<Result<Vec<_>>>()?;
    model.set_all_frozen(false);
    let epochs = schedule.base_epochs_high + schedule.base_epochs_low;
    let report = run_epochs(model, &sources, schedule, epochs, |e| schedule.base_lr(e), 0.0, schedule.seed)?;
    model.anchors = if targets.len() == 1 {
        vec![Anchor { alpha1: exposure_ratio(input_exposure, targets[0])?, alpha2: 0.0, exposure: targets[0] }]
    } else {
        Vec::new()
    };
    model.provenance.insert("input_exposure".into(), format!("{input_exposure:?}"));
    model
        .provenance
        .insert("base_targets".into(), targets.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(","));
    model.provenance.insert("schedule".into(), serde_json::to_string(schedule).expect("serialisable"));
    model.provenance.insert("dataset".into(), dataset.manifest.hash());
    Ok(report)
}

/// Trains only the modulation layers, at `alpha2 = 1`, toward the references
/// at `final_exposure`. Fails if any base tensor changes.
pub fn finetune_modulation(
    model: &mut Model,
    dataset: &Dataset,
    input_exposure: f32,
    final_exposure: f32,
    schedule: &TrainSchedule,
) -> Result<TrainReport> {
    schedule.validate()?;
    if model.modulation.is_none() {
        return Err(Error::Model("insert modulation layers before fine-tuning".into()));
    }
    if let Some(p) = model.params().iter().find(|p| !Model::is_modulation_param(&p.name) && !p.frozen) {
        return Err(Error::Model(format!("base parameter `{}` is not frozen", p.name)));
    }
    let before: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .filter(|p| !Model::is_modulation_param(&p.name))
        .map(|p| (p.name.clone(), p.tensor.clone()))
        .collect();
    let checksum = model.base_checksum();
    let sources = vec![pairs(dataset, Split::Train, input_exposure, final_exposure)?];
    let report = run_epochs(
        model,
        &sources,
        schedule,
        schedule.finetune_epochs,
        |e| schedule.finetune_lr(e),
        1.0,
        schedule.seed ^ 0xf1e7,
    )?;
    if model.base_checksum() != checksum {
        let changed = before
            .iter()
            .find(|(n, t)| model.param(n).map(|p| &p.tensor != t).unwrap_or(true))
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        return Err(Error::FrozenParamChanged(changed));
    }
    model.anchors.push(Anchor {
        alpha1: exposure_ratio(input_exposure, final_exposure)?,
        alpha2: 1.0,
        exposure: final_exposure,
    });
    model.provenance.insert("final_exposure".into(), format!("{final_exposure:?}"));
    Ok(report)
}

/// Mean L1 loss over a split's full images at the given knobs, without clipping.
pub fn evaluate_loss(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    input_exposure: f32,
    target_exposure: f32,
    alpha2: f32,
) -> Result<f64> {
    let ps = pairs(dataset, split, input_exposure, target_exposure)?;
    if ps.is_empty() {
        return Err(Error::Config(format!("split {split} is empty")));
    }
    let mut total = 0.0;
    for p in &ps {
        let y = forward_graph(&mut contexp_tensor::Eager, model, &p.input, alpha2)?;
        total += f64::from(contexp_tensor::ops::l1_loss(&y, &p.target)?.item());
    }
    Ok(total / ps.len() as f64)
}
