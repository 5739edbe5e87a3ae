//! Experiment harness: model recipes, the model zoo and protocols A-D plus
//! the two ablations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::baseline::brightness_only_baseline;
use crate::eval::metrics::{psnr, ssim};
use crate::eval::report::{ImageScore, MetricReport, ReferenceValue, ReportRow};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::enhance;
use crate::model::train::{finetune_modulation, train_base, TrainReport, TrainSchedule};
use crate::model::unet::{build_unet, Model, UNetConfig};
use crate::raw::{exposure_ratio, pack_bayer, TuningKnobs};
use crate::sensor::dataset::{exposure_millis, Dataset, Split};

/// Everything that determines a trained model apart from its targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub unet: UNetConfig,
    pub schedule: TrainSchedule,
    pub init_seed: u64,
    pub filter_size: usize,
    pub input_exposure: f32,
}

impl Default for Recipe {
    /// Desk-scale defaults: depth 4, 8 base channels, 64-pixel patches,
    /// 200 + 200 base epochs and 200 fine-tuning epochs.
    fn default() -> Self {
        Self {
            unet: UNetConfig::default(),
            schedule: TrainSchedule::default(),
            init_seed: 0,
            filter_size: 3,
            input_exposure: 0.1,
        }
    }
}

impl Recipe {
    /// Short schedule used by the acceptance suite: 32-pixel patches,
    /// 60 + 20 base epochs at 1e-3 / 1e-4 and 60 fine-tuning epochs.
    pub fn quick() -> Self {
        Self {
            schedule: TrainSchedule {
                patch_size: 32,
                base_epochs_high: 60,
                base_epochs_low: 20,
                finetune_epochs: 60,
                lr_high: 1e-3,
                lr_low: 1e-4,
                ..TrainSchedule::default()
            },
            ..Self::default()
        }
    }

    pub fn fingerprint(&self, dataset_hash: &str, experiment: &str) -> String {
        let mut h = Sha256::new();
        h.update(experiment.as_bytes());
        h.update(serde_json::to_vec(self).expect("serialisable"));
        h.update(dataset_hash.as_bytes());
        hex::encode(h.finalize())
    }
}

/// Identifies a trained model. Exposures are in milliseconds.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKey {
    /// Plain U-Net fit to one target exposure.
    Fixed { target: u32 },
    /// Plain U-Net fit to several targets, one drawn per step.
    Mixed { targets: Vec<u32> },
    /// Base fit to `base`, modulation fine-tuned toward `fine`.
    Continuous { base: u32, fine: u32, filter: usize },
}

fn secs(ms: u32) -> String {
    format!("{}", ms as f32 / 1000.0)
}

impl ModelKey {
    pub fn fixed(target: f32) -> Self {
        Self::Fixed { target: exposure_millis(target) }
    }

    pub fn mixed(targets: &[f32]) -> Self {
        Self::Mixed { targets: targets.iter().map(|&t| exposure_millis(t)).collect() }
    }

    pub fn continuous(base: f32, fine: f32, filter: usize) -> Self {
        Self::Continuous { base: exposure_millis(base), fine: exposure_millis(fine), filter }
    }

    /// Checkpoint file stem.
    pub fn stem(&self) -> String {
        match self {
            Self::Fixed { target } => format!("fixed_{target}"),
            Self::Mixed { targets } => {
                format!("mixed_{}", targets.iter().map(u32::to_string).collect::<Vec<_>>().join("_"))
            }
            Self::Continuous { base, fine, filter } => format!("cont_{base}_{fine}_k{filter}"),
        }
    }

    /// Target exposures, comma separated, in seconds.
    pub fn trained(&self) -> String {
        match self {
            Self::Fixed { target } => secs(*target),
            Self::Mixed { targets } => targets.iter().map(|&t| secs(t)).collect::<Vec<_>>().join(","),
            Self::Continuous { base, fine, .. } => format!("{},{}", secs(*base), secs(*fine)),
        }
    }

    /// Command line that produces this checkpoint.
    pub fn train_hint(&self, data: &Path, dir: &Path) -> String {
        let out = |k: &ModelKey| dir.join(format!("{}.cxck", k.stem())).display().to_string();
        let data = data.display();
        match self {
            Self::Fixed { target } => {
                format!("contexp train --data {data} --target {} --out {}", secs(*target), out(self))
            }
            Self::Mixed { targets } => format!(
                "contexp train --data {data} --target {} --out {}",
                targets.iter().map(|&t| secs(t)).collect::<Vec<_>>().join(","),
                out(self)
            ),
            Self::Continuous { base, fine, filter } => {
                let b = ModelKey::Fixed { target: *base };
                format!(
                    "{} && contexp finetune --data {data} --base {} --final {} --filter {filter} --out {}",
                    b.train_hint(Path::new(&data.to_string()), dir),
                    out(&b),
                    secs(*fine),
                    out(self)
                )
            }
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.stem())
    }
}

/// Supplies trained models, training and caching any that are missing
/// unless it was opened read-only.
pub struct ModelZoo<'a> {
    pub dataset: &'a Dataset,
    pub recipe: Recipe,
    dir: Option<PathBuf>,
    train_missing: bool,
    cache: BTreeMap<ModelKey, Model>,
    logs: BTreeMap<ModelKey, TrainReport>,
}

impl<'a> ModelZoo<'a> {
    /// Trains on demand; checkpoints are read from and written to `dir` when given.
    pub fn training(dataset: &'a Dataset, recipe: Recipe, dir: Option<PathBuf>) -> Self {
        Self { dataset, recipe, dir, train_missing: true, cache: BTreeMap::new(), logs: BTreeMap::new() }
    }

    /// Only loads checkpoints from `dir`; a missing one is an error naming
    /// the command that trains it.
    pub fn read_only(dataset: &'a Dataset, recipe: Recipe, dir: PathBuf) -> Self {
        Self { train_missing: false, ..Self::training(dataset, recipe, Some(dir)) }
    }

    pub fn path(&self, key: &ModelKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.cxck", key.stem())))
    }

    /// Training log of a model trained by this zoo.
    pub fn log(&self, key: &ModelKey) -> Option<&TrainReport> {
        self.logs.get(key)
    }

    pub fn get(&mut self, key: &ModelKey) -> Result<Model> {
        if let Some(m) = self.cache.get(key) {
            return Ok(m.clone());
        }
        let path = self.path(key);
        let model = match &path {
            Some(p) if p.exists() => load_checkpoint(p)?,
            _ if !self.train_missing => {
                let dir = self.dir.clone().unwrap_or_default();
                return Err(Error::MissingCheckpoint {
                    path: path.unwrap_or_default(),
                    hint: key.train_hint(&self.dataset.root, &dir),
                });
            }
            _ => {
                let m = self.train(key)?;
                if let Some(p) = &path {
                    save_checkpoint(&m, p)?;
                }
                m
            }
        };
        self.cache.insert(key.clone(), model.clone());
        Ok(model)
    }

    fn train(&mut self, key: &ModelKey) -> Result<Model> {
        let r = self.recipe;
        log::info!("training {key}");
        let (model, report) = match key {
            ModelKey::Fixed { target } => {
                let mut m = build_unet(r.unet, r.init_seed)?;
                let rep = train_base(&mut m, self.dataset, r.input_exposure, &[*target as f32 / 1000.0], &r.schedule)?;
                (m, rep)
            }
            ModelKey::Mixed { targets } => {
                let ts: Vec<f32> = targets.iter().map(|&t| t as f32 / 1000.0).collect();
                let mut m = build_unet(r.unet, r.init_seed)?;
                let rep = train_base(&mut m, self.dataset, r.input_exposure, &ts, &r.schedule)?;
                (m, rep)
            }
            ModelKey::Continuous { base, fine, filter } => {
                let mut m = self.get(&ModelKey::Fixed { target: *base })?;
                m.insert_modulation(*filter)?;
                let rep =
                    finetune_modulation(&mut m, self.dataset, r.input_exposure, *fine as f32 / 1000.0, &r.schedule)?;
                (m, rep)
            }
        };
        self.logs.insert(key.clone(), report);
        Ok(model)
    }
}

/// How the enhancement knob is set for a test exposure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha2Mode {
    Fixed(f32),
    /// Log-linear in exposure time between the model's two anchors.
    LogLinear,
    /// Per-image best PSNR over `steps` evenly spaced values in `[min, max]`.
    Grid {
        min: f32,
        max: f32,
        steps: usize,
    },
}

impl Alpha2Mode {
    pub const GRID: Self = Self::Grid { min: 0.0, max: 1.0, steps: 21 };
    pub const GRID_EXTENDED: Self = Self::Grid { min: -0.5, max: 1.5, steps: 41 };
}

/// `(ln t - ln t0) / (ln t1 - ln t0)` where `t0` and `t1` are the exposures
/// of the `alpha2 = 0` and `alpha2 = 1` anchors.
pub fn log_linear_alpha2(model: &Model, test_exposure: f32) -> Result<f32> {
    let find = |a2: f32| {
        model
            .anchors
            .iter()
            .find(|a| a.alpha2 == a2)
            .ok_or_else(|| Error::Model(format!("model has no anchor with alpha2 = {a2}")))
    };
    let (t0, t1) = (find(0.0)?.exposure, find(1.0)?.exposure);
    Ok((test_exposure.ln() - t0.ln()) / (t1.ln() - t0.ln()))
}

fn grid_values(min: f32, max: f32, steps: usize) -> Vec<f32> {
    if steps <= 1 {
        return vec![min];
    }
    (0..steps).map(|i| min + (max - min) * i as f32 / (steps - 1) as f32).collect()
}

/// Scores `model` on every test scene, input at the recipe's input exposure
/// and reference at `test_exposure`.
pub fn score_model(
    model: &Model,
    dataset: &Dataset,
    input_exposure: f32,
    test_exposure: f32,
    mode: Alpha2Mode,
) -> Result<(Vec<ImageScore>, String)> {
    let ii = dataset.exposure_index(input_exposure)?;
    let ti = dataset.exposure_index(test_exposure)?;
    let alpha1 = exposure_ratio(input_exposure, test_exposure)?;
    let (grid, label) = match (model.modulation, mode) {
        (None, _) => (vec![0.0], "-".to_string()),
        (Some(_), Alpha2Mode::Fixed(a)) => (vec![a], format!("{a}")),
        (Some(_), Alpha2Mode::LogLinear) => {
            let a = log_linear_alpha2(model, test_exposure)?;
            (vec![a], format!("loglin={a:.3}"))
        }
        (Some(_), Alpha2Mode::Grid { min, max, steps }) => (grid_values(min, max, steps), format!("grid[{min},{max}]")),
    };
    let mut scores = Vec::new();
    for s in dataset.split(Split::Test) {
        let packed = pack_bayer(&s.raws[ii]);
        let reference = &s.references[ti];
        let mut best: Option<ImageScore> = None;
        for &a2 in &grid {
            let out = enhance(model, &packed, TuningKnobs::truncated(alpha1, a2))?;
            let p = psnr(&out, reference)?;
            if best.is_none_or(|b| p > b.psnr) {
                best = Some(ImageScore { scene: s.id, psnr: p, ssim: ssim(&out, reference)?, alpha2: a2 });
            }
        }
        scores.push(best.expect("grid is non-empty"));
    }
    if scores.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    Ok((scores, label))
}

fn model_row(zoo: &mut ModelZoo<'_>, method: &str, key: &ModelKey, test: f32, mode: Alpha2Mode) -> Result<ReportRow> {
    let model = zoo.get(key)?;
    let (scores, alpha2) = score_model(&model, zoo.dataset, zoo.recipe.input_exposure, test, mode)?;
    Ok(ReportRow {
        method: method.to_string(),
        trained: key.trained(),
        test_exposure: test,
        alpha1: exposure_ratio(zoo.recipe.input_exposure, test)?,
        alpha2,
        scores,
    })
}

/// Brightness-only rendering scored against the references at `test_exposure`.
pub fn baseline_row(dataset: &Dataset, input_exposure: f32, test_exposure: f32) -> Result<ReportRow> {
    let ii = dataset.exposure_index(input_exposure)?;
    let ti = dataset.exposure_index(test_exposure)?;
    let alpha1 = exposure_ratio(input_exposure, test_exposure)?;
    let mut scores = Vec::new();
    for s in dataset.split(Split::Test) {
        let out = brightness_only_baseline(&pack_bayer(&s.raws[ii]), alpha1)?;
        let reference = &s.references[ti];
        scores.push(ImageScore {
            scene: s.id,
            psnr: psnr(&out, reference)?,
            ssim: ssim(&out, reference)?,
            alpha2: 0.0,
        });
    }
    Ok(ReportRow {
        method: "brightness-only".into(),
        trained: "-".into(),
        test_exposure,
        alpha1,
        alpha2: "-".into(),
        scores,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Fixed-output models, one per target, tested on every target.
    A,
    /// One fixed-output model trained on all targets.
    B,
    /// Continuous model over `[low, high]`, tested inside the range.
    C,
    /// Continuous model over `[low, mid]`, tested beyond it.
    D,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            other => Err(Error::Config(format!("unknown protocol `{other}` (use A, B, C or D)"))),
        }
    }
}

/// Low, interior and high target exposures used by the protocols.
pub const TEST_EXPOSURES: [f32; 3] = [1.0, 5.0, 10.0];

fn fmt_db(v: f64) -> String {
    format!("{v:.3} dB")
}

pub fn run_protocol(protocol: Protocol, zoo: &mut ModelZoo<'_>) -> Result<MetricReport> {
    let [low, mid, high] = TEST_EXPOSURES;
    let name = format!("protocol-{protocol:?}");
    let mut report = MetricReport::new(&name, zoo.recipe.fingerprint(&zoo.dataset.manifest.hash(), &name));
    let k = zoo.recipe.filter_size;
    match protocol {
        Protocol::A => {
            for train in TEST_EXPOSURES {
                for test in TEST_EXPOSURES {
                    report.rows.push(model_row(zoo, "fixed", &ModelKey::fixed(train), test, Alpha2Mode::LogLinear)?);
                }
            }
            for test in TEST_EXPOSURES {
                report.rows.push(baseline_row(zoo.dataset, zoo.recipe.input_exposure, test)?);
            }
            for test in TEST_EXPOSURES {
                let col: Vec<(String, f64)> = report
                    .rows
                    .iter()
                    .filter(|r| r.method == "fixed" && r.test_exposure == test)
                    .map(|r| (r.trained.clone(), r.mean_psnr()))
                    .collect();
                let diag =
                    col.iter().find(|(t, _)| t.parse::<f32>().ok() == Some(test)).map(|c| c.1).unwrap_or(f64::NAN);
                let best_off = col
                    .iter()
                    .filter(|(t, _)| t.parse::<f32>().ok() != Some(test))
                    .map(|c| c.1)
                    .fold(f64::NEG_INFINITY, f64::max);
                report.check(
                    format!("diagonal-{test}s"),
                    diag >= best_off,
                    format!("trained on {test}s: {} vs best other {}", fmt_db(diag), fmt_db(best_off)),
                );
            }
            report.references.push(ReferenceValue { label: "fixed 0.1=>1 at 1s".into(), psnr: 38.17 });
            report.references.push(ReferenceValue { label: "fixed 0.1=>5 at 5s".into(), psnr: 33.35 });
            report.references.push(ReferenceValue { label: "fixed 0.1=>10 at 10s".into(), psnr: 30.0 });
        }
        Protocol::B => {
            let key = ModelKey::mixed(&TEST_EXPOSURES);
            for test in TEST_EXPOSURES {
                report.rows.push(model_row(zoo, "mixed", &key, test, Alpha2Mode::LogLinear)?);
            }
            report.references.push(ReferenceValue { label: "mixed at 5s".into(), psnr: 29.55 });
        }
        Protocol::C => {
            let key = ModelKey::continuous(low, high, k);
            for test in TEST_EXPOSURES {
                report.rows.push(model_row(zoo, "continuous", &key, test, Alpha2Mode::LogLinear)?);
            }
            report.rows.push(model_row(zoo, "continuous", &key, mid, Alpha2Mode::GRID)?);
            report.rows.push(model_row(zoo, "mixed", &ModelKey::mixed(&TEST_EXPOSURES), mid, Alpha2Mode::LogLinear)?);
            let grid = report.rows[3].mean_psnr();
            let mixed = report.rows[4].mean_psnr();
            report.check(
                "continuous-vs-mixed",
                grid >= mixed,
                format!("continuous (grid) {} vs mixed {} at {mid}s", fmt_db(grid), fmt_db(mixed)),
            );
            report.references.push(ReferenceValue { label: "continuous 1,10 at 5s".into(), psnr: 32.35 });
        }
        Protocol::D => {
            let key = ModelKey::continuous(low, mid, k);
            for test in TEST_EXPOSURES {
                report.rows.push(model_row(zoo, "continuous", &key, test, Alpha2Mode::LogLinear)?);
            }
            report.rows.push(model_row(zoo, "continuous", &key, high, Alpha2Mode::GRID_EXTENDED)?);
            report.rows.push(model_row(zoo, "fixed", &ModelKey::fixed(mid), high, Alpha2Mode::LogLinear)?);
            let grid = report.rows[3].mean_psnr();
            let fixed = report.rows[4].mean_psnr();
            report.check(
                "extrapolation-vs-fixed",
                grid >= fixed,
                format!("continuous (grid) {} vs fixed 5s {} at {high}s", fmt_db(grid), fmt_db(fixed)),
            );
            report.references.push(ReferenceValue { label: "continuous 1,5 at 10s".into(), psnr: 28.65 });
        }
    }
    Ok(report)
}

/// Published PSNR per modulation filter size at the interior exposure.
pub const FILTER_SIZE_REFERENCE: [(usize, f64); 4] = [(1, 31.87), (3, 32.35), (5, 32.39), (7, 32.48)];

/// Fine-tunes one modulation variant per size from the low-anchor base and
/// scores each at the interior exposure.
pub fn ablate_filter_size(zoo: &mut ModelZoo<'_>, sizes: &[usize]) -> Result<MetricReport> {
    let [low, mid, high] = TEST_EXPOSURES;
    let name = "ablation-filter";
    let mut report = MetricReport::new(name, zoo.recipe.fingerprint(&zoo.dataset.manifest.hash(), name));
    for &k in sizes {
        let key = ModelKey::continuous(low, high, k);
        report.rows.push(model_row(zoo, &format!("{k}x{k}"), &key, mid, Alpha2Mode::GRID)?);
        report.rows.push(model_row(zoo, &format!("{k}x{k}"), &key, mid, Alpha2Mode::LogLinear)?);
    }
    let grid_psnr = |r: &MetricReport, m: &str| {
        r.rows.iter().find(|row| row.method == m && row.alpha2.starts_with("grid")).map(ReportRow::mean_psnr)
    };
    if let (Some(one), Some(three)) = (grid_psnr(&report, "1x1"), grid_psnr(&report, "3x3")) {
        report.check("3x3-vs-1x1", three >= one, format!("3x3 {} vs 1x1 {}", fmt_db(three), fmt_db(one)));
    }
    for (k, v) in FILTER_SIZE_REFERENCE {
        report.references.push(ReferenceValue { label: format!("{k}x{k}"), psnr: v });
    }
    Ok(report)
}

/// Published forward / backward PSNR at the interior exposure.
pub const DIRECTION_REFERENCE: (f64, f64) = (32.35, 28.2);

/// Forward (base on the low anchor, fine-tuned to the high one) against
/// backward (the reverse), both scored at the interior exposure.
pub fn ablate_direction(zoo: &mut ModelZoo<'_>) -> Result<MetricReport> {
    let [low, mid, high] = TEST_EXPOSURES;
    let k = zoo.recipe.filter_size;
    let name = "ablation-direction";
    let mut report = MetricReport::new(name, zoo.recipe.fingerprint(&zoo.dataset.manifest.hash(), name));
    let forward = ModelKey::continuous(low, high, k);
    let backward = ModelKey::continuous(high, low, k);
    report.rows.push(model_row(zoo, "forward", &forward, mid, Alpha2Mode::GRID)?);
    report.rows.push(model_row(zoo, "backward", &backward, mid, Alpha2Mode::GRID)?);
    report.rows.push(model_row(zoo, "forward", &forward, mid, Alpha2Mode::LogLinear)?);
    report.rows.push(model_row(zoo, "backward", &backward, mid, Alpha2Mode::LogLinear)?);
    let (f, b) = (report.rows[0].mean_psnr(), report.rows[1].mean_psnr());
    report.check("forward-vs-backward", f >= b, format!("forward {} vs backward {}", fmt_db(f), fmt_db(b)));
    report.references.push(ReferenceValue { label: "forward".into(), psnr: DIRECTION_REFERENCE.0 });
    report.references.push(ReferenceValue { label: "backward".into(), psnr: DIRECTION_REFERENCE.1 });
    Ok(report)
}
