//! Multi-exposure dataset synthesis, the `manifest.lxm` index and loading.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.lxm                  key = value text index
//! scene_<id>_exp_<ms>.lxrw      noisy raw capture per exposure
//! scene_<id>_gt.lxpm            reference renderings, one frame per exposure
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::SrgbImage;
use crate::raw::RawImage;
use crate::sensor::capture::{expose, mosaic, render_reference_at};
use crate::sensor::format::{encode_map, encode_raw, read_map, read_raw, MapFrame};
use crate::sensor::noise::{sample_noisy_raw, NoiseParams};
use crate::sensor::scene::{generate_scene, SceneStyle};

/// Capture times in seconds, shortest first.
pub const EXPOSURES: [f32; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];
/// Exposure at which scene radiance 1.0 reaches full well.
pub const REFERENCE_EXPOSURE: f32 = 10.0;
pub const MANIFEST_NAME: &str = "manifest.lxm";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub black_level: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { scenes: 60, width: 128, height: 128, seed: 0, black_level: 0.0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes < 10 {
            return Err(Error::Config(format!("need at least 10 scenes for a 70/10/20 split, got {}", self.scenes)));
        }
        if self.width == 0 || self.height == 0 || self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(Error::Config(format!("mosaic size {}x{} must be positive and even", self.width, self.height)));
        }
        if !(0.0..1.0).contains(&self.black_level) {
            return Err(Error::Config(format!("black level {} outside [0, 1)", self.black_level)));
        }
        Ok(())
    }
}

/// A file listed in the manifest with its size and SHA-256.
#[derive(Clone, Debug, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneEntry {
    pub id: usize,
    pub style: SceneStyle,
    pub split: Split,
    pub noise: NoiseParams,
    /// One entry per exposure in [`EXPOSURES`] order.
    pub raw_files: Vec<FileEntry>,
    pub gt_file: FileEntry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub black_level: f32,
    pub reference_exposure: f32,
    pub exposures: Vec<f32>,
    pub scenes: Vec<SceneEntry>,
}

pub fn exposure_millis(exposure: f32) -> u32 {
    (exposure * 1000.0).round() as u32
}

pub fn raw_file_name(id: usize, exposure: f32) -> String {
    format!("scene_{id:04}_exp_{}.lxrw", exposure_millis(exposure))
}

pub fn gt_file_name(id: usize) -> String {
    format!("scene_{id:04}_gt.lxpm")
}

/// Split sizes: `round(0.7 n)` train, `round(0.1 n)` val, the rest test.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = (0.1 * n as f64).round() as usize;
    (train, val, n - train - val)
}

/// Style of scene `id`: alternating, so both styles are equally represented.
pub fn scene_style(id: usize) -> SceneStyle {
    if id % 2 == 0 {
        SceneStyle::Indoor
    } else {
        SceneStyle::Outdoor
    }
}

/// Stratified split assignment. Each style's scenes are shuffled, the two
/// lists are interleaved, and the interleaved order is dealt into test, val
/// and train, so every split holds the two styles within one scene of parity.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed5_0117_u64);
    let mut by_style: Vec<Vec<usize>> =
        SceneStyle::ALL.iter().map(|&s| (0..n).filter(|&i| scene_style(i) == s).collect()).collect();
    for ids in &mut by_style {
        ids.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(n);
    for k in 0..n {
        for ids in &by_style {
            if let Some(&id) = ids.get(k) {
                order.push(id);
            }
        }
    }
    let (_, val, test) = split_counts(n);
    let mut splits = vec![Split::Train; n];
    for (rank, id) in order.into_iter().enumerate() {
        splits[id] = if rank < test {
            Split::Test
        } else if rank < test + val {
            Split::Val
        } else {
            Split::Train
        };
    }
    splits
}

fn file_entry(name: String, bytes: &[u8]) -> FileEntry {
    FileEntry { name, bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(bytes)) }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Per-scene seeds derived from the global seed.
fn scene_seed(global: u64, id: usize, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update((id as u64).to_le_bytes());
    h.update(salt.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Synthesises every scene and writes the dataset into `dir` (created if
/// needed). The output is a pure function of `config`.
pub fn build_dataset(config: &DatasetConfig, dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let splits = assign_splits(config.scenes, config.seed);
    let mut scenes = Vec::with_capacity(config.scenes);
    for id in 0..config.scenes {
        let style = scene_style(id);
        let scene = generate_scene(scene_seed(config.seed, id, 0), config.width, config.height, style)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(scene_seed(config.seed, id, 1));
        let noise = NoiseParams::sample_pool(&mut noise_rng);
        let b = config.black_level;
        let signal = mosaic(&scene).map(|v| b + v * (1.0 - b)).with_black_level(b)?;

        let mut raw_files = Vec::with_capacity(EXPOSURES.len());
        let mut frames = Vec::with_capacity(EXPOSURES.len());
        for (k, &t) in EXPOSURES.iter().enumerate() {
            let exposed = expose(&signal, t, REFERENCE_EXPOSURE)?;
            let noisy = sample_noisy_raw(&exposed, &noise, scene_seed(config.seed, id, 100 + k as u64))?;
            let bytes = encode_raw(&noisy);
            let name = raw_file_name(id, t);
            write_file(dir, &name, &bytes)?;
            raw_files.push(file_entry(name, &bytes));
            frames.push(MapFrame { exposure: t, image: render_reference_at(&scene, t, REFERENCE_EXPOSURE)? });
        }
        let gt_bytes = encode_map(&frames)?;
        let gt_name = gt_file_name(id);
        write_file(dir, &gt_name, &gt_bytes)?;
        scenes.push(SceneEntry {
            id,
            style,
            split: splits[id],
            noise,
            raw_files,
            gt_file: file_entry(gt_name, &gt_bytes),
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        width: config.width,
        height: config.height,
        black_level: config.black_level,
        reference_exposure: REFERENCE_EXPOSURE,
        exposures: EXPOSURES.to_vec(),
        scenes,
    };
    write_file(dir, MANIFEST_NAME, manifest.to_text().as_bytes())?;
    Ok(manifest)
}

fn join_f32(values: &[f32]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.scenes.iter().filter(|s| s.split == split).map(|s| s.id).collect()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        (self.ids(Split::Train).len(), self.ids(Split::Val).len(), self.ids(Split::Test).len())
    }

    pub fn style_counts(&self) -> BTreeMap<SceneStyle, usize> {
        let mut m = BTreeMap::new();
        for s in &self.scenes {
            *m.entry(s.style).or_insert(0) += 1;
        }
        m
    }

    /// Canonical text form; also the bytes hashed by [`Self::hash`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (train, val, test) = self.split_sizes();
        let _ = writeln!(s, "format = lxm");
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "scenes = {}", self.scenes.len());
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "cfa = RGGB");
        let _ = writeln!(s, "black_level = {:?}", self.black_level);
        let _ = writeln!(s, "reference_exposure = {:?}", self.reference_exposure);
        let _ = writeln!(s, "exposures = {}", join_f32(&self.exposures));
        let _ = writeln!(s, "split.train = {train}");
        let _ = writeln!(s, "split.val = {val}");
        let _ = writeln!(s, "split.test = {test}");
        for sc in &self.scenes {
            let p = format!("scene.{:04}", sc.id);
            let _ = writeln!(s, "{p}.style = {}", sc.style);
            let _ = writeln!(s, "{p}.split = {}", sc.split);
            let _ =
                writeln!(s, "{p}.noise = sigma_r={:?} g_a={:?} g_d={:?}", sc.noise.sigma_r, sc.noise.g_a, sc.noise.g_d);
            for (t, f) in self.exposures.iter().zip(&sc.raw_files) {
                let _ =
                    writeln!(s, "{p}.raw.{} = {} bytes={} sha256={}", exposure_millis(*t), f.name, f.bytes, f.sha256);
            }
            let _ = writeln!(s, "{p}.gt = {} bytes={} sha256={}", sc.gt_file.name, sc.gt_file.bytes, sc.gt_file.sha256);
        }
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once(" = ").ok_or_else(|| bad(format!("line {}: expected `key = value`", n + 1)))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
        fn num<T: std::str::FromStr>(v: &str, k: &str, path: &Path) -> Result<T> {
            v.parse().map_err(|_| Error::format(path, format!("key `{k}`: cannot parse `{v}`")))
        }
        if get("format")? != "lxm" {
            return Err(bad("not an lxm manifest".into()));
        }
        let version: u32 = num(get("version")?, "version", path)?;
        if version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported manifest version {version}")));
        }
        let count: usize = num(get("scenes")?, "scenes", path)?;
        let exposures = get("exposures")?
            .split_whitespace()
            .map(|v| num::<f32>(v, "exposures", path))
            .collect::<Result<Vec<_>>>()?;
        let parse_file = |k: &str| -> Result<FileEntry> {
            let v = get(k)?;
            let mut parts = v.split_whitespace();
            let name = parts.next().ok_or_else(|| bad(format!("key `{k}`: empty")))?.to_string();
            let mut bytes = None;
            let mut sha = None;
            for p in parts {
                match p.split_once('=') {
                    Some(("bytes", b)) => bytes = Some(num::<u64>(b, k, path)?),
                    Some(("sha256", h)) => sha = Some(h.to_string()),
                    _ => return Err(bad(format!("key `{k}`: unexpected field `{p}`"))),
                }
            }
            Ok(FileEntry {
                name,
                bytes: bytes.ok_or_else(|| bad(format!("key `{k}`: missing bytes")))?,
                sha256: sha.ok_or_else(|| bad(format!("key `{k}`: missing sha256")))?,
            })
        };
        let mut scenes = Vec::with_capacity(count);
        for id in 0..count {
            let p = format!("scene.{id:04}");
            let style: SceneStyle = get(&format!("{p}.style"))?.parse()?;
            let split: Split = get(&format!("{p}.split"))?.parse()?;
            let mut noise = NoiseParams::silent();
            for field in get(&format!("{p}.noise"))?.split_whitespace() {
                let (k, v) = field.split_once('=').ok_or_else(|| bad(format!("{p}.noise: bad field")))?;
                let v: f32 = num(v, k, path)?;
                match k {
                    "sigma_r" => noise.sigma_r = v,
                    "g_a" => noise.g_a = v,
                    "g_d" => noise.g_d = v,
                    _ => return Err(bad(format!("{p}.noise: unknown field `{k}`"))),
                }
            }
            let raw_files = exposures
                .iter()
                .map(|t| parse_file(&format!("{p}.raw.{}", exposure_millis(*t))))
                .collect::<Result<Vec<_>>>()?;
            scenes.push(SceneEntry { id, style, split, noise, raw_files, gt_file: parse_file(&format!("{p}.gt"))? });
        }
        Ok(Self {
            version,
            seed: num(get("seed")?, "seed", path)?,
            width: num(get("width")?, "width", path)?,
            height: num(get("height")?, "height", path)?,
            black_level: num(get("black_level")?, "black_level", path)?,
            reference_exposure: num(get("reference_exposure")?, "reference_exposure", path)?,
            exposures,
            scenes,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }

    /// Rows mirroring the dataset summary tables: scene types and capture
    /// properties.
    pub fn summary(&self) -> Vec<(String, String)> {
        let counts = self.style_counts();
        let (train, val, test) = self.split_sizes();
        let ratios: Vec<String> =
            self.exposures.iter().skip(1).map(|t| format!("x{}", (t / self.exposures[0]).round())).collect();
        vec![
            ("Outdoor scenes".into(), counts.get(&SceneStyle::Outdoor).copied().unwrap_or(0).to_string()),
            ("Indoor scenes".into(), counts.get(&SceneStyle::Indoor).copied().unwrap_or(0).to_string()),
            ("Filter array".into(), "Bayer (RGGB)".into()),
            ("Exposure times".into(), self.exposures.iter().map(|t| format!("{t}s")).collect::<Vec<_>>().join(", ")),
            ("Exposure ratios".into(), ratios.join(", ")),
            ("Resolution".into(), format!("{} x {}", self.width, self.height)),
            ("Split train/val/test".into(), format!("{train}/{val}/{test}")),
        ]
    }
}

/// One loaded scene: noisy raws and reference renderings per exposure.
#[derive(Clone, Debug)]
pub struct SceneRecord {
    pub id: usize,
    pub style: SceneStyle,
    pub split: Split,
    pub noise: NoiseParams,
    pub raws: Vec<RawImage>,
    pub references: Vec<SrgbImage>,
}

/// A dataset held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    scenes: Vec<SceneRecord>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        for entry in &manifest.scenes {
            let raws = entry.raw_files.iter().map(|f| read_raw(&dir.join(&f.name))).collect::<Result<Vec<_>>>()?;
            let gt_path = dir.join(&entry.gt_file.name);
            let frames = read_map(&gt_path)?;
            if frames.len() != manifest.exposures.len() {
                return Err(Error::format(
                    &gt_path,
                    format!("{} frames, manifest lists {} exposures", frames.len(), manifest.exposures.len()),
                ));
            }
            scenes.push(SceneRecord {
                id: entry.id,
                style: entry.style,
                split: entry.split,
                noise: entry.noise,
                raws,
                references: frames.into_iter().map(|f| f.image).collect(),
            });
        }
        Ok(Self { manifest, root: dir.to_path_buf(), scenes })
    }

    pub fn scenes(&self) -> &[SceneRecord] {
        &self.scenes
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SceneRecord> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    /// Index of `exposure` in the manifest's exposure list.
    pub fn exposure_index(&self, exposure: f32) -> Result<usize> {
        self.manifest.exposures.iter().position(|&t| (t - exposure).abs() <= 1e-6 * t.max(1.0)).ok_or_else(|| {
            Error::Config(format!(
                "exposure {exposure}s not in dataset (available: {})",
                join_f32(&self.manifest.exposures)
            ))
        })
    }
}
