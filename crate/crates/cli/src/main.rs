//! `contexp`: synthesize datasets, train and fine-tune models, enhance raws,
//! run the evaluation protocols and serve the tuning API.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage, 3 invalid input,
//! 4 I/O, 5 malformed file, 6 training failure, 7 missing checkpoint.

mod exit;

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use contexp_core::eval::protocol::{ablate_direction, ablate_filter_size, run_protocol, ModelZoo, Protocol, Recipe};
use contexp_core::eval::MetricReport;
use contexp_core::model::{
    build_unet, enhance, finetune_modulation, load_checkpoint, save_checkpoint, train_base, Model, TrainReport,
};
use contexp_core::raw::{pack_bayer, KnobBounds};
use contexp_core::sensor::dataset::MANIFEST_NAME;
use contexp_core::sensor::format::read_raw;
use contexp_core::sensor::{build_dataset, Dataset, DatasetConfig, DatasetManifest};
use contexp_serve::{ServeConfig, DEFAULT_PORT, DEFAULT_PREVIEW_SCALE};
use serde_json::{json, Value};

use crate::exit::{CliError, Code};

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "contexp", version, about = "Continuous-exposure enhancement of low-light raw images")]
struct Cli {
    /// Machine-readable JSON summaries on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic raw dataset with manifest.
    Synth(SynthArgs),
    /// Train a base network on one target exposure, or several for a mixed model.
    Train(TrainArgs),
    /// Insert modulation into a base checkpoint and fine-tune it toward a final exposure.
    Finetune(FinetuneArgs),
    /// Enhance one raw file with the given knobs.
    Enhance(EnhanceArgs),
    /// Run an evaluation protocol (A-D) and write its metric report.
    Eval(EvalArgs),
    /// Run an ablation study and write its metric report.
    Ablate(AblateArgs),
    /// Start the local tuning HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    scenes: usize,
    /// Mosaic size as WIDTHxHEIGHT; both must be even.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    black_level: f32,
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing dataset in --out.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Depth 4, 8 base channels, 64-pixel patches, 200+200 base and 200 fine-tuning epochs.
    Desk,
    /// 32-pixel patches, 60+20 base and 60 fine-tuning epochs at 1e-3/1e-4.
    Quick,
}

/// Recipe selection. Precedence: flags, then --config, then the preset.
#[derive(Args, Debug, Clone)]
struct RecipeArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    recipe: Preset,
    /// JSON file with any subset of the recipe fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds initialisation, patch sampling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    epochs_high: Option<usize>,
    #[arg(long)]
    epochs_low: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    lr_high: Option<f32>,
    #[arg(long)]
    lr_low: Option<f32>,
    /// Exposure time of the network input, in seconds.
    #[arg(long)]
    input_exposure: Option<f32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target exposure(s) in seconds; a comma list trains a mixed model.
    #[arg(long, value_delimiter = ',', required = true)]
    target: Vec<f32>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Base checkpoint; it is read, never modified.
    #[arg(long)]
    base: PathBuf,
    /// Final target exposure in seconds.
    #[arg(long = "final")]
    final_exposure: f32,
    /// Modulation kernel size: 1, 3, 5 or 7.
    #[arg(long, default_value_t = 3)]
    filter: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    alpha1: f32,
    #[arg(long)]
    alpha2: f32,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Allow alpha2 in [-0.5, 1.5].
    #[arg(long)]
    extrapolate: bool,
}

#[derive(Args, Debug)]
struct ZooArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory with the checkpoints the study needs.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Directory for the .txt and .csv reports.
    #[arg(long)]
    out: PathBuf,
    /// Train and save missing checkpoints instead of failing.
    #[arg(long)]
    train_missing: bool,
    #[command(flatten)]
    recipe: RecipeArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
    #[command(flatten)]
    zoo: ZooArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Study {
    Filter,
    Direction,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, value_enum)]
    study: Study,
    /// Kernel sizes for the filter study.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
    sizes: Vec<usize>,
    #[command(flatten)]
    zoo: ZooArgs,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long)]
    extrapolate: bool,
    /// Default preview scale in (0, 1].
    #[arg(long, default_value_t = DEFAULT_PREVIEW_SCALE)]
    scale: f32,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("`{s}` is not WIDTHxHEIGHT"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(w)?, parse(h)?))
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: contexp_core::Error| e.to_string())
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

impl RecipeArgs {
    fn resolve(&self) -> CliResult<Recipe> {
        let preset = match self.recipe {
            Preset::Desk => Recipe::default(),
            Preset::Quick => Recipe::quick(),
        };
        let mut value = serde_json::to_value(preset).expect("recipe serialises");
        if let Some(path) = &self.config {
            let text =
                std::fs::read_to_string(path).map_err(|e| contexp_core::Error::Io { path: path.clone(), source: e })?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| contexp_core::Error::Format { path: path.clone(), reason: e.to_string() })?;
            merge(&mut value, patch);
        }
        let mut r: Recipe = serde_json::from_value(value).map_err(|e| CliError {
            code: Code::InvalidInput,
            message: format!("invalid recipe config: {e}"),
            hint: Some(
                "fields: unet{depth, base_channels, slope}, schedule{...}, init_seed, filter_size, input_exposure"
                    .into(),
            ),
        })?;
        if let Some(s) = self.seed {
            r.init_seed = s;
            r.schedule.seed = s;
        }
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut r.unet.depth, self.depth);
        set(&mut r.unet.base_channels, self.base_channels);
        set(&mut r.schedule.patch_size, self.patch);
        set(&mut r.schedule.base_epochs_high, self.epochs_high);
        set(&mut r.schedule.base_epochs_low, self.epochs_low);
        set(&mut r.schedule.finetune_epochs, self.finetune_epochs);
        r.schedule.lr_high = self.lr_high.unwrap_or(r.schedule.lr_high);
        r.schedule.lr_low = self.lr_low.unwrap_or(r.schedule.lr_low);
        r.input_exposure = self.input_exposure.unwrap_or(r.input_exposure);
        r.unet.validate()?;
        r.schedule.validate()?;
        eprintln!("recipe: {}", serde_json::to_string(&r).expect("recipe serialises"));
        Ok(r)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let json = cli.json;
    match cli.command {
        Command::Synth(a) => synth(a, json),
        Command::Train(a) => train(a, json),
        Command::Finetune(a) => finetune(a, json),
        Command::Enhance(a) => enhance_cmd(a, json),
        Command::Eval(a) => {
            let protocol = a.protocol;
            study(a.zoo, json, |zoo| run_protocol(protocol, zoo))
        }
        Command::Ablate(a) => {
            let sizes = a.sizes;
            match a.study {
                Study::Filter => study(a.zoo, json, |zoo| ablate_filter_size(zoo, &sizes)),
                Study::Direction => study(a.zoo, json, ablate_direction),
            }
        }
        Command::Serve(a) => serve(a),
    }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn is_dataset_file(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name == MANIFEST_NAME || name.ends_with(".lxrw") || name.ends_with(".lxpm")
}

fn synth(a: SynthArgs, json: bool) -> CliResult {
    let config =
        DatasetConfig { scenes: a.scenes, width: a.size.0, height: a.size.1, seed: a.seed, black_level: a.black_level };
    config.validate()?;
    if let Ok(entries) = std::fs::read_dir(&a.out) {
        let files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        if !files.is_empty() {
            if !a.force {
                return Err(CliError::usage(
                    format!("output directory {} is not empty", a.out.display()),
                    "pass --force to replace the dataset in it, or choose another --out",
                ));
            }
            // only our own files are removed; anything else stays put
            for f in files.iter().filter(|f| f.is_file() && is_dataset_file(f)) {
                std::fs::remove_file(f).map_err(|e| contexp_core::Error::Io { path: f.clone(), source: e })?;
            }
        }
    }
    let manifest = build_dataset(&config, &a.out)?;
    let hash = manifest.hash();
    if json {
        let (train, val, test) = manifest.split_sizes();
        let summary: serde_json::Map<String, Value> =
            manifest.summary().into_iter().map(|(k, v)| (k, Value::String(v))).collect();
        print_json(&json!({
            "dataset": a.out,
            "manifest_hash": hash,
            "split": { "train": train, "val": val, "test": test },
            "summary": summary,
        }));
    } else {
        print_summary(&manifest);
        println!("manifest hash  {hash}");
        println!("written to     {}", a.out.display());
    }
    Ok(())
}

fn print_summary(m: &DatasetManifest) {
    let rows = m.summary();
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}

fn write_log(out: &Path, report: &TrainReport) -> CliResult<PathBuf> {
    let path = out.with_extension("log");
    std::fs::write(&path, report.metrics_log())
        .map_err(|e| contexp_core::Error::Io { path: path.clone(), source: e })?;
    Ok(path)
}

fn training_summary(model: &Model, out: &Path, log: &Path, report: &TrainReport, json: bool) {
    let last = report.smoothed_final(10);
    if json {
        print_json(&json!({
            "checkpoint": out,
            "log": log,
            "epochs": report.epochs.len(),
            "final_loss": last,
            "anchors": model.anchors,
            "parameters": model.param_count(),
        }));
    } else {
        println!("epochs         {}", report.epochs.len());
        println!("final L1       {last:.5}");
        for a in &model.anchors {
            println!("anchor         alpha1 {} alpha2 {} ({} s)", a.alpha1, a.alpha2, a.exposure);
        }
        println!("checkpoint     {}", out.display());
        println!("loss log       {}", log.display());
    }
}

fn refuse_overwrite(input: &Path, out: &Path) -> CliResult {
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(CliError::usage(
            format!("--out {} would overwrite an input", out.display()),
            "write to a different path",
        ));
    }
    Ok(())
}

fn train(a: TrainArgs, json: bool) -> CliResult {
    let recipe = a.recipe.resolve()?;
    let ds = Dataset::open(&a.data)?;
    let mut model = build_unet(recipe.unet, recipe.init_seed)?;
    let report = train_base(&mut model, &ds, recipe.input_exposure, &a.target, &recipe.schedule)?;
    save_checkpoint(&model, &a.out)?;
    let log = write_log(&a.out, &report)?;
    training_summary(&model, &a.out, &log, &report, json);
    Ok(())
}

fn finetune(a: FinetuneArgs, json: bool) -> CliResult {
    refuse_overwrite(&a.base, &a.out)?;
    let recipe = a.recipe.resolve()?;
    let ds = Dataset::open(&a.data)?;
    let mut model = load_checkpoint(&a.base)?;
    model.insert_modulation(a.filter)?;
    let report = finetune_modulation(&mut model, &ds, recipe.input_exposure, a.final_exposure, &recipe.schedule)?;
    save_checkpoint(&model, &a.out)?;
    let log = write_log(&a.out, &report)?;
    training_summary(&model, &a.out, &log, &report, json);
    Ok(())
}

fn enhance_cmd(a: EnhanceArgs, json: bool) -> CliResult {
    refuse_overwrite(&a.input, &a.out)?;
    let knobs = KnobBounds::new(a.extrapolate).check(a.alpha1, a.alpha2)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let packed = pack_bayer(&read_raw(&a.input)?);
    let image = enhance(&model, &packed, knobs)?;
    image.save_png(&a.out)?;
    if json {
        print_json(&json!({
            "out": a.out,
            "width": image.width(),
            "height": image.height(),
            "alpha1": knobs.alpha1,
            "alpha2": knobs.alpha2,
            "mean": image.mean(),
        }));
    } else {
        println!(
            "{} ({}x{}, alpha1 {}, alpha2 {})",
            a.out.display(),
            image.width(),
            image.height(),
            knobs.alpha1,
            knobs.alpha2
        );
    }
    Ok(())
}

fn study(a: ZooArgs, json: bool, f: impl FnOnce(&mut ModelZoo<'_>) -> contexp_core::Result<MetricReport>) -> CliResult {
    let recipe = a.recipe.resolve()?;
    let ds = Dataset::open(&a.data)?;
    let mut zoo = if a.train_missing {
        ModelZoo::training(&ds, recipe, Some(a.checkpoints.clone()))
    } else {
        ModelZoo::read_only(&ds, recipe, a.checkpoints.clone())
    };
    let report = f(&mut zoo)?;
    report.write(&a.out, &report.experiment)?;
    let txt = a.out.join(format!("{}.txt", report.experiment));
    if json {
        let rows: Vec<Value> = report
            .rows
            .iter()
            .map(|r| {
                json!({
                    "method": r.method,
                    "trained": r.trained,
                    "test_s": r.test_exposure,
                    "alpha1": r.alpha1,
                    "alpha2": r.alpha2,
                    "psnr_db": r.mean_psnr(),
                    "ssim": r.mean_ssim(),
                })
            })
            .collect();
        let checks: Vec<Value> =
            report.checks.iter().map(|c| json!({ "name": c.name, "passed": c.passed, "detail": c.detail })).collect();
        print_json(&json!({
            "experiment": report.experiment,
            "fingerprint": report.fingerprint,
            "report": txt,
            "rows": rows,
            "checks": checks,
        }));
    } else {
        print!("{}", report.to_text());
        println!("report written to {}", txt.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    for dir in [&a.checkpoints, &a.images] {
        if !dir.is_dir() {
            return Err(CliError {
                code: Code::Io,
                message: format!("{} is not a directory", dir.display()),
                hint: Some("--checkpoints and --images must name existing directories".into()),
            });
        }
    }
    if !(a.scale > 0.0 && a.scale <= 1.0) {
        return Err(CliError::usage(format!("--scale {} outside (0, 1]", a.scale), "use e.g. --scale 0.5"));
    }
    let mut config = ServeConfig::new(a.checkpoints, a.images);
    config.extrapolate = a.extrapolate;
    config.preview_scale = a.scale;
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError {
        code: Code::Internal,
        message: format!("cannot start the async runtime: {e}"),
        hint: None,
    })?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(contexp_serve::serve(config, addr)).map_err(|e| CliError {
        code: Code::Io,
        message: format!("serving on {addr}: {e}"),
        hint: Some("pick a free --port".into()),
    })
}
