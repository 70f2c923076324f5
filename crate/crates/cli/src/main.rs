//! `nmat`: generate reference data, train, render and evaluate neural
//! materials.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nmat_core::render::{
    ablation_suite, evaluate, heatmaps, render, render_reference, save_png, write_text, AblationConfig, SceneConfig,
};
use nmat_core::synth::{generate_from, GeneratorConfig, MaterialSpec};
use nmat_core::train::{Trainer, CHECKPOINT_FILE};
use nmat_core::{Checkpoint, Dataset, Error, TrainConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nmat", version, about = "Neural material toolkit")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reference dataset from a procedural heightfield.
    GenData(GenData),
    /// Train a material on a dataset.
    Train(Train),
    /// Continue training from a checkpoint.
    Resume(Resume),
    /// Render a trained material.
    Render(Render),
    /// Score a checkpoint against a dataset.
    Eval(Eval),
    /// Train the four cumulative ablation configurations.
    Ablate(Ablate),
}

#[derive(Args, Clone)]
struct MaterialArgs {
    /// glossy-bumps, woven or image:<path>.
    #[arg(long, default_value = "glossy-bumps")]
    material: String,
    /// Seed of the procedural material layout.
    #[arg(long, default_value_t = 0)]
    material_seed: u64,
}

impl MaterialArgs {
    fn spec(&self) -> Result<MaterialSpec> {
        Ok(MaterialSpec::parse(&self.material, self.material_seed)?)
    }
}

#[derive(Args)]
struct GenData {
    /// Dataset file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    material: MaterialArgs,
    /// Seed for query sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 7)]
    levels: usize,
    /// Samples at level 0; halved per level.
    #[arg(long, default_value_t = 1 << 20)]
    samples: usize,
    /// Side of the patches sharing one light and view.
    #[arg(long, default_value_t = 32)]
    patch: usize,
    /// Per-axis cap on footprint sub-queries.
    #[arg(long, default_value_t = 16)]
    max_subsample: usize,
}

#[derive(Args)]
struct TrainOverrides {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable. Wins over --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainOverrides {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TrainConfig::parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        for s in &self.set {
            let Some((k, v)) = s.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {s:?}");
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct Resume {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// New total iteration count.
    #[arg(long)]
    iterations: Option<u64>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Render {
    #[arg(long)]
    checkpoint: PathBuf,
    /// HDR output (.pfm); a .png preview is written alongside.
    #[arg(long)]
    out: PathBuf,
    /// Scene JSON; the built-in probe view when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// 1 or 4.
    #[arg(long)]
    spp: Option<usize>,
    #[arg(long)]
    tiling: Option<f64>,
    /// Also render this reference material and report the image MSE.
    #[arg(long, value_name = "MATERIAL")]
    reference: Option<String>,
    #[arg(long, default_value_t = 0)]
    material_seed: u64,
    #[arg(long, default_value_t = 16)]
    max_subsample: usize,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-level error heatmaps.
    #[arg(long)]
    heatmaps: Option<PathBuf>,
    /// Patches per heatmap.
    #[arg(long, default_value_t = 4)]
    per_level: usize,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    material: MaterialArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 1 << 17)]
    samples: usize,
    /// Level-0 samples of the held-out test set.
    #[arg(long, default_value_t = 1 << 14)]
    test_samples: usize,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 16)]
    max_subsample: usize,
    #[arg(long, default_value_t = 5000)]
    iterations: u64,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: serde_json::Value,
    seed: u64,
    git_describe: String,
    dataset_hash: Option<String>,
    outputs: Vec<String>,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

/// `dir/manifest.json` for directory outputs, `<file>.manifest.json` for
/// single files.
fn write_manifest(
    at: &Path,
    command: &str,
    config: impl Serialize,
    seed: u64,
    dataset: Option<&Dataset>,
    outputs: &[&Path],
) -> Result<()> {
    let path = if at.is_dir() {
        at.join("manifest.json")
    } else {
        let mut name = at.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        at.with_file_name(name)
    };
    let manifest = Manifest {
        command,
        config: serde_json::to_value(config)?,
        seed,
        git_describe: git_describe(),
        dataset_hash: dataset.map(|d| hex(d.content_hash())),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_text(&path, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn gen_data(args: GenData) -> Result<()> {
    let config = GeneratorConfig {
        material: args.material.spec()?,
        resolution: args.resolution,
        levels: args.levels,
        level0_samples: args.samples,
        patch: args.patch,
        max_subsample_side: args.max_subsample,
        seed: args.seed,
    };
    config.validate()?;
    let mat = config.material.build(config.resolution)?;
    let (ds, stats) = generate_from(&mat, &config)?;
    ds.save(&args.out)?;
    info!("{} samples, {} shades, {} misses", ds.total_samples(), stats.shades, stats.misses);
    println!("{} {}", hex(ds.content_hash()), args.out.display());
    write_manifest(&args.out, "gen-data", &config, config.seed, Some(&ds), &[&args.out])
}

fn log_assumed_defaults(config: &TrainConfig) {
    info!(
        "batch of {} tiles of {}x{}, lr {}, 5% held-out patches: assumed defaults, not values from the method description",
        config.tiles, config.tile_height, config.tile_width, config.adam.lr
    );
}

/// Runs training to completion, saving the last good state on divergence.
fn drive(mut trainer: Trainer<'_>, out: &Path) -> Result<Checkpoint> {
    match trainer.run() {
        Ok(()) => {}
        Err(Error::Diverged { iteration, reason, last_good }) => {
            let path = out.join("last_good.nmat");
            last_good.save(&path)?;
            bail!("training diverged at iteration {iteration}: {reason}; last good state in {}", path.display());
        }
        Err(e) => return Err(e.into()),
    }
    let mut csv = String::from("iteration,total,l1,gradient\n");
    for r in trainer.losses() {
        csv.push_str(&format!("{},{},{},{}\n", r.iteration, r.loss.total, r.loss.l1, r.loss.gradient));
    }
    write_text(out.join("losses.csv"), &csv)?;
    write_text(out.join("validation.json"), &serde_json::to_string_pretty(trainer.validations())?)?;
    if let Some(v) = trainer.validations().last() {
        println!("iteration {} validation mse {:.6e}", v.iteration, v.mse);
    }
    Ok(trainer.checkpoint())
}

fn train(args: Train) -> Result<()> {
    let pairs = args.overrides.pairs()?;
    let mut config = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    config.dataset = Some(args.data.clone());
    config.output = Some(args.out.clone());
    config.validate()?;
    log_assumed_defaults(&config);
    let ds = Dataset::load(&args.data)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let trainer = Trainer::new(config.clone(), &ds)?;
    drive(trainer, &args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    println!("{}", ckpt.display());
    write_manifest(&args.out, "train", &config, config.seed, Some(&ds), &[&ckpt])
}

fn resume(args: Resume) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut config = ckpt.config.clone();
    for s in &args.set {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {s:?}");
        };
        config.set(k.trim(), v.trim())?;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    config.dataset = Some(args.data.clone());
    config.output = Some(args.out.clone());
    config.validate()?;
    let ds = Dataset::load(&args.data)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let trainer = Trainer::resume(ckpt, config.clone(), &ds)?;
    drive(trainer, &args.out)?;
    let out = args.out.join(CHECKPOINT_FILE);
    println!("{}", out.display());
    write_manifest(&args.out, "resume", &config, config.seed, Some(&ds), &[&out])
}

fn render_cmd(args: Render) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut scene = match &args.scene {
        Some(path) => SceneConfig::load(path)?,
        None => SceneConfig::probe(),
    };
    scene.width = args.width.unwrap_or(scene.width);
    scene.height = args.height.unwrap_or(scene.height);
    scene.spp = args.spp.unwrap_or(scene.spp);
    scene.tiling = args.tiling.unwrap_or(scene.tiling);
    scene.validate()?;
    let image = render(&scene, &ckpt.model)?;
    image.save_pfm(&args.out)?;
    let png = args.out.with_extension("png");
    image.save_png(&png)?;
    let mut outputs = vec![args.out.clone(), png];
    if let Some(material) = &args.reference {
        let resolution = ckpt.model.config().base_resolution;
        let mat = MaterialSpec::parse(material, args.material_seed)?.build(resolution)?;
        let reference = render_reference(&scene, &mat, ckpt.model.num_levels(), args.max_subsample, ckpt.config.seed)?;
        let stem = args.out.with_extension("");
        let path = PathBuf::from(format!("{}.reference.pfm", stem.display()));
        reference.save_pfm(&path)?;
        reference.save_png(path.with_extension("png"))?;
        println!("image mse {:.6e}", image.mse(&reference)?);
        outputs.push(path);
    }
    println!("{}", args.out.display());
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&args.out, "render", &scene, ckpt.config.seed, None, &refs)
}

fn eval(args: Eval) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = Dataset::load(&args.data)?;
    let report = evaluate(&ckpt.model, &ds, Some(&ckpt.config.loss()))?;
    write_text(&args.out, &report.to_json())?;
    let mut outputs = vec![args.out.clone()];
    if let Some(dir) = &args.heatmaps {
        for (l, img) in heatmaps(&ckpt.model, &ds, args.per_level)?.iter().enumerate() {
            let path = dir.join(format!("level{l}.png"));
            save_png(img, &path)?;
            outputs.push(path);
        }
    }
    for l in &report.levels {
        println!("level {} mse x1e3 {:.4} ({} samples)", l.level, l.mse_x1e3, l.samples);
    }
    println!("overall mse x1e3 {:.4}", report.mse_x1e3);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&args.out, "eval", &ckpt.config, ckpt.config.seed, Some(&ds), &refs)
}

fn ablate(args: Ablate) -> Result<()> {
    let mut pairs = vec![("iterations".to_string(), args.iterations.to_string())];
    pairs.push(("seed".into(), args.seed.to_string()));
    pairs.extend(args.overrides.pairs()?);
    let base = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    base.validate()?;
    log_assumed_defaults(&base);
    let gen = GeneratorConfig {
        material: args.material.spec()?,
        resolution: args.resolution,
        levels: args.resolution.trailing_zeros() as usize + 1,
        level0_samples: args.samples,
        patch: args.patch,
        max_subsample_side: args.max_subsample,
        seed: args.seed,
    };
    gen.validate()?;
    let mat = gen.material.build(gen.resolution)?;
    let (train_ds, _) = generate_from(&mat, &gen)?;
    let test_gen = GeneratorConfig {
        level0_samples: args.test_samples,
        seed: args.seed.wrapping_add(1),
        ..gen.clone()
    };
    let (test_ds, _) = generate_from(&mat, &test_gen)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let config = AblationConfig {
        base: base.clone(),
        probe: SceneConfig::probe(),
        max_subsample_side: args.max_subsample,
        output: Some(args.out.clone()),
    };
    let report = ablation_suite(&mat, &train_ds, &test_ds, &config)?;
    for c in &report.columns {
        match c.mse_x1e3 {
            Some(m) => println!("{:<16} mse x1e3 {m:.4} ({})", c.name, c.status),
            None => println!("{:<16} no result ({})", c.name, c.status),
        }
    }
    if !report.monotone {
        warn!("column errors are not monotone within {:.0}% slack", report.slack * 100.0);
    }
    let strip = args.out.join("strip.png");
    let json = args.out.join("ablation.json");
    write_manifest(
        &args.out,
        "ablate",
        serde_json::json!({ "train": base, "generator": gen, "test_generator": test_gen }),
        args.seed,
        Some(&train_ds),
        &[&strip, &json],
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Resume(a) => resume(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
