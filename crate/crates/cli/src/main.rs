//! `asnet`: simulate ring-array data, fold signals, beamform, train and
//! evaluate the reconstruction network, and report model complexity.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use asnet_core::beamform::{das_reconstruct_with, DasFilter};
use asnet_core::dataset::{
    read_f32_file, read_f32_file_any, read_manifest, write_f32_file, write_json, Split,
};
use asnet_core::fold::{fold, FoldSidecar};
use asnet_core::nn::{load_checkpoint, NetConfig};
use asnet_core::pgm::render_pgm;
use asnet_core::simulate::{make_geometry, simulate_dataset, PhantomConfig, SimulationConfig};
use asnet_core::train::{
    complexity_report, evaluate, net_config_for, train, write_eval_report, Ablation,
    ComplexityComparison, TrainConfig,
};
use asnet_core::{ArrayGeometry, ImageGrid, RawSignalMatrix};

#[derive(Parser)]
#[command(
    name = "asnet",
    version,
    about = "Sparse-view photoacoustic reconstruction toolkit"
)]
struct Cli {
    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run on a single worker thread. Outputs are identical either way.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Use full-size defaults (128 px grid, 2560 samples, full widths,
    /// 600 epochs, batch 16) instead of the CPU-sized ones.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vessel dataset.
    Simulate(SimulateArgs),
    /// Fold one signal file into a q × N × N cube.
    Fold(FoldArgs),
    /// Delay-and-sum reconstruction of one signal file.
    Das(DasArgs),
    /// Train the network on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint and the sparse DAS baseline on a dataset.
    Eval(EvalArgs),
    /// Parameter count, FLOPs and latency of a network configuration.
    Complexity(ComplexityArgs),
    /// Write a float image file as a PGM.
    Render(RenderArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Sensors in the sparse ring.
    #[arg(long, default_value_t = 32)]
    elements: usize,
    /// Ring radius.
    #[arg(long, default_value_t = 18.0)]
    radius_mm: f64,
    /// Sampling rate.
    #[arg(long, default_value_t = 40.0)]
    fs_mhz: f64,
    /// Time samples per signal [default: 768, or 2560 with --paper-scale].
    #[arg(long)]
    points: Option<usize>,
    /// Image side in pixels [default: 64, or 128 with --paper-scale].
    #[arg(long)]
    grid: Option<usize>,
    /// Side of the square field of view.
    #[arg(long, default_value_t = 12.7)]
    fov_mm: f64,
    /// Speed of sound.
    #[arg(long, default_value_t = 1500.0)]
    speed_mps: f64,
    /// Transducer center frequency.
    #[arg(long, default_value_t = 5.0)]
    fc_mhz: f64,
    /// Fractional bandwidth of the transducer.
    #[arg(long, default_value_t = 0.8)]
    bandwidth: f64,
    /// Elements of the dense array used for training targets (0 = none).
    #[arg(long, default_value_t = 128)]
    dense_elements: usize,
    /// Gaussian noise, relative to each signal's peak magnitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Split label recorded in the manifest.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    /// Seed for phantoms and noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct FoldArgs {
    /// Signal file (row-major little-endian f32, time × sensor).
    #[arg(long = "in")]
    input: PathBuf,
    /// Time samples.
    #[arg(long)]
    m: usize,
    /// Sensors.
    #[arg(long)]
    n: usize,
    /// Folded side N [default: 64, or 128 with --paper-scale].
    #[arg(long)]
    side: Option<usize>,
    /// Output directory for the cube and its JSON sidecar.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DasArgs {
    /// Signal file (row-major little-endian f32, time × sensor).
    #[arg(long = "in")]
    input: PathBuf,
    /// Dataset manifest or geometry JSON.
    #[arg(long)]
    geometry: PathBuf,
    /// Pre-filter applied to each channel before summing.
    #[arg(long, value_enum, default_value_t = FilterArg::Quadrature)]
    filter: FilterArg,
    /// Also write a PGM rendering.
    #[arg(long)]
    pgm: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Quadrature,
    Raw,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Training epochs [default: 60, or 600 with --paper-scale].
    #[arg(long)]
    epochs: Option<usize>,
    /// Samples per optimizer step [default: 8, or 16 with --paper-scale].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate; multiplied by 0.2 every 50 epochs.
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// Weight of the reconstruction loss.
    #[arg(long, default_value_t = 0.2)]
    lambda_r: f64,
    /// Weight of the auxiliary (image-path) loss.
    #[arg(long, default_value_t = 1.0)]
    lambda_a: f64,
    /// Model variant to train.
    #[arg(long, value_enum, default_value_t = AblationArg::Full)]
    ablation: AblationArg,
    /// Network configuration JSON (overrides the width preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for weight initialization and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (checkpoint, loss log, configuration).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AblationArg {
    Full,
    NoFt,
    NoSfe,
    NoBpr,
    NoAux,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoFt => Ablation::NoFt,
            AblationArg::NoSfe => Ablation::NoSfe,
            AblationArg::NoBpr => Ablation::NoBpr,
            AblationArg::NoAux => Ablation::NoAux,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Directory for eval.csv and eval.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ComplexityArgs {
    /// Network configuration JSON [default: the preset for the chosen scale].
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    /// Take configuration and weights from a checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also report the unfolded-stem variant and the ratios between the two.
    #[arg(long)]
    compare_no_ft: bool,
    /// Timed forward passes (after 3 warm-up runs).
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Seed for the weights used in timing.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for complexity.json; the report is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Square image file (row-major little-endian f32).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory, or a path ending in .pgm.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// The error and its causes, skipping causes already quoted by an outer message.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic {
        Some(1)
    } else {
        cli.threads
    };
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let full = cli.paper_scale;
    match cli.cmd {
        Command::Simulate(a) => cmd_simulate(a, full),
        Command::Fold(a) => cmd_fold(a, full),
        Command::Das(a) => cmd_das(a),
        Command::Train(a) => cmd_train(a, full),
        Command::Eval(a) => cmd_eval(a),
        Command::Complexity(a) => cmd_complexity(a, full),
        Command::Render(a) => cmd_render(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_simulate(a: SimulateArgs, full: bool) -> Result<()> {
    let grid = a.grid.unwrap_or(if full { 128 } else { 64 });
    let points = a.points.unwrap_or(if full { 2560 } else { 768 });
    let geometry = make_geometry(
        a.elements,
        a.radius_mm * 1e-3,
        a.fov_mm * 1e-3,
        grid,
        a.speed_mps,
        a.fs_mhz * 1e6,
        a.fc_mhz * 1e6,
        a.bandwidth,
    )?;
    let cfg = SimulationConfig {
        phantom: PhantomConfig::for_grid(grid, a.seed),
        geometry,
        m: points,
        n_samples: a.n,
        split: match a.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        },
        dense_elements: (a.dense_elements > 0).then_some(a.dense_elements),
        noise_std: a.noise,
    };
    let manifest = simulate_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} samples ({}x{} signals, {}x{} images) to {}",
        manifest.n_samples,
        manifest.signal_shape.0,
        manifest.signal_shape.1,
        grid,
        grid,
        a.out.display()
    );
    Ok(())
}

fn read_signal(path: &Path, m: usize, n: usize, fs_hz: f64) -> Result<RawSignalMatrix> {
    let data = read_f32_file(path, m * n)?;
    Ok(RawSignalMatrix::from_vec(m, n, fs_hz, data)?)
}

fn cmd_fold(a: FoldArgs, full: bool) -> Result<()> {
    let side = a.side.unwrap_or(if full { 128 } else { 64 });
    // the sampling rate does not enter the folded layout
    let s = read_signal(&a.input, a.m, a.n, 1.0)?;
    let f = fold(&s, side, true)?;
    create_dir(&a.out)?;
    let stem = file_stem(&a.input);
    let cube = a.out.join(format!("{stem}.fold.f32"));
    write_f32_file(&cube, &f.data)?;
    write_json(
        &a.out.join(format!("{stem}.fold.json")),
        &FoldSidecar::of(&f, a.m, a.n),
    )?;
    println!(
        "{} -> {}x{}x{} ({})",
        a.input.display(),
        f.q,
        side,
        side,
        cube.display()
    );
    Ok(())
}

/// Geometry from a dataset manifest or a bare geometry object.
fn load_geometry(path: &Path) -> Result<(ArrayGeometry, Option<usize>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("geometry").is_some() {
        let manifest = read_manifest(path)?;
        return Ok((manifest.geometry, Some(manifest.signal_shape.0)));
    }
    let geometry: ArrayGeometry = serde_json::from_value(value)
        .with_context(|| format!("bad geometry in {}", path.display()))?;
    Ok((geometry, None))
}

fn cmd_das(a: DasArgs) -> Result<()> {
    let (geometry, m_declared) = load_geometry(&a.geometry)?;
    let data = read_f32_file_any(&a.input)?;
    let n = geometry.n_elements;
    if data.len() % n != 0 {
        bail!(
            "{} holds {} values, not a multiple of {n} sensors",
            a.input.display(),
            data.len()
        );
    }
    let m = data.len() / n;
    if let Some(md) = m_declared.filter(|&md| md != m) {
        bail!(
            "{} holds {m} time samples but the manifest declares {md}",
            a.input.display()
        );
    }
    let s = RawSignalMatrix::from_vec(m, n, geometry.fs_hz, data)?;
    let filter = match a.filter {
        FilterArg::Quadrature => DasFilter::Quadrature,
        FilterArg::Raw => DasFilter::Raw,
    };
    let img = das_reconstruct_with(&s, &geometry, filter)?;
    create_dir(&a.out)?;
    let stem = file_stem(&a.input);
    let path = a.out.join(format!("{stem}.das.f32"));
    write_f32_file(&path, &img.data)?;
    if a.pgm {
        render_pgm(&img, &a.out.join(format!("{stem}.das.pgm")))?;
    }
    println!("{} -> {}", a.input.display(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    train: &'a TrainConfig,
    network: &'a NetConfig,
    dataset: String,
}

fn cmd_train(a: TrainArgs, full: bool) -> Result<()> {
    let defaults = if full {
        TrainConfig::full_size()
    } else {
        TrainConfig::default()
    };
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        base_lr: a.lr,
        lambda_r: a.lambda_r,
        lambda_a: a.lambda_a,
        seed: a.seed,
        ablation: a.ablation.into(),
        ..defaults
    };
    let net = match &a.config {
        Some(path) => read_net_config(path)?,
        None => {
            let manifest = read_manifest(&a.data.join(asnet_core::dataset::MANIFEST_FILE))?;
            net_config_for(&manifest, !full, a.seed)
        }
    };
    let outcome = train(&a.data, &cfg, &net, &a.out)?;
    write_json(
        &a.out.join("train_config.json"),
        &TrainRecord {
            train: &cfg,
            network: &outcome.net_config,
            dataset: a.data.display().to_string(),
        },
    )?;
    if let Some(last) = outcome.epochs.last() {
        println!("epoch {} loss {:.6}", last.epoch, last.loss);
    }
    println!("checkpoint {}", outcome.checkpoint.display());
    Ok(())
}

fn read_net_config(path: &Path) -> Result<NetConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: NetConfig = serde_json::from_str(&text)
        .with_context(|| format!("bad network config in {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let report = evaluate(&a.checkpoint, &a.data)?;
    let (csv, json) = write_eval_report(&report, &a.out)?;
    for s in &report.summary {
        println!(
            "{:<11} SSIM {:.4} ± {:.4}  PSNR {:.2} ± {:.2} dB  (n = {})",
            s.method, s.ssim_mean, s.ssim_std, s.psnr_mean, s.psnr_std, s.n
        );
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn cmd_complexity(a: ComplexityArgs, full: bool) -> Result<()> {
    let (cfg, params) = match (&a.config, &a.checkpoint) {
        (Some(path), _) => (read_net_config(path)?, None),
        (None, Some(ckpt)) => {
            let (cfg, params) = load_checkpoint(ckpt)?;
            (cfg, Some(params))
        }
        (None, None) if full => (NetConfig::full_size(20, 128, a.seed), None),
        (None, None) => (NetConfig::desk(12, 64, a.seed), None),
    };
    cfg.validate()?;
    let report = complexity_report(&cfg, params.as_ref(), a.runs);
    let value = if a.compare_no_ft {
        let mut ft_cfg = cfg.clone();
        ft_cfg.use_ft_stem = true;
        let mut raw_cfg = cfg.clone();
        raw_cfg.use_ft_stem = false;
        let (ft, raw) = if cfg.use_ft_stem {
            (report, complexity_report(&raw_cfg, None, a.runs))
        } else {
            (complexity_report(&ft_cfg, None, a.runs), report)
        };
        serde_json::to_value(ComplexityComparison::new(ft, raw))?
    } else {
        serde_json::to_value(report)?
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("complexity.json"), &value)?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let data = read_f32_file_any(&a.input)?;
    let n = (data.len() as f64).sqrt().round() as usize;
    if n * n != data.len() || n == 0 {
        bail!(
            "{} holds {} values, not a square image",
            a.input.display(),
            data.len()
        );
    }
    let img = ImageGrid::from_vec(n, 1.0, data)?;
    let out = if a.out.extension().is_some_and(|e| e == "pgm") {
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        a.out.clone()
    } else {
        create_dir(&a.out)?;
        a.out.join(format!("{}.pgm", file_stem(&a.input)))
    };
    render_pgm(&img, &out)?;
    println!("{} -> {}", a.input.display(), out.display());
    Ok(())
}
