//! `destripe`: detect, simulate, remove and score stripe artifacts in
//! volumetric images.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use destripe_core::io::save_mask;
use destripe_core::network::manifest_path;
use destripe_core::pipeline::initial_parameters;
use destripe_core::training::write_training_csv;
use destripe_core::{
    degrade, destripe, detect, evaluate, generate_stripe_field, load_checkpoint, load_config,
    load_volume, make_phantom, save_checkpoint, save_volume, AxisChoice, DestripeError, ErrorKind,
    RunConfig, StripeModel, Volume, VolumeFormat,
};
use log::info;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "destripe",
    version,
    about = "Self-supervised stripe artifact removal for volumetric images"
)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run configuration (JSON); absent keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configuration's rng_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Where to write the JSON report.
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the stripe direction and write the corruption scores W and mask M.
    Detect(DetectArgs),
    /// Write a phantom, a stripe field and their product.
    Simulate(SimulateArgs),
    /// Remove stripes from a volume.
    Destripe(DestripeArgs),
    /// Score a volume against a reference.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct DetectArgs {
    input: PathBuf,
    /// Directory receiving W.raw and M.raw.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// auto, horizontal, vertical or an angle in degrees.
    #[arg(long, default_value = "auto")]
    stripe_axis: AxisChoice,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Stripe model (JSON); defaults to the built-in model.
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Volume shape as z,y,x.
    #[arg(long, default_value = "8,64,64", value_parser = parse_shape)]
    shape: (usize, usize, usize),
    #[arg(long, value_enum, default_value = "tiff")]
    format: Format,
}

#[derive(Args, Debug)]
struct DestripeArgs {
    input: PathBuf,
    output: PathBuf,
    /// auto, horizontal, vertical or an angle in degrees; defaults to the
    /// input's metadata.
    #[arg(long)]
    stripe_axis: Option<AxisChoice>,
    /// Skip training and use these parameters.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Where to save trained parameters [default: OUTPUT.ckpt].
    #[arg(long, value_name = "PATH")]
    save_checkpoint: Option<PathBuf>,
    /// Where to write the per-epoch training log [default: OUTPUT.training.csv].
    #[arg(long, value_name = "PATH")]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    estimate: PathBuf,
    reference: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Format {
    Tiff,
    Raw,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Tiff => "tif",
            Format::Raw => "raw",
        }
    }

    fn volume_format(self) -> VolumeFormat {
        match self {
            Format::Tiff => VolumeFormat::TiffMultipage,
            Format::Raw => VolumeFormat::RawF32,
        }
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [d, h, w] if d > 0 && h > 0 && w > 0 => Ok((d, h, w)),
        _ => Err("expected three positive integers z,y,x".into()),
    }
}

fn exit_code(e: &DestripeError) -> u8 {
    match e.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
    }
}

fn read_volume(path: &Path) -> Result<Volume, DestripeError> {
    load_volume(path, VolumeFormat::from_path(path))
}

fn write_volume(v: &Volume, path: &Path) -> Result<(), DestripeError> {
    save_volume(v, path, VolumeFormat::from_path(path))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DestripeError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| DestripeError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), DestripeError> {
    fs::create_dir_all(dir).map_err(|e| DestripeError::io(dir, e))
}

/// `path` with `suffix` appended to its full file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_config(cli: &Cli) -> Result<RunConfig, DestripeError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_detect(cli: &Cli, args: &DetectArgs) -> Result<(), DestripeError> {
    let cfg = run_config(cli)?;
    let v = read_volume(&args.input)?;
    let det = detect(&v, &cfg, args.stripe_axis)?;
    create_dir(&args.out_dir)?;
    let w = Volume::from_array(det.field.w.clone())?;
    save_volume(&w, &args.out_dir.join("W.raw"), VolumeFormat::RawF32)?;
    save_mask(&det.field.mask_u8(), &args.out_dir.join("M.raw"))?;
    let report = det.report();
    info!(
        "stripe angle {:.1} (confidence {:.2}), {} bins masked",
        report.stripe_angle, report.confidence, report.masked_bin_count
    );
    let path = cli
        .report
        .clone()
        .unwrap_or_else(|| args.out_dir.join("detect_report.json"));
    write_json(&report, &path)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), DestripeError> {
    let cfg = run_config(cli)?;
    let model: StripeModel = match &args.model {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| DestripeError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| DestripeError::Format {
                path: p.clone(),
                reason: e.to_string(),
            })?
        }
        None => StripeModel::default(),
    };
    let clean = make_phantom(args.shape, cfg.rng_seed)?;
    let stripes = generate_stripe_field(args.shape, &model, cfg.rng_seed)?;
    let degraded = degrade(&clean, &stripes)?;
    create_dir(&args.out_dir)?;
    let ext = args.format.extension();
    for (name, v) in [
        ("clean", &clean),
        ("stripes", &stripes),
        ("degraded", &degraded),
    ] {
        save_volume(
            v,
            &args.out_dir.join(format!("{name}.{ext}")),
            args.format.volume_format(),
        )?;
    }
    write_json(&model, &args.out_dir.join("stripe_model.json"))?;
    if let Some(path) = &cli.report {
        let scores = evaluate(&degraded, &clean, 1.0)?;
        write_json(&scores, path)?;
    }
    Ok(())
}

fn cmd_destripe(cli: &Cli, args: &DestripeArgs) -> Result<(), DestripeError> {
    let cfg = run_config(cli)?;
    let v = read_volume(&args.input)?;
    let checkpoint = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p, &initial_parameters(&cfg))?),
        None => None,
    };
    let axis = args.stripe_axis.unwrap_or_default();
    let outcome = destripe(&v, &cfg, axis, checkpoint)?;
    write_volume(&outcome.output, &args.output)?;
    if let (Some(params), None) = (&outcome.params, &args.checkpoint) {
        let path = args
            .save_checkpoint
            .clone()
            .unwrap_or_else(|| with_suffix(&args.output, ".ckpt"));
        save_checkpoint(params, &path)?;
        info!(
            "checkpoint written to {} (manifest {})",
            path.display(),
            manifest_path(&path).display()
        );
    }
    if !outcome.log.is_empty() {
        let path = args
            .log
            .clone()
            .unwrap_or_else(|| with_suffix(&args.output, ".training.csv"));
        let file = fs::File::create(&path).map_err(|e| DestripeError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        write_training_csv(&outcome.log, &mut out)
            .and_then(|_| out.flush())
            .map_err(|e| DestripeError::io(&path, e))?;
    }
    let path = cli
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&args.output, ".report.json"));
    write_json(&outcome.report, &path)
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), DestripeError> {
    let a = read_volume(&args.estimate)?;
    let b = read_volume(&args.reference)?;
    let report = evaluate(&a, &b, args.peak)?;
    match &cli.report {
        Some(path) => write_json(&report, path),
        None => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), DestripeError> {
    match &cli.command {
        Command::Detect(a) => cmd_detect(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Destripe(a) => cmd_destripe(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
