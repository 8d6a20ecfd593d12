use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nsmimo::detect::{detect_boxes, import_detections, write_detections, Detection};
use nsmimo::harness::{
    evaluate, generate_dataset, run_experiment, DatasetConfig, ExperimentConfig, Scheme,
};
use nsmimo::image::{from_pixels, read_png, SourceDims};
use nsmimo::model::{uplink_pilot_observation, Noise};
use nsmimo::pipeline::{detect_paths, PipelineConfig};
use nsmimo::visibility::Identifier;
use nsmimo::Scenario;

#[derive(Parser)]
#[command(name = "nsmimo", version, about = "Near-field spatially non-stationary channel estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write spectral images and box labels for detector training.
    GenerateDataset(DatasetArgs),
    /// Detect paths in a scenario's pilot image or a PNG; prints JSON lines.
    Detect(DetectArgs),
    /// Monte Carlo comparison of estimation schemes.
    Run(RunArgs),
    /// Recompute the summary from a saved results.csv.
    Eval(EvalArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset config JSON (system, image, SNR and path-count ranges).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Fixed SNR in dB instead of the configured range.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Scenario JSON; pilots are synthesised at --snr.
    #[arg(long, conflicts_with = "image")]
    scenario: Option<PathBuf>,
    /// Grayscale spectral image PNG (needs --m, --n, --s).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, requires = "image")]
    m: Option<usize>,
    #[arg(long, requires = "image")]
    n: Option<usize>,
    #[arg(long, requires = "image")]
    s: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    /// Noise realisation index.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pipeline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SNR points in dB, repeatable; replaces the configured grid.
    #[arg(long)]
    snr: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Scheme to run, repeatable.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Vec<Scheme>,
    #[arg(long, value_parser = parse_identifier)]
    identifier: Option<Identifier>,
    /// JSON-lines detections that replace the built-in detector.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed scenario JSON used by every trial.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write one diagnostics JSON per trial.
    #[arg(long)]
    diagnostics: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// results.csv, or a directory containing it.
    results: PathBuf,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse()
}

fn parse_identifier(s: &str) -> Result<Identifier, String> {
    s.parse()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn generate(args: DatasetArgs) -> Result<()> {
    let mut cfg: DatasetConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(snr) = args.snr {
        cfg.snr_min = snr;
        cfg.snr_max = snr;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let ids = generate_dataset(&cfg, args.count, &args.out)?;
    eprintln!("wrote {} images to {}", ids.len(), args.out.display());
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let cfg: PipelineConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    let dets: Vec<Detection> = match (&args.scenario, &args.image) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let sc = Scenario::from_json(&text)?;
            let y = uplink_pilot_observation(&sc, args.snr, Noise::Draw(args.seed));
            detect_paths(&y, sc.config.s, &cfg)?
        }
        (None, Some(path)) => {
            let (Some(m), Some(n), Some(s)) = (args.m, args.n, args.s) else {
                bail!("--image needs --m, --n and --s");
            };
            if s == 0 || m == 0 || n == 0 || m % s != 0 {
                bail!("invalid array dimensions M={m} N={n} S={s}");
            }
            let (w, h, px) = read_png(path)?;
            let grid = from_pixels(w, h, &px)?;
            detect_boxes(&grid, SourceDims { m, n, s }, &cfg.detector)
        }
        _ => bail!("give exactly one of --scenario or --image"),
    };
    let mut out = output(args.out.as_deref())?;
    write_detections(&dets, &mut out)?;
    out.flush()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if !args.snr.is_empty() {
        cfg.snr_grid = args.snr.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if !args.scheme.is_empty() {
        cfg.schemes = args.scheme.clone();
    }
    if let Some(id) = args.identifier {
        cfg.pipeline.identifier = id;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.scenario {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let sc = Scenario::from_json(&text)?;
        cfg.system = sc.config.clone();
        cfg.scenario = Some(sc);
    }
    cfg.diagnostics |= args.diagnostics;
    cfg.out_dir = Some(args.out.clone());
    let imported = match &args.detections {
        Some(p) => Some(import_detections(p)?),
        None => None,
    };
    let reports = run_experiment(&cfg, imported.as_deref())?;
    for r in &reports {
        let s = &r.summary;
        let db = |x: Option<nsmimo::harness::Stat>| x.map_or("n/a".to_string(), |v| format!("{:.2}", v.mean));
        eprintln!(
            "{:<12} snr={:>5.1} dB  nmse_ul={:>8}  nmse_dl={:>8}  se={:>6}  failed={}/{}",
            s.scheme.name(),
            s.snr_db,
            db(s.nmse_ul_db),
            db(s.nmse_dl_db),
            db(s.se_bps_hz),
            s.failed,
            s.trials
        );
    }
    eprintln!("results in {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let path = if args.results.is_dir() {
        args.results.join("results.csv")
    } else {
        args.results.clone()
    };
    let cells = evaluate(&path, args.resamples, args.seed)?;
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &cells)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateDataset(a) => generate(a),
        Command::Detect(a) => detect(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
    }
}
