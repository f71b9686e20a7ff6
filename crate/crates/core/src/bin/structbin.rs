use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structbin::allocation::{AllocationStrategy, NMRatio};
use structbin::packing::table_bits;
use structbin::pipeline::{
    flip_experiment, load_packed, quantize_manifest, report_packed, write_report, LayerReport, QuantConfig,
};
use structbin::quantizer::reconstruct;
use structbin::scoring::ScorerKind;
use structbin::tensor::Tensor2D;
use structbin::tensorio::{load_tensor, synth_model, write_model};
use structbin::{Error, Result};

#[derive(Parser)]
#[command(name = "structbin", version, about = "Structured sub-1-bit binarization of linear layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize every layer of a manifest into packed files.
    Quantize(QuantizeArgs),
    /// Output error after randomly flipping non-salient signs.
    Flip(FlipArgs),
    /// Evaluate packed layers against the original model.
    Report(ReportArgs),
    /// Write a deterministic synthetic model.
    Synth(SynthArgs),
    /// Average bits for a base bit count at an N:M ratio.
    Bits(BitsArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "4:8")]
    nm: NMRatio,
    #[arg(long, default_value = "adaptive")]
    strategy: AllocationStrategy,
    #[arg(long, default_value = "si")]
    scorer: ScorerKind,
    #[arg(long, default_value_t = 128)]
    block_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lambda_rel: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    #[arg(long, default_value_t = 160)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.3)]
    salient_cap: f64,
    #[arg(long)]
    no_renormalize: bool,
    /// Skip error feedback between blocks.
    #[arg(long)]
    no_compensation: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; defaults to OUT/report.json.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Include wall-clock stage timings in the report.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct FlipArgs {
    #[arg(long)]
    packed: PathBuf,
    /// Calibration tensor (.f32) for the layer.
    #[arg(long)]
    calib: PathBuf,
    /// Original weights (.f32); without it the unflipped reconstruction is the reference.
    #[arg(long)]
    weight: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of packed layer files.
    #[arg(long)]
    packed: PathBuf,
    /// Manifest of the original model (file or directory).
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Output features.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Input features.
    #[arg(long, default_value_t = 64)]
    m: usize,
    /// Calibration rows.
    #[arg(long, default_value_t = 128)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pairwise correlation of the calibration features, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    correlation: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BitsArgs {
    #[arg(long)]
    base: f64,
    #[arg(long)]
    nm: NMRatio,
}

fn quantize(args: QuantizeArgs) -> Result<()> {
    let config = QuantConfig {
        scorer: args.scorer,
        strategy: args.strategy,
        nm: args.nm,
        block_size: args.block_size,
        lambda_rel: args.lambda_rel,
        sigma_ratio: args.sigma,
        grid_points: args.grid_points,
        salient_cap: args.salient_cap,
        renormalize: !args.no_renormalize,
        compensate: !args.no_compensation,
        seed: args.seed,
    };
    let report = quantize_manifest(&args.manifest, &args.out, &config, args.timings)?;
    let path = args.report.unwrap_or_else(|| args.out.join("report.json"));
    write_report(&path, &report)?;
    eprintln!(
        "quantized {} layers: realized ratio {:.4}, {:.4} bits/weight (formula), {:.4} bits/weight (packed)",
        report.layers.len(),
        report.totals.realized_ratio,
        report.totals.avg_bits_paper,
        report.totals.avg_bits_packed
    );
    Ok(())
}

fn load_f32_with_cols(path: &Path, cols: usize) -> Result<Tensor2D> {
    let bytes = fs::metadata(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?.len() as usize;
    if bytes == 0 || !bytes.is_multiple_of(4 * cols) {
        return Err(Error::Config(format!(
            "{}: {bytes} bytes is not a whole number of {cols}-column rows",
            path.display()
        )));
    }
    Ok(load_tensor(path, bytes / (4 * cols), cols)?)
}

fn flip(args: FlipArgs) -> Result<()> {
    let layer = load_packed(&args.packed)?;
    let x = load_f32_with_cols(&args.calib, layer.cols)?;
    let w = match &args.weight {
        Some(path) => load_tensor(path, layer.rows, layer.cols)?,
        None => reconstruct(&layer),
    };
    let points = flip_experiment(&layer, &w, &x, &args.fractions, args.trials, args.seed)?;
    let mut csv = String::from("fraction,mean_err,std_err\n");
    for p in points {
        csv.push_str(&format!("{},{},{}\n", p.fraction, p.mean_err, p.std_err));
    }
    match args.out {
        Some(path) => fs::write(&path, csv).map_err(|source| Error::Io { path, source }),
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|source| Error::Io { path: PathBuf::from("<stdout>"), source }),
    }
}

#[derive(serde::Serialize)]
struct PackedReport {
    layers: Vec<LayerReport>,
}

fn report(args: ReportArgs) -> Result<()> {
    let layers = report_packed(&args.packed, &args.calib)?;
    write_report(&args.out, &PackedReport { layers })
}

fn synth(args: SynthArgs) -> Result<()> {
    if args.layers == 0 || args.n == 0 || args.m == 0 || args.r == 0 {
        return Err(Error::Config("layers, n, m and r must be positive".into()));
    }
    if !(0.0..1.0).contains(&args.correlation) {
        return Err(Error::Config(format!("correlation {} not in [0, 1)", args.correlation)));
    }
    let model = synth_model(args.layers, args.n, args.m, args.r, args.seed, args.correlation);
    let manifest = write_model(&args.out, &model)?;
    eprintln!("wrote {} layers to {}", manifest.layers.len(), args.out.display());
    Ok(())
}

fn format_bits(value: f64) -> String {
    let s = format!("{value:.6}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize(args) => quantize(args),
        Command::Flip(args) => flip(args),
        Command::Report(args) => report(args),
        Command::Synth(args) => synth(args),
        Command::Bits(args) => {
            if !(args.base.is_finite() && args.base >= 0.0) {
                return Err(Error::Config(format!("base {} must be a non-negative number", args.base)));
            }
            println!("{}", format_bits(table_bits(args.base, args.nm.n, args.nm.m)));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.kind().exit_code() as u8)
        }
    }
}
