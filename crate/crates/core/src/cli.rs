//! Command-line front end.
//!
//! Raw inputs are little-endian floats in C order. A multi-step file holds
//! `--steps` slices of `--shape` back to back, time slowest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::blob::CompressedBlob;
use crate::codec::{decompress, verify, CompressConfig, PreparedStack, RegionSource, TemporalStack};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, Scenario};
use crate::field::{decode_raw, ravel, unravel_into, DType, Field};
use crate::kernel::calibrate;
use crate::mask::{Label, RegionMask};
use crate::roi::{dilate_buffer, NormMode, RefinementConfig};
use crate::synth::{gen_synthetic, SynthConfig};
use crate::track::write_tracks;

#[derive(Debug, Parser)]
#[command(name = "stra", version, about = "Region-adaptive error-bounded compression of spatiotemporal fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress a raw field or stack into a .stra blob.
    Compress(CompressArgs),
    /// Restore a raw stack from a .stra blob.
    Decompress(DecompressArgs),
    /// Write the ROI/BUFFER/BACKGROUND labels of a raw stack.
    DetectRoi(DetectArgs),
    /// Generate a synthetic vortex stack and its true tracks.
    Simulate(SimulateArgs),
    /// Run a named experiment preset and write its CSV report.
    Evaluate(EvaluateArgs),
    /// Write the kernel calibration record.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Extents of one slice, e.g. `65,65`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[arg(long, default_value = "f32")]
    pub dtype: DType,
    /// Number of slices stored in the file.
    #[arg(short = 'T', long = "steps", default_value_t = 1)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Bound inside ROI and BUFFER.
    #[arg(long)]
    pub tau0: f64,
    /// Background bound; capped by the buffer width. Omit for uniform compression.
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub rbz: usize,
    #[arg(long, default_value = "max")]
    pub norm: NormMode,
    /// Refinement layers as `width:global:local`, coarsest first.
    #[arg(long)]
    pub layers: Option<RefinementConfig>,
    /// Optional key,value summary file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value = "f32")]
    pub dtype: DType,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// One label byte per node: 0 background, 1 buffer, 2 ROI.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub rbz: usize,
    #[arg(long)]
    pub layers: Option<RefinementConfig>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Raw stack output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Track file for the true well centres.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "65,65")]
    pub shape: Vec<usize>,
    #[arg(short = 'T', long = "steps", default_value_t = 32)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub vortices: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f32")]
    pub dtype: DType,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Preset name, or `list`.
    #[arg(long, default_value = "decim-vs-comp")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Consecutive seeds to evaluate, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// CSV path for one run, directory for several. Standard output if absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Fill the overhead and wall-time columns.
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Summary CSV: one row per dimensionality.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Optional per-impulse amplitude table.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Compress(a) => cmd_compress(&a, out, err),
        Command::Decompress(a) => cmd_decompress(&a, out),
        Command::DetectRoi(a) => cmd_detect(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Calibrate(a) => cmd_calibrate(&a, out),
    }
}

fn read_stack(a: &InputArgs) -> Result<TemporalStack> {
    if a.shape.is_empty() || a.shape.contains(&0) || a.steps == 0 {
        return Err(Error::Config("shape extents and steps must be positive".into()));
    }
    if a.shape.len() + usize::from(a.steps > 1) > 3 {
        return Err(Error::Config("at most three axes including time".into()));
    }
    let per_slice = a.shape.iter().product::<usize>() * a.dtype.size();
    // size check before reading anything
    let len = std::fs::metadata(&a.input)?.len() as usize;
    if len != per_slice * a.steps {
        return Err(Error::InvalidInput(format!(
            "{} holds {len} bytes, shape and steps imply {}",
            a.input.display(),
            per_slice * a.steps
        )));
    }
    let bytes = std::fs::read(&a.input)?;
    let slices = bytes
        .chunks(per_slice)
        .map(|chunk| Field::new(decode_raw(chunk, a.dtype), &a.shape))
        .collect::<Result<Vec<_>>>()?;
    TemporalStack::new(slices)
}

fn write_stack(stack: &TemporalStack, path: &Path, dtype: DType) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in stack.slices() {
        s.write_raw(&mut w, dtype)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_compress(a: &CompressArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if !(a.tau0 > 0.0) || a.tau1.is_some_and(|t| !(t > 0.0)) {
        return Err(Error::Config("bounds must be positive".into()));
    }
    let stack = read_stack(&a.input)?;
    let mut config = match (a.tau1, &a.layers) {
        (None, None) => CompressConfig::uniform(a.tau0),
        (tau1, layers) => CompressConfig::adaptive(a.tau0, tau1.unwrap_or(a.tau0), a.rbz)
            .with_regions(RegionSource::Detect(layers.clone().unwrap_or_default())),
    }
    .with_norm(a.norm);
    config.source_dtype = a.input.dtype;

    let c = PreparedStack::new(&stack)?.compress(&config)?;
    if c.report.tau1_capped() {
        writeln!(
            err,
            "warning: tau1 {} exceeds the buffer cap, using {}",
            c.report.tau1_requested, c.report.tau1
        )?;
    }
    c.blob.save(&a.output)?;
    let e = verify(&stack, &c.blob)?;
    let rows = [
        ("compression_ratio", c.report.ratio()),
        ("compressed_bytes", c.report.compressed_bytes as f64),
        ("tau0", a.tau0),
        ("tau1", c.report.tau1),
        ("roi_nodes", c.report.roi_nodes as f64),
        ("buffer_nodes", c.report.buffer_nodes as f64),
        ("max_error_roi", e.max_roi),
        ("max_error_buffer", e.max_buffer),
        ("max_error_background", e.max_background),
        ("detection_overhead", c.report.timing.detection_fraction()),
    ];
    for (k, v) in rows {
        writeln!(out, "{k:22} {v}")?;
    }
    if let Some(path) = &a.report {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "key,value")?;
        for (k, v) in rows {
            writeln!(w, "{k},{v}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_decompress(a: &DecompressArgs, out: &mut dyn Write) -> Result<()> {
    let blob = CompressedBlob::load(&a.input)?;
    let stack = decompress(&blob)?;
    write_stack(&stack, &a.output, a.dtype)?;
    let shape: Vec<String> = stack.slices()[0].dims().iter().map(|d| d.to_string()).collect();
    writeln!(out, "shape {} steps {}", shape.join(","), stack.len())?;
    Ok(())
}

fn cmd_detect(a: &DetectArgs, out: &mut dyn Write) -> Result<()> {
    let stack = read_stack(&a.input)?;
    let prepared = PreparedStack::new(&stack)?;
    let refinement = a.layers.clone().unwrap_or_default();
    let mask = prepared.detect(&refinement)?;
    let zone = dilate_buffer(&mask, a.rbz, prepared.pyramid().hierarchy())?;
    // crop the padded labels back to the stacked input extents
    let orig = stack.to_field().dims().to_vec();
    let padded = zone.mask().dims().to_vec();
    let mut idx = vec![0; orig.len()];
    let labels: Vec<Label> = (0..orig.iter().product())
        .map(|flat| {
            unravel_into(flat, &orig, &mut idx);
            zone.mask().labels()[ravel(&idx, &padded)]
        })
        .collect();
    let cropped = RegionMask::new(labels, &orig)?;
    std::fs::write(&a.output, cropped.to_bytes())?;
    let n = cropped.len() as f64;
    writeln!(out, "roi_fraction    {:.4}", cropped.count(Label::Roi) as f64 / n)?;
    writeln!(out, "buffer_fraction {:.4}", cropped.count(Label::Buffer) as f64 / n)?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let [nx, ny] = a.shape[..] else {
        return Err(Error::Config("simulate needs a two-axis --shape".into()));
    };
    let cfg = SynthConfig {
        dims: [nx, ny],
        steps: a.steps,
        n_vortices: a.vortices,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let (stack, truth) = gen_synthetic(&cfg)?;
    write_stack(&stack, &a.output, a.dtype)?;
    if let Some(path) = &a.truth {
        let mut w = BufWriter::new(File::create(path)?);
        write_tracks(&mut w, &truth)?;
        w.flush()?;
    }
    writeln!(out, "wrote {} steps of {nx}x{ny}, {} tracks", stack.len(), truth.len())?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    if a.scenario == "list" {
        for s in Scenario::ALL {
            writeln!(out, "{:20} {}", s.name(), s.description())?;
        }
        return Ok(());
    }
    let scenario: Scenario = a.scenario.parse()?;
    if a.runs == 0 || a.threads == 0 {
        return Err(Error::Config("runs and threads must be at least 1".into()));
    }
    if a.runs > 1 && a.output.is_none() {
        return Err(Error::Config("several runs need an --output directory".into()));
    }
    let seeds: Vec<u64> = (a.seed..a.seed + a.runs).collect();
    let mut reports = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(a.threads) {
        let done = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| scope.spawn(move || run_experiment(&scenario.config(seed))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<Vec<_>>()
        });
        for r in done {
            reports.push(r?);
        }
    }
    match (&a.output, a.runs) {
        (None, _) => reports[0].write_csv(&mut *out, a.timing)?,
        (Some(path), 1) => {
            let mut w = BufWriter::new(File::create(path)?);
            reports[0].write_csv(&mut w, a.timing)?;
            w.flush()?;
        }
        (Some(dir), _) => {
            std::fs::create_dir_all(dir)?;
            for r in &reports {
                let path = dir.join(format!("{scenario}-seed{}.csv", r.seed));
                let mut w = BufWriter::new(File::create(path)?);
                r.write_csv(&mut w, a.timing)?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let cals = (1..=3).map(calibrate).collect::<Result<Vec<_>>>()?;
    let mut w = BufWriter::new(File::create(&a.output)?);
    writeln!(w, "ndim,c_d,slope,slope_min,slope_max,ratio,level_gain")?;
    for c in &cals {
        let slopes: Vec<f64> = c.samples.iter().filter_map(|s| s.slope).collect();
        let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            w,
            "{},{},{},{lo},{hi},{},{}",
            c.ndim,
            c.scale,
            c.mean_slope(),
            c.ratio,
            c.level_gain
        )?;
        writeln!(out, "d={} C_d={:.4} slope={:.4}", c.ndim, c.scale, c.mean_slope())?;
    }
    w.flush()?;
    if let Some(path) = &a.kernel {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "ndim,level,odd_axes,distance,amplitude")?;
        for c in &cals {
            for s in &c.samples {
                let odd: Vec<String> = s.odd_axes.iter().map(|x| x.to_string()).collect();
                for (d, amp) in s.amplitudes.iter().enumerate() {
                    if let Some(amp) = amp {
                        writeln!(w, "{},{},{},{d},{amp}", c.ndim, s.level, odd.join(" "))?;
                    }
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}
