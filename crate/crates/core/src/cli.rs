//! Command-line front end. Every subcommand writes its outputs plus a
//! `<output>.manifest.json` recording inputs, outputs, configuration and seed.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 I/O error,
//! 4 numerical failure, 5 external score model failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diffusion::external::{serve_loopback, LoopbackMode};
use crate::forward::{acquire, zero_filled, UndersampledMeasurement};
use crate::io::{
    read_mask, read_measurement, read_volume, write_json, write_mask, write_measurement, write_volume, Dtype,
    ExperimentConfig, Manifest, MaskSpec, Method,
};
use crate::masks::{Mask, MaskKind};
use crate::metrics::evaluate;
use crate::optimizer::{lipschitz_estimate, lipschitz_paper, StepMode};
use crate::phantoms::{generate, PhantomKind, PhantomSpec};
use crate::r3dm::{reconstruct, reconstruct_pgd_only, trace_csv, ComplexBridge, ModelSpec, R3dmConfig, ReconResult};
use crate::render::{render_volume, DIFF_RANGE_DEFAULT};
use crate::spectral::{
    check_a_spectrum, check_b_spectrum, check_gaussian_lipschitz, check_line_spectrum, check_slice_operator_spectrum,
    dhd_eigenvalues,
};
use crate::volume::ImageVolume;
use crate::{Error, Result};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "R3DM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "r3dm", version, about = "Regularized 3D MRI reconstruction with diffusion priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic ground-truth volumes.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Undersampling masks.
    #[command(subcommand)]
    Mask(MaskCmd),
    /// Simulate an undersampled acquisition.
    Acquire(AcquireArgs),
    /// Reconstruct from a measurement.
    #[command(subcommand)]
    Recon(ReconCmd),
    /// SSIM / PSNR of a reconstruction against ground truth.
    Metrics(MetricsArgs),
    /// Operator spectra and Lipschitz constants.
    #[command(subcommand)]
    Spectral(SpectralCmd),
    /// Slice PNGs and difference maps.
    Render(RenderArgs),
    /// Full experiment from a JSON config.
    Run(RunArgs),
    /// Test server for the external score protocol.
    #[command(hide = true)]
    ScoreLoopback(LoopbackArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCmd {
    Gen(PhantomArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomChoice {
    Tubes,
    Ellipsoids,
    GaussianField,
}

#[derive(Debug, Args, Serialize)]
pub struct PhantomArgs {
    #[arg(long, value_enum, default_value = "tubes")]
    pub kind: PhantomChoice,
    #[arg(long, default_value_t = 8)]
    pub slices: usize,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tube or ellipsoid count.
    #[arg(long)]
    pub count: Option<usize>,
    /// Tube cross-section width in voxels.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub mean: f64,
    #[arg(long, default_value_t = 0.1)]
    pub std: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum MaskCmd {
    Gen(MaskArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskChoice {
    Uniform,
    Gaussian,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct MaskArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    pub kind: MaskChoice,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2.0)]
    pub accel: f64,
    #[arg(long, default_value_t = 0.15)]
    pub center_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AcquireArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Standard deviation of complex measurement noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measurement descriptor (`.json`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ReconCmd {
    ZeroFilled(ZeroFilledArgs),
    Pgd(ReconArgs),
    R3dm(ReconArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ZeroFilledArgs {
    #[arg(long)]
    pub meas: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Zero,
    Gaussian,
    TweedieDct,
    External,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepChoice {
    Power,
    Paper,
    Fixed,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeChoice {
    RealPart,
    Magnitude,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconArgs {
    #[arg(long)]
    pub meas: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// R3dmConfig JSON; flags given explicitly override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground truth for the metric trace.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Per-iteration loss trace (CSV).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Diffusion steps T.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Inner iterations m.
    #[arg(long)]
    pub inner: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Step size, used with `--step-mode fixed`.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub step_mode: Option<StepChoice>,
    /// Disable the smoothness term.
    #[arg(long)]
    pub no_tv: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// DCT threshold multiplier for the tweedie-dct model.
    #[arg(long)]
    pub dct_c: Option<f64>,
    /// Mean and variance of the gaussian model.
    #[arg(long, num_args = 2, value_names = ["MEAN", "VAR"])]
    pub gaussian: Option<Vec<f64>>,
    /// Whitespace-separated command line of an external score server.
    #[arg(long)]
    pub external_cmd: Option<String>,
    #[arg(long)]
    pub timeout_s: Option<f64>,
    #[arg(long, value_enum)]
    pub bridge: Option<BridgeChoice>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub recon: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional Markdown table.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SpectralCmd {
    Check(SpectralArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SpectralArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub slices: usize,
    /// Mask for the masked-Fourier checks; a 2x uniform mask by default.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "recon")]
    pub prefix: String,
    /// Difference map color range (0.02 for reconstructions, 0.1 for projections).
    #[arg(long, default_value_t = DIFF_RANGE_DEFAULT)]
    pub diff_range: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LoopbackChoice {
    Zero,
    Negate,
    Garbage,
    Status,
    Hang,
}

#[derive(Debug, Args)]
pub struct LoopbackArgs {
    #[arg(long, value_enum, default_value = "zero")]
    pub mode: LoopbackChoice,
}

fn finish(mut manifest: Manifest, primary: &Path, inputs: &[PathBuf], outputs: &[PathBuf], start: Instant) -> Result<()> {
    manifest.add_inputs(inputs)?;
    manifest.add_outputs(outputs)?;
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    let p = manifest.write(primary)?;
    log::info!("wrote {}", p.display());
    Ok(())
}

fn config_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn phantom_gen(a: &PhantomArgs) -> Result<()> {
    let start = Instant::now();
    let kind = match a.kind {
        PhantomChoice::Tubes => {
            let PhantomKind::Tubes {
                count,
                radius,
                step_correlation,
            } = PhantomKind::tubes()
            else {
                unreachable!()
            };
            PhantomKind::Tubes {
                count: a.count.unwrap_or(count),
                radius: a.radius.unwrap_or(radius),
                step_correlation,
            }
        }
        PhantomChoice::Ellipsoids => PhantomKind::Ellipsoids {
            count: a.count.unwrap_or(5),
        },
        PhantomChoice::GaussianField => PhantomKind::GaussianField { mean: a.mean, std: a.std },
    };
    let spec = PhantomSpec {
        kind,
        slices: a.slices,
        n: a.n,
        seed: a.seed,
    };
    let vol = generate(&spec)?;
    let outputs = write_volume(&a.out, &vol, Dtype::F32, &format!("phantom {:?}", a.kind))?;
    let manifest = Manifest::new("phantom gen", config_value(&spec)?, Some(a.seed))?;
    finish(manifest, &a.out, &[], &outputs, start)
}

fn mask_gen(a: &MaskArgs) -> Result<()> {
    let start = Instant::now();
    let spec = MaskSpec {
        kind: match a.kind {
            MaskChoice::Uniform => MaskKind::Uniform,
            MaskChoice::Gaussian => MaskKind::Gaussian,
            MaskChoice::Full => MaskKind::Full,
        },
        accel: a.accel,
        center_frac: a.center_frac,
        seed: a.seed,
    };
    let mask = spec.build(a.n)?;
    let outputs = write_mask(&a.out, &mask)?;
    let manifest = Manifest::new("mask gen", config_value(a)?, Some(a.seed))?;
    finish(manifest, &a.out, &[], &outputs, start)
}

fn check_mask_fits(mask: &Mask, gt: &ImageVolume) -> Result<()> {
    if mask.n() != gt.n() {
        return Err(Error::shape(format!("{0}x{0} mask", gt.n()), format!("{0}x{0}", mask.n())));
    }
    Ok(())
}

fn acquire_cmd(a: &AcquireArgs) -> Result<()> {
    let start = Instant::now();
    let (gt, _) = read_volume(&a.gt)?;
    let mask = read_mask(&a.mask)?;
    check_mask_fits(&mask, &gt)?;
    let meas = acquire(&gt, &mask, a.sigma, a.seed)?;
    let outputs = write_measurement(&a.out, &meas, a.seed)?;
    let manifest = Manifest::new("acquire", config_value(a)?, Some(a.seed))?;
    let inputs = [a.gt.clone(), a.mask.clone()];
    finish(manifest, &a.out, &inputs, &outputs, start)
}

fn zero_filled_cmd(a: &ZeroFilledArgs) -> Result<()> {
    let start = Instant::now();
    let (meas, inputs) = read_measurement(&a.meas)?;
    let outputs = write_volume(&a.out, &zero_filled(&meas), Dtype::C64F32, "zero-filled reconstruction")?;
    let manifest = Manifest::new("recon zero-filled", config_value(a)?, None)?;
    finish(manifest, &a.out, &inputs, &outputs, start)
}

/// Effective reconstruction config: file, then explicit flags.
pub fn resolve_recon_config(a: &ReconArgs) -> Result<R3dmConfig> {
    let mut cfg: R3dmConfig = match &a.config {
        Some(p) => crate::io::read_json(p)?,
        None => R3dmConfig {
            schedule: crate::r3dm::ScheduleSpec::with_steps(50),
            ..Default::default()
        },
    };
    if let Some(v) = a.steps {
        cfg.schedule.steps = v;
    }
    if let Some(v) = a.inner {
        cfg.recon.inner_iters = v;
    }
    if let Some(v) = a.alpha {
        cfg.recon.reg.alpha = v;
    }
    if let Some(v) = a.rho {
        cfg.recon.rho = v;
    }
    if let Some(v) = a.lambda {
        cfg.recon.lambda = v;
    }
    if let Some(v) = a.step_mode {
        cfg.recon.step_mode = match v {
            StepChoice::Power => StepMode::PowerIteration,
            StepChoice::Paper => StepMode::PaperFormula,
            StepChoice::Fixed => StepMode::Fixed,
        };
    }
    if a.no_tv {
        cfg.recon.reg.tv_on = false;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.bridge {
        cfg.complex_bridge = match v {
            BridgeChoice::RealPart => ComplexBridge::RealPart,
            BridgeChoice::Magnitude => ComplexBridge::Magnitude,
        };
    }
    if a.trace.is_some() {
        cfg.emit_trace = true;
    }
    if let Some(m) = a.model {
        cfg.model = match m {
            ModelChoice::Zero => ModelSpec::Zero,
            ModelChoice::Gaussian => {
                let g = a.gaussian.clone().unwrap_or_else(|| vec![0.0, 1.0]);
                ModelSpec::Gaussian { mean: g[0], var0: g[1] }
            }
            ModelChoice::TweedieDct => ModelSpec::TweedieDct {
                c: a.dct_c.unwrap_or(crate::diffusion::DEFAULT_DCT_THRESHOLD),
            },
            ModelChoice::External => {
                let cmd = a
                    .external_cmd
                    .as_deref()
                    .ok_or_else(|| Error::Config("--model external needs --external-cmd".into()))?;
                ModelSpec::External {
                    command: cmd.split_whitespace().map(str::to_string).collect(),
                    timeout_s: a.timeout_s.unwrap_or(60.0),
                    epsilon: false,
                }
            }
        };
    } else if let (ModelSpec::TweedieDct { c }, Some(v)) = (&mut cfg.model, a.dct_c) {
        *c = v;
    }
    cfg.recon.validate()?;
    Ok(cfg)
}

fn run_method(
    method: Method,
    meas: &UndersampledMeasurement,
    cfg: &R3dmConfig,
    gt: Option<&ImageVolume>,
) -> Result<ReconResult> {
    match method {
        Method::ZeroFilled => Ok(ReconResult {
            volume: zero_filled(meas),
            trace: Vec::new(),
            step: None,
            wall_time: Default::default(),
        }),
        Method::Pgd => reconstruct_pgd_only(meas, cfg, gt),
        Method::R3dm => {
            let schedule = cfg.schedule.build()?;
            let mut model = cfg.model.build(&schedule, meas.shape())?;
            reconstruct(meas, &mut model, cfg, gt)
        }
    }
}

fn recon_cmd(a: &ReconArgs, method: Method) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_recon_config(a)?;
    let (meas, mut inputs) = read_measurement(&a.meas)?;
    if let Some(p) = &a.config {
        inputs.push(p.clone());
    }
    let gt = match &a.gt {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_volume(p)?.0)
        }
        None => None,
    };
    let result = run_method(method, &meas, &cfg, gt.as_ref())?;
    let mut outputs = write_volume(&a.out, &result.volume, Dtype::C64F32, &format!("{method:?} reconstruction"))?;
    if let Some(t) = &a.trace {
        crate::io::write_bytes(t, trace_csv(&result.trace).as_bytes())?;
        outputs.push(t.clone());
    }
    let name = match method {
        Method::Pgd => "recon pgd",
        _ => "recon r3dm",
    };
    let manifest = Manifest::new(
        name,
        serde_json::json!({ "args": config_value(a)?, "resolved": config_value(&cfg)? }),
        Some(cfg.seed),
    )?;
    finish(manifest, &a.out, &inputs, &outputs, start)
}

fn metrics_cmd(a: &MetricsArgs) -> Result<()> {
    let start = Instant::now();
    let (gt, _) = read_volume(&a.gt)?;
    let (recon, _) = read_volume(&a.recon)?;
    let report = evaluate(&gt, &recon)?;
    write_json(&a.out, &report)?;
    let mut outputs = vec![a.out.clone()];
    let table = report.to_markdown("recon");
    if let Some(p) = &a.markdown {
        crate::io::write_bytes(p, table.as_bytes())?;
        outputs.push(p.clone());
    }
    print!("{table}");
    let manifest = Manifest::new("metrics", config_value(a)?, None)?;
    finish(manifest, &a.out, &[a.gt.clone(), a.recon.clone()], &outputs, start)
}

#[derive(Serialize)]
struct LipschitzSummary {
    paper: f64,
    estimate: f64,
    converged: bool,
}

fn spectral_cmd(a: &SpectralArgs) -> Result<()> {
    let start = Instant::now();
    let mut inputs = Vec::new();
    let mask = match &a.mask {
        Some(p) => {
            inputs.push(p.clone());
            read_mask(p)?
        }
        None => crate::masks::gen_uniform_mask(a.n, 2.0, 0.15, 0)?,
    };
    let n = mask.n();
    let mut operators = vec![
        check_a_spectrum(&mask, a.slices)?,
        check_line_spectrum(&mask, a.slices, crate::forward::Axis::Ky)?,
        check_line_spectrum(&mask, a.slices, crate::forward::Axis::Kx)?,
        check_slice_operator_spectrum(&mask, a.slices, crate::forward::Axis::Ky)?,
        check_slice_operator_spectrum(&mask, a.slices, crate::forward::Axis::Kx)?,
    ];
    for bn in [2, 3, n] {
        operators.push(check_b_spectrum(bn, 1)?);
    }
    let dhd = dhd_eigenvalues(n)?;
    let mut gaussian = Vec::new();
    for d in [1, 2] {
        for sigma in [0.5, 1.0, 2.0] {
            gaussian.push(check_gaussian_lipschitz(d, sigma)?);
        }
    }
    let gt = ImageVolume::zeros(crate::Shape::new(a.slices, n)?);
    let meas = acquire(&gt, &mask, 0.0, 0)?;
    let recon = crate::optimizer::ReconConfig {
        rho: a.rho,
        ..Default::default()
    };
    let est = lipschitz_estimate(&meas, &recon)?;
    let report = serde_json::json!({
        "operators": operators,
        "dhd": { "n": dhd.n, "max_deviation": dhd.max_deviation(), "computed": dhd.computed, "formula": dhd.formula },
        "gaussian_pdf_lipschitz": gaussian,
        "loss_lipschitz": LipschitzSummary { paper: lipschitz_paper(n, a.rho), estimate: est.value, converged: est.converged },
    });
    write_json(&a.out, &report)?;
    let manifest = Manifest::new("spectral check", config_value(a)?, Some(0))?;
    finish(manifest, &a.out, &inputs, std::slice::from_ref(&a.out), start)
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let start = Instant::now();
    let (recon, _) = read_volume(&a.recon)?;
    let mut inputs = vec![a.recon.clone()];
    let gt = match &a.gt {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_volume(p)?.0)
        }
        None => None,
    };
    let outputs = render_volume(&recon, gt.as_ref(), &a.out_dir, &a.prefix, a.diff_range)?;
    let manifest = Manifest::new("render", config_value(a)?, None)?;
    finish(manifest, &a.out_dir.join(&a.prefix), &inputs, &outputs, start)
}

fn run_cmd(a: &RunArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&a.config)?;
    let mut inputs = vec![a.config.clone()];
    let gt = match (&cfg.phantom, &cfg.input) {
        (Some(spec), _) => generate(spec)?,
        (None, Some(p)) => {
            inputs.push(p.clone());
            read_volume(p)?.0
        }
        (None, None) => unreachable!("validated"),
    };
    let out = &cfg.out_dir;
    let mask = cfg.mask.build(gt.n())?;
    let meas = acquire(&gt, &mask, cfg.noise_sigma, cfg.noise_seed)?;
    let mut outputs = write_volume(&out.join("gt.raw"), &gt, Dtype::F32, "ground truth")?;
    outputs.extend(write_measurement(&out.join("meas.json"), &meas, cfg.noise_seed)?);
    let mut r3 = cfg.r3dm.clone();
    r3.emit_trace |= cfg.emit.trace;
    let result = run_method(cfg.method, &meas, &r3, Some(&gt))?;
    let recon_path = out.join("recon.raw");
    outputs.extend(write_volume(&recon_path, &result.volume, Dtype::C64F32, "reconstruction")?);
    if cfg.emit.trace {
        let p = out.join("trace.csv");
        crate::io::write_bytes(&p, trace_csv(&result.trace).as_bytes())?;
        outputs.push(p);
    }
    if cfg.emit.metrics {
        let report = evaluate(&gt, &result.volume)?;
        let zf = evaluate(&gt, &zero_filled(&meas))?;
        let p = out.join("metrics.json");
        write_json(&p, &serde_json::json!({ "recon": report, "zero_filled": zf }))?;
        let md = out.join("metrics.md");
        let table = format!("{}\n{}", report.to_markdown("recon"), zf.to_markdown("zero-filled"));
        crate::io::write_bytes(&md, table.as_bytes())?;
        outputs.extend([p, md]);
    }
    if cfg.emit.png {
        outputs.extend(render_volume(&result.volume, Some(&gt), &out.join("png"), "recon", DIFF_RANGE_DEFAULT)?);
    }
    let manifest = Manifest::new("run", config_value(&cfg)?, Some(cfg.r3dm.seed))?;
    finish(manifest, &recon_path, &inputs, &outputs, start)
}

fn loopback(a: &LoopbackArgs) -> Result<()> {
    let mode = match a.mode {
        LoopbackChoice::Zero => LoopbackMode::Zero,
        LoopbackChoice::Negate => LoopbackMode::Negate,
        LoopbackChoice::Garbage => LoopbackMode::Garbage,
        LoopbackChoice::Status => LoopbackMode::Status,
        LoopbackChoice::Hang => LoopbackMode::Hang,
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_loopback(mode, &mut stdin.lock(), &mut stdout.lock()).map_err(|e| Error::io("<stdio>", e))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(PhantomCmd::Gen(a)) => phantom_gen(a),
        Command::Mask(MaskCmd::Gen(a)) => mask_gen(a),
        Command::Acquire(a) => acquire_cmd(a),
        Command::Recon(ReconCmd::ZeroFilled(a)) => zero_filled_cmd(a),
        Command::Recon(ReconCmd::Pgd(a)) => recon_cmd(a, Method::Pgd),
        Command::Recon(ReconCmd::R3dm(a)) => recon_cmd(a, Method::R3dm),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Spectral(SpectralCmd::Check(a)) => spectral_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::ScoreLoopback(a) => loopback(a),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parses the process arguments, runs the command and returns the exit code.
/// Failures are reported on stderr as one JSON object.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            e.exit_code()
        }
    }
}
