//! Reverse diffusion interleaved with proximal-gradient data consistency.
//!
//! Starting from real Gaussian noise `X_T`, every reverse step `t = T..1`
//! applies one DDPM update to the bridged real image and then `m`
//! proximal-gradient iterations against the measurement.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ddpm_schedule, ddpm_step, linear_schedule, DctThresholdDenoiser, EpsilonPredictionAdapter,
    ExternalScoreModel, GaussianScoreModel, NoiseSchedule, ScoreModel, TweedieDenoiserModel, ZeroScoreModel,
    REFERENCE_STEPS,
};
use crate::forward::{zero_filled, UndersampledMeasurement};
use crate::metrics::evaluate;
use crate::optimizer::{resolve_step, solve_g_with_step, LossBreakdown, ReconConfig};
use crate::volume::{ImageVolume, Shape};
use crate::{Error, Result};

/// Linear beta schedule; with `rescale` the endpoints are multiplied by
/// `1000 / steps` for chains shorter than 1000 steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_rescale")]
    pub rescale: bool,
}

fn default_beta_start() -> f64 {
    1e-4
}

fn default_beta_end() -> f64 {
    0.02
}

fn default_rescale() -> bool {
    true
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: REFERENCE_STEPS,
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            rescale: true,
        }
    }
}

impl ScheduleSpec {
    pub fn with_steps(steps: usize) -> Self {
        ScheduleSpec {
            steps,
            ..Default::default()
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        if self.steps == 0 {
            return Ok(NoiseSchedule::empty());
        }
        let standard = self.beta_start == default_beta_start() && self.beta_end == default_beta_end();
        if self.rescale && standard {
            return ddpm_schedule(self.steps);
        }
        let scale = if self.rescale {
            (REFERENCE_STEPS as f64 / self.steps as f64).max(1.0)
        } else {
            1.0
        };
        linear_schedule(self.steps, self.beta_start * scale, (self.beta_end * scale).min(0.999))
    }
}

/// What the diffusion prior sees of the complex iterate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexBridge {
    /// Modulus in, phase restored afterwards.
    Magnitude,
    /// Real part in, imaginary part carried forward unchanged.
    #[default]
    RealPart,
}

/// Score model selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Zero,
    Gaussian {
        mean: f64,
        var0: f64,
    },
    TweedieDct {
        #[serde(default = "default_dct_c")]
        c: f64,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
        /// The process predicts the added noise instead of the score.
        #[serde(default)]
        epsilon: bool,
    },
}

fn default_dct_c() -> f64 {
    crate::diffusion::DEFAULT_DCT_THRESHOLD
}

fn default_timeout_s() -> f64 {
    60.0
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::TweedieDct { c: default_dct_c() }
    }
}

impl ModelSpec {
    pub fn build(&self, schedule: &NoiseSchedule, shape: Shape) -> Result<Box<dyn ScoreModel>> {
        Ok(match self {
            ModelSpec::Zero => Box::new(ZeroScoreModel),
            ModelSpec::Gaussian { mean, var0 } => {
                let mu0 = ImageVolume::from_real(shape.slices, shape.n, &vec![*mean; shape.len()])?;
                Box::new(GaussianScoreModel::new(mu0, *var0, schedule.clone())?)
            }
            ModelSpec::TweedieDct { c } => {
                if !(*c >= 0.0) {
                    return Err(Error::Config(format!("DCT threshold multiplier must be >= 0, got {c}")));
                }
                Box::new(TweedieDenoiserModel::new(
                    Box::new(DctThresholdDenoiser::new(*c)),
                    schedule.clone(),
                ))
            }
            ModelSpec::External {
                command,
                timeout_s,
                epsilon,
            } => {
                if !(*timeout_s > 0.0) || !timeout_s.is_finite() {
                    return Err(Error::Config(format!("timeout must be positive, got {timeout_s}")));
                }
                let m = ExternalScoreModel::new(command.clone())?.with_timeout(Duration::from_secs_f64(*timeout_s));
                if *epsilon {
                    Box::new(EpsilonPredictionAdapter::new(m, schedule.clone()))
                } else {
                    Box::new(m)
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct R3dmConfig {
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub emit_trace: bool,
    #[serde(default)]
    pub complex_bridge: ComplexBridge,
}

impl R3dmConfig {
    /// Parses a JSON config; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("r3dm config: {e}")))
    }
}

impl Default for R3dmConfig {
    fn default() -> Self {
        R3dmConfig {
            schedule: ScheduleSpec::default(),
            recon: ReconConfig::default(),
            model: ModelSpec::default(),
            seed: 0,
            emit_trace: false,
            complex_bridge: ComplexBridge::RealPart,
        }
    }
}

/// One row per inner iterate; `i = 0` is the iterate right after the
/// diffusion update. Image metrics appear on the last row of each outer step
/// when ground truth is supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub i: usize,
    pub loss: LossBreakdown,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t,i,fidelity,slice_ky,slice_kx,tv,total,ssim,psnr\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        out += &format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{},{}\n",
            r.t,
            r.i,
            r.loss.fidelity,
            r.loss.slice_ky,
            r.loss.slice_kx,
            r.loss.tv,
            r.loss.total,
            opt(r.ssim),
            opt(r.psnr)
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub volume: ImageVolume,
    pub trace: Vec<TraceRow>,
    /// Step size used by the inner iterations, if any ran.
    pub step: Option<f64>,
    pub wall_time: Duration,
}

fn bridge_in(x: &ImageVolume, bridge: ComplexBridge) -> ImageVolume {
    match bridge {
        ComplexBridge::RealPart => x.map(|z| Complex64::new(z.re, 0.0)),
        ComplexBridge::Magnitude => x.map(|z| Complex64::new(z.norm(), 0.0)),
    }
}

fn bridge_out(prev: &ImageVolume, stepped: &ImageVolume, bridge: ComplexBridge) -> ImageVolume {
    let data = prev
        .as_slice()
        .iter()
        .zip(stepped.as_slice())
        .map(|(p, s)| match bridge {
            ComplexBridge::RealPart => Complex64::new(s.re, p.im),
            ComplexBridge::Magnitude => {
                if p.norm() > 0.0 {
                    Complex64::from_polar(s.re, p.arg())
                } else {
                    Complex64::new(s.re, 0.0)
                }
            }
        })
        .collect();
    ImageVolume::from_parts(prev.shape(), data)
}

fn trace_metrics(gt: Option<&ImageVolume>, x: &ImageVolume) -> Result<(Option<f64>, Option<f64>)> {
    match gt {
        Some(g) => {
            let r = evaluate(g, x)?;
            Ok((Some(r.ssim_3d), Some(r.psnr_3d)))
        }
        None => Ok((None, None)),
    }
}

fn push_rows(
    rows: &mut Vec<TraceRow>,
    t: usize,
    losses: &[LossBreakdown],
    metrics: (Option<f64>, Option<f64>),
) {
    let last = losses.len().saturating_sub(1);
    for (i, loss) in losses.iter().enumerate() {
        let (ssim, psnr) = if i == last { metrics } else { (None, None) };
        rows.push(TraceRow {
            t,
            i,
            loss: *loss,
            ssim,
            psnr,
        });
    }
}

fn with_step_context(e: Error, t: usize) -> Error {
    match e {
        Error::ExternalModel(msg) => Error::ExternalModel(format!("reverse step t={t}: {msg}")),
        Error::Numerical(msg) => Error::Numerical(format!("reverse step t={t}: {msg}")),
        other => other,
    }
}

/// Reconstruction by alternating DDPM updates and `m` proximal-gradient
/// iterations. `ground_truth` only feeds the optional metric trace.
pub fn reconstruct<M: ScoreModel + ?Sized>(
    meas: &UndersampledMeasurement,
    model: &mut M,
    cfg: &R3dmConfig,
    ground_truth: Option<&ImageVolume>,
) -> Result<ReconResult> {
    let start = Instant::now();
    cfg.recon.validate()?;
    let schedule = cfg.schedule.build()?;
    let shape = meas.shape();
    if let Some(g) = ground_truth {
        if g.shape() != shape {
            return Err(Error::shape(shape, g.shape()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init: Vec<Complex64> = (0..shape.len())
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut x = ImageVolume::from_parts(shape, init);
    let m = cfg.recon.inner_iters;
    let step = if m > 0 { Some(resolve_step(meas, &cfg.recon)?) } else { None };
    let mut trace = Vec::new();

    if schedule.steps() == 0 {
        if let Some(step) = step {
            let res = solve_g_with_step(&x, meas, &cfg.recon, step)?;
            x = res.volume;
            if cfg.emit_trace {
                let metrics = trace_metrics(ground_truth, &x)?;
                push_rows(&mut trace, 0, &res.trace, metrics);
            }
        }
    }

    for t in (1..=schedule.steps()).rev() {
        let bridged = bridge_in(&x, cfg.complex_bridge);
        let stepped = ddpm_step(&bridged, t, model, &schedule, &mut rng).map_err(|e| with_step_context(e, t))?;
        let next = bridge_out(&x, &stepped, cfg.complex_bridge);
        if !next.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite values after the diffusion update at t={t} (model {})",
                model.name()
            )));
        }
        x = next;
        if let Some(step) = step {
            let res = solve_g_with_step(&x, meas, &cfg.recon, step).map_err(|e| with_step_context(e, t))?;
            x = res.volume;
            if cfg.emit_trace {
                let metrics = trace_metrics(ground_truth, &x)?;
                push_rows(&mut trace, t, &res.trace, metrics);
            }
        } else if cfg.emit_trace {
            let metrics = trace_metrics(ground_truth, &x)?;
            trace.push(TraceRow {
                t,
                i: 0,
                loss: crate::optimizer::loss(&x, meas, &cfg.recon)?,
                ssim: metrics.0,
                psnr: metrics.1,
            });
        }
        log::debug!("reverse step t={t} done");
    }

    Ok(ReconResult {
        volume: x,
        trace,
        step,
        wall_time: start.elapsed(),
    })
}

/// Proximal gradient alone: `T * m` iterations from the zero-filled image.
pub fn reconstruct_pgd_only(
    meas: &UndersampledMeasurement,
    cfg: &R3dmConfig,
    ground_truth: Option<&ImageVolume>,
) -> Result<ReconResult> {
    let start = Instant::now();
    cfg.recon.validate()?;
    let total = cfg.schedule.steps * cfg.recon.inner_iters;
    let mut x = zero_filled(meas);
    let mut trace = Vec::new();
    let mut step = None;
    if total > 0 {
        let s = resolve_step(meas, &cfg.recon)?;
        let recon = ReconConfig {
            inner_iters: total,
            ..cfg.recon
        };
        let res = solve_g_with_step(&x, meas, &recon, s)?;
        x = res.volume;
        step = Some(s);
        if cfg.emit_trace {
            let metrics = trace_metrics(ground_truth, &x)?;
            push_rows(&mut trace, 0, &res.trace, metrics);
        }
    }
    Ok(ReconResult {
        volume: x,
        trace,
        step,
        wall_time: start.elapsed(),
    })
}
