//! Data-consistency solver: proximal gradient on
//!
//! ```text
//! L(X) = 1/2 sum_s |Y_s - M o F2(X_s)|^2
//!      + rho/2 sum_s |y_s^ky - A_y X_s|^2 + rho/2 sum_s |y_s^kx - A_x X_s|^2
//!      + tv * ATV(X)
//! ```
//!
//! with the l1 term handled by soft-thresholding. `A_y`, `A_x` are the slice
//! operators of [`crate::forward`].

use serde::{Deserialize, Serialize};

use crate::forward::{residual_sqr, slice_adjoint, slice_forward, Axis, UndersampledMeasurement};
use crate::regularization::{atv_gradient, atv_value, l1_norm, shrink, RegWeights};
use crate::spectral::{power_iteration, PowerOptions};
use crate::volume::{fft2_unchecked, ifft2_unchecked, ImageVolume, KSpaceVolume};
use crate::{Error, Result};

/// How the gradient step size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `1 / (5 + 2 rho sqrt(N))`
    PaperFormula,
    /// `1 / L` with `L` the power-iteration estimate of the Hessian norm.
    PowerIteration,
    /// Use `lambda` as given.
    Fixed,
}

/// Soft-threshold applied after each gradient step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `lambda * alpha`, the proximal map of the scaled subproblem.
    Scaled,
    /// `alpha` regardless of the step size.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub inner_iters: usize,
    pub lambda: f64,
    pub rho: f64,
    pub reg: RegWeights,
    pub step_mode: StepMode,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdMode,
}

fn default_threshold() -> ThresholdMode {
    ThresholdMode::Scaled
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            inner_iters: 10,
            lambda: 0.01,
            rho: 1.0,
            reg: RegWeights::default(),
            step_mode: StepMode::PowerIteration,
            threshold: ThresholdMode::Scaled,
        }
    }
}

impl ReconConfig {
    /// Plain least squares with the slice penalties: no l1, no smoothness.
    pub fn unregularized(inner_iters: usize, rho: f64) -> Self {
        ReconConfig {
            inner_iters,
            rho,
            reg: RegWeights::off(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("step size must be > 0, got {}", self.lambda)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        self.reg.validate()
    }

    fn threshold_for(&self, step: f64) -> f64 {
        match self.threshold {
            ThresholdMode::Scaled => step * self.reg.alpha,
            ThresholdMode::Raw => self.reg.alpha,
        }
    }
}

/// Terms of the smooth loss, each already weighted as it enters `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fidelity: f64,
    pub slice_ky: f64,
    pub slice_kx: f64,
    pub tv: f64,
    pub total: f64,
}

fn check_shapes(vol: &ImageVolume, meas: &UndersampledMeasurement) -> Result<()> {
    if vol.shape() != meas.shape() {
        return Err(Error::shape(meas.shape(), vol.shape()));
    }
    Ok(())
}

fn evaluate(
    vol: &ImageVolume,
    meas: &UndersampledMeasurement,
    cfg: &ReconConfig,
    want_grad: bool,
) -> (LossBreakdown, Option<ImageVolume>) {
    let shape = vol.shape();
    let plane = shape.slice_len();
    let pattern = meas.mask().pattern();

    let mut resid = fft2_unchecked(vol);
    for (k, (z, y)) in resid
        .as_mut_slice()
        .iter_mut()
        .zip(meas.kspace().as_slice())
        .enumerate()
    {
        *z = if pattern[k % plane] == 0 {
            num_complex::Complex64::new(0.0, 0.0)
        } else {
            *z - y
        };
    }
    let fidelity = 0.5 * resid.norm_sqr();
    let mut grad = want_grad.then(|| ifft2_unchecked(&resid));

    let sm = meas.slice_mask();
    let mut slice_terms = [0.0; 2];
    if cfg.rho > 0.0 {
        for (term, (axis, m, y)) in slice_terms.iter_mut().zip([
            (Axis::Ky, &sm.m_ky, meas.proj_ky_all()),
            (Axis::Kx, &sm.m_kx, meas.proj_kx_all()),
        ]) {
            let mut r = slice_forward(vol, m, axis);
            *term = 0.5 * cfg.rho * residual_sqr(&r, y);
            if let Some(g) = grad.as_mut() {
                for (a, b) in r.iter_mut().zip(y) {
                    *a -= b;
                }
                let adj = slice_adjoint(&r, m, shape, axis);
                for (gz, az) in g.as_mut_slice().iter_mut().zip(adj.as_slice()) {
                    *gz += az * cfg.rho;
                }
            }
        }
    }

    let tv_w = cfg.reg.tv();
    let tv = if tv_w > 0.0 {
        if let Some(g) = grad.as_mut() {
            let tg = atv_gradient(vol);
            for (gz, tz) in g.as_mut_slice().iter_mut().zip(tg.as_slice()) {
                *gz += tz * tv_w;
            }
        }
        tv_w * atv_value(vol)
    } else {
        0.0
    };

    let breakdown = LossBreakdown {
        fidelity,
        slice_ky: slice_terms[0],
        slice_kx: slice_terms[1],
        tv,
        total: fidelity + slice_terms[0] + slice_terms[1] + tv,
    };
    (breakdown, grad)
}

/// Smooth part of the objective. The l1 term is not included.
pub fn loss(vol: &ImageVolume, meas: &UndersampledMeasurement, cfg: &ReconConfig) -> Result<LossBreakdown> {
    check_shapes(vol, meas)?;
    Ok(evaluate(vol, meas, cfg, false).0)
}

/// Smooth loss plus `alpha * ||X||_1`, the quantity proximal gradient
/// decreases monotonically.
pub fn composite_objective(
    vol: &ImageVolume,
    meas: &UndersampledMeasurement,
    cfg: &ReconConfig,
) -> Result<f64> {
    Ok(loss(vol, meas, cfg)?.total + cfg.reg.alpha * l1_norm(vol))
}

/// Gradient of [`loss`] (real-coordinate convention, see
/// [`crate::regularization`]).
pub fn loss_gradient(
    vol: &ImageVolume,
    meas: &UndersampledMeasurement,
    cfg: &ReconConfig,
) -> Result<ImageVolume> {
    check_shapes(vol, meas)?;
    Ok(evaluate(vol, meas, cfg, true).1.expect("gradient requested"))
}

/// Hessian of the (quadratic) smooth loss applied to `v`.
pub fn hessian_apply(v: &ImageVolume, meas: &UndersampledMeasurement, cfg: &ReconConfig) -> ImageVolume {
    let shape = v.shape();
    let plane = shape.slice_len();
    let pattern = meas.mask().pattern();
    let mut k = fft2_unchecked(v);
    for (idx, z) in k.as_mut_slice().iter_mut().enumerate() {
        if pattern[idx % plane] == 0 {
            *z = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    let mut out = ifft2_unchecked(&KSpaceVolume::from_grid(k.into_grid()));
    if cfg.rho > 0.0 {
        let sm = meas.slice_mask();
        for (axis, m) in [(Axis::Ky, &sm.m_ky), (Axis::Kx, &sm.m_kx)] {
            let lines = slice_forward(v, m, axis);
            let adj = slice_adjoint(&lines, m, shape, axis);
            for (o, a) in out.as_mut_slice().iter_mut().zip(adj.as_slice()) {
                *o += a * cfg.rho;
            }
        }
    }
    let tv_w = cfg.reg.tv();
    if tv_w > 0.0 {
        let tg = atv_gradient(v);
        for (o, t) in out.as_mut_slice().iter_mut().zip(tg.as_slice()) {
            *o += t * tv_w;
        }
    }
    out
}

/// Lipschitz constant of the loss gradient as bounded in closed form:
/// `5 + 2 rho sqrt(N)`.
pub fn lipschitz_paper(n: usize, rho: f64) -> f64 {
    5.0 + 2.0 * rho * (n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest Hessian eigenvalue of the smooth loss by power iteration
/// (at most 500 iterations).
pub fn lipschitz_estimate(meas: &UndersampledMeasurement, cfg: &ReconConfig) -> Result<LipschitzEstimate> {
    cfg.validate()?;
    let shape = meas.shape();
    let report = power_iteration(
        "loss Hessian",
        shape.len(),
        |v| {
            let vol = ImageVolume::from_parts(shape, v.to_vec());
            hessian_apply(&vol, meas, cfg).into_grid().into_vec()
        },
        PowerOptions {
            tol: 1e-9,
            max_iter: 500,
            seed: 0,
        },
    );
    if !report.converged {
        log::warn!(
            "Lipschitz power iteration stopped after {} iterations without converging (estimate {:.6})",
            report.iterations,
            report.max_eigenvalue
        );
    }
    Ok(LipschitzEstimate {
        value: report.max_eigenvalue,
        iterations: report.iterations,
        converged: report.converged,
    })
}

/// Step size selected by `cfg.step_mode`.
pub fn resolve_step(meas: &UndersampledMeasurement, cfg: &ReconConfig) -> Result<f64> {
    cfg.validate()?;
    let step = match cfg.step_mode {
        StepMode::Fixed => cfg.lambda,
        StepMode::PaperFormula => 1.0 / lipschitz_paper(meas.shape().n, cfg.rho),
        StepMode::PowerIteration => {
            let l = lipschitz_estimate(meas, cfg)?.value;
            if l > 0.0 {
                1.0 / l
            } else {
                cfg.lambda
            }
        }
    };
    Ok(step)
}

/// One proximal-gradient update with an explicit step size.
pub fn pgd_step_with(
    vol: &ImageVolume,
    meas: &UndersampledMeasurement,
    cfg: &ReconConfig,
    step: f64,
) -> Result<ImageVolume> {
    check_shapes(vol, meas)?;
    Ok(step_inner(vol, meas, cfg, step).1)
}

fn step_inner(
    vol: &ImageVolume,
    meas: &UndersampledMeasurement,
    cfg: &ReconConfig,
    step: f64,
) -> (LossBreakdown, ImageVolume) {
    let (breakdown, grad) = evaluate(vol, meas, cfg, true);
    let grad = grad.expect("gradient requested");
    let thr = cfg.threshold_for(step);
    let data = vol
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(x, g)| {
            let z = x - g * step;
            if thr > 0.0 {
                shrink(z, thr)
            } else {
                z
            }
        })
        .collect();
    (breakdown, ImageVolume::from_parts(vol.shape(), data))
}

/// `prox(X - lambda * grad L(X))` with the step size from `cfg.step_mode`.
pub fn pgd_step(vol: &ImageVolume, meas: &UndersampledMeasurement, cfg: &ReconConfig) -> Result<ImageVolume> {
    let step = resolve_step(meas, cfg)?;
    pgd_step_with(vol, meas, cfg, step)
}

/// Result of [`solve_g`]: the final iterate and the loss at every iterate
/// (`inner_iters + 1` entries, starting with the initial volume).
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub volume: ImageVolume,
    pub trace: Vec<LossBreakdown>,
    pub step: f64,
}

/// `inner_iters` proximal-gradient steps from `vol0`.
pub fn solve_g(vol0: &ImageVolume, meas: &UndersampledMeasurement, cfg: &ReconConfig) -> Result<SolveResult> {
    check_shapes(vol0, meas)?;
    let step = resolve_step(meas, cfg)?;
    solve_g_with_step(vol0, meas, cfg, step)
}

/// [`solve_g`] with an already resolved step size.
pub fn solve_g_with_step(
    vol0: &ImageVolume,
    meas: &UndersampledMeasurement,
    cfg: &ReconConfig,
    step: f64,
) -> Result<SolveResult> {
    check_shapes(vol0, meas)?;
    cfg.validate()?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("step size must be > 0, got {step}")));
    }
    let mut x = vol0.clone();
    let mut trace = Vec::with_capacity(cfg.inner_iters + 1);
    for i in 0..cfg.inner_iters {
        let (breakdown, next) = step_inner(&x, meas, cfg, step);
        trace.push(breakdown);
        if !next.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite iterate after inner iteration {}",
                i + 1
            )));
        }
        x = next;
    }
    trace.push(evaluate(&x, meas, cfg, false).0);
    Ok(SolveResult {
        volume: x,
        trace,
        step,
    })
}
