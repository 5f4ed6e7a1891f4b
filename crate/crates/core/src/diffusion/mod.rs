//! DDPM noise schedules, score models, the ancestral sampling step and the
//! Tweedie posterior mean.
//!
//! Timesteps are 1-based: `t = 1..=T`, with `alpha_bar(0) = 1`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::volume::ImageVolume;
use crate::{Error, Result};

mod denoise;
pub mod external;

pub use denoise::{
    dct_matrix, DctThresholdDenoiser, Denoiser, GaussianPosteriorDenoiser, IdentityDenoiser, DEFAULT_DCT_THRESHOLD,
};
pub use external::ExternalScoreModel;

/// Number of timesteps the standard DDPM betas `1e-4 -> 0.02` were defined for.
pub const REFERENCE_STEPS: usize = 1000;

/// Variance schedule `beta_t` and the cumulative products `alpha_bar_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config(format!("betas must lie in (0, 1), found {b}")));
        }
        let mut acc = 1.0;
        let alphas_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alphas_bar })
    }

    /// Schedule with no steps; sampling loops degenerate to the initial draw.
    pub fn empty() -> Self {
        NoiseSchedule {
            betas: Vec::new(),
            alphas_bar: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidInput(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }
}

/// Betas interpolated linearly from `beta_start` to `beta_end`, endpoints
/// included.
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|k| beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// The standard `1e-4 -> 0.02` linear schedule, with both endpoints scaled by
/// `1000 / steps` when fewer steps are requested so short chains still end
/// near pure noise.
pub fn ddpm_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Ok(NoiseSchedule::empty());
    }
    let scale = (REFERENCE_STEPS as f64 / steps as f64).max(1.0);
    linear_schedule(steps, 1e-4 * scale, (0.02 * scale).min(0.999))
}

/// Approximation of the score `grad log p_t(x_t)`.
pub trait ScoreModel {
    fn score(&mut self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume>;

    fn name(&self) -> String;
}

impl<M: ScoreModel + ?Sized> ScoreModel for Box<M> {
    fn score(&mut self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        (**self).score(x_t, t)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Score that is identically zero: sampling without any prior.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroScoreModel;

impl ScoreModel for ZeroScoreModel {
    fn score(&mut self, x_t: &ImageVolume, _t: usize) -> Result<ImageVolume> {
        Ok(ImageVolume::zeros(x_t.shape()))
    }

    fn name(&self) -> String {
        "zero".into()
    }
}

/// Exact score for data drawn from `N(mu0, var0 I)`.
#[derive(Clone, Debug)]
pub struct GaussianScoreModel {
    pub mu0: ImageVolume,
    pub var0: f64,
    schedule: NoiseSchedule,
}

impl GaussianScoreModel {
    pub fn new(mu0: ImageVolume, var0: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(var0 > 0.0) {
            return Err(Error::Config(format!("data variance must be positive, got {var0}")));
        }
        Ok(GaussianScoreModel { mu0, var0, schedule })
    }

    /// Variance of the marginal at step `t`: `alpha_bar var0 + 1 - alpha_bar`.
    pub fn marginal_variance(&self, t: usize) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        ab * self.var0 + 1.0 - ab
    }

    /// `-(x_t - sqrt(alpha_bar) mu0) / (alpha_bar var0 + 1 - alpha_bar)`
    pub fn gaussian_score(&self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        if t > self.schedule.steps() {
            return Err(Error::InvalidInput(format!("timestep {t} beyond schedule")));
        }
        x_t.check_same_shape(&self.mu0)?;
        let sab = self.schedule.alpha_bar(t).sqrt();
        let var = self.marginal_variance(t);
        x_t.lin_comb(-1.0 / var, &self.mu0, sab / var)
    }

    /// Closed-form `E[x0 | x_t]` for the Gaussian prior.
    pub fn closed_form_posterior_mean(&self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        let ab = self.schedule.alpha_bar(t);
        let denom = ab * self.var0 + 1.0 - ab;
        x_t.lin_comb(ab.sqrt() * self.var0 / denom, &self.mu0, (1.0 - ab) / denom)
    }
}

impl ScoreModel for GaussianScoreModel {
    fn score(&mut self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        self.gaussian_score(x_t, t)
    }

    fn name(&self) -> String {
        format!("gaussian(var0={})", self.var0)
    }
}

/// Score from a denoiser through Tweedie's identity.
pub struct TweedieDenoiserModel {
    denoiser: Box<dyn Denoiser + Send>,
    schedule: NoiseSchedule,
}

impl TweedieDenoiserModel {
    pub fn new(denoiser: Box<dyn Denoiser + Send>, schedule: NoiseSchedule) -> Self {
        TweedieDenoiserModel { denoiser, schedule }
    }

    /// `(sqrt(ab) D(x_t / sqrt(ab), sigma_eff) - x_t) / (1 - ab)` with
    /// `sigma_eff = sqrt((1 - ab) / ab)`.
    pub fn tweedie_score(&self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        self.schedule.check_t(t)?;
        let ab = self.schedule.alpha_bar(t);
        let sab = ab.sqrt();
        let sigma_eff = ((1.0 - ab) / ab).sqrt();
        let denoised = self.denoiser.denoise(&x_t.scaled(1.0 / sab), sigma_eff);
        denoised.lin_comb(sab / (1.0 - ab), x_t, -1.0 / (1.0 - ab))
    }
}

impl ScoreModel for TweedieDenoiserModel {
    fn score(&mut self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        self.tweedie_score(x_t, t)
    }

    fn name(&self) -> String {
        format!("tweedie({})", self.denoiser.name())
    }
}

/// Wraps a model that predicts the added noise `eps`; the score is
/// `-eps / sqrt(1 - alpha_bar_t)`.
pub struct EpsilonPredictionAdapter<M> {
    inner: M,
    schedule: NoiseSchedule,
}

impl<M: ScoreModel> EpsilonPredictionAdapter<M> {
    pub fn new(inner: M, schedule: NoiseSchedule) -> Self {
        EpsilonPredictionAdapter { inner, schedule }
    }
}

impl<M: ScoreModel> ScoreModel for EpsilonPredictionAdapter<M> {
    fn score(&mut self, x_t: &ImageVolume, t: usize) -> Result<ImageVolume> {
        self.schedule.check_t(t)?;
        let eps = self.inner.score(x_t, t)?;
        Ok(eps.scaled(-1.0 / (1.0 - self.schedule.alpha_bar(t)).sqrt()))
    }

    fn name(&self) -> String {
        format!("eps-adapter({})", self.inner.name())
    }
}

fn gaussian_like(x: &ImageVolume, rng: &mut impl Rng) -> ImageVolume {
    ImageVolume::from_parts(
        x.shape(),
        (0..x.shape().len())
            .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
            .collect(),
    )
}

/// Closed-form forward noising `sqrt(ab) x0 + sqrt(1 - ab) z` with real
/// standard Gaussian `z`. `t = 0` returns `x0`.
pub fn perturb(x0: &ImageVolume, t: usize, schedule: &NoiseSchedule, seed: u64) -> Result<ImageVolume> {
    if t > schedule.steps() {
        return Err(Error::InvalidInput(format!(
            "timestep {t} outside 0..={}",
            schedule.steps()
        )));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = schedule.alpha_bar(t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian_like(x0, &mut rng);
    x0.lin_comb(ab.sqrt(), &z, (1.0 - ab).sqrt())
}

/// One ancestral step:
/// `x_{t-1} = (x_t + beta_t s(x_t, t)) / sqrt(1 - beta_t) + sqrt(beta_t) z`,
/// with `z = 0` at `t = 1`.
pub fn ddpm_step<M: ScoreModel + ?Sized>(
    x_t: &ImageVolume,
    t: usize,
    model: &mut M,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ImageVolume> {
    schedule.check_t(t)?;
    let beta = schedule.beta(t);
    let score = model.score(x_t, t)?;
    if score.shape() != x_t.shape() {
        return Err(Error::shape(x_t.shape(), score.shape()));
    }
    let mean = x_t.lin_comb(1.0 / (1.0 - beta).sqrt(), &score, beta / (1.0 - beta).sqrt())?;
    if t > 1 {
        let z = gaussian_like(x_t, rng);
        Ok(mean.lin_comb(1.0, &z, beta.sqrt())?)
    } else {
        Ok(mean)
    }
}

/// Tweedie estimate `E[x0 | x_t] = (x_t + (1 - ab) s(x_t, t)) / sqrt(ab)`.
pub fn posterior_mean<M: ScoreModel + ?Sized>(
    x_t: &ImageVolume,
    t: usize,
    model: &mut M,
    schedule: &NoiseSchedule,
) -> Result<ImageVolume> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let score = model.score(x_t, t)?;
    x_t.lin_comb(1.0 / ab.sqrt(), &score, (1.0 - ab) / ab.sqrt())
}
