//! Sparsity and smoothness priors.
//!
//! Gradients use the real-coordinate convention: for `f: C^n -> R` the
//! gradient is `df/dRe + i df/dIm`, so `x - t * grad` is a descent step and
//! central finite differences along the real and imaginary axes recover it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::volume::ImageVolume;
use crate::{Error, Result};

/// Weights of the regularizers: `alpha * ||X||_1 + tv * ATV(X)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegWeights {
    pub alpha: f64,
    pub tv_on: bool,
    #[serde(default = "default_tv_weight")]
    pub tv_weight: f64,
}

fn default_tv_weight() -> f64 {
    1.0
}

impl Default for RegWeights {
    fn default() -> Self {
        RegWeights {
            alpha: 0.02,
            tv_on: true,
            tv_weight: 1.0,
        }
    }
}

impl RegWeights {
    pub fn off() -> Self {
        RegWeights {
            alpha: 0.0,
            tv_on: false,
            tv_weight: 1.0,
        }
    }

    /// Effective smoothness weight; zero when the term is switched off.
    pub fn tv(&self) -> f64 {
        if self.tv_on {
            self.tv_weight
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.tv_weight >= 0.0) || !self.tv_weight.is_finite() {
            return Err(Error::Config(format!(
                "tv weight must be >= 0, got {}",
                self.tv_weight
            )));
        }
        Ok(())
    }
}

/// Sum of element moduli.
pub fn l1_norm(vol: &ImageVolume) -> f64 {
    vol.as_slice().iter().map(|z| z.norm()).sum()
}

#[inline]
pub(crate) fn shrink(z: Complex64, alpha: f64) -> Complex64 {
    let r = z.norm();
    if r >= alpha && r > 0.0 {
        z * ((r - alpha) / r)
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Complex soft-thresholding: shrink each modulus by `alpha`, keep the phase.
pub fn soft_threshold(vol: &ImageVolume, alpha: f64) -> Result<ImageVolume> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("threshold must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(vol.clone());
    }
    Ok(vol.map(|z| shrink(z, alpha)))
}

/// Approximated total variation: squared first differences along both
/// in-plane axes of every slice.
pub fn atv_value(vol: &ImageVolume) -> f64 {
    let n = vol.n();
    let mut total = 0.0;
    for s in 0..vol.slices() {
        let p = vol.slice(s);
        for i in 0..n {
            for j in 0..n {
                if j + 1 < n {
                    total += (p[i * n + j + 1] - p[i * n + j]).norm_sqr();
                }
                if i + 1 < n {
                    total += (p[(i + 1) * n + j] - p[i * n + j]).norm_sqr();
                }
            }
        }
    }
    total
}

/// Gradient of [`atv_value`]: `2 B^H B x`.
pub fn atv_gradient(vol: &ImageVolume) -> ImageVolume {
    let n = vol.n();
    let mut out = ImageVolume::zeros(vol.shape());
    for s in 0..vol.slices() {
        let p = vol.slice(s);
        let g = out.slice_mut(s);
        for i in 0..n {
            for j in 0..n {
                let x = p[i * n + j];
                let mut acc = Complex64::new(0.0, 0.0);
                if j + 1 < n {
                    acc += x - p[i * n + j + 1];
                }
                if j > 0 {
                    acc += x - p[i * n + j - 1];
                }
                if i + 1 < n {
                    acc += x - p[(i + 1) * n + j];
                }
                if i > 0 {
                    acc += x - p[(i - 1) * n + j];
                }
                g[i * n + j] = acc * 2.0;
            }
        }
    }
    out
}
