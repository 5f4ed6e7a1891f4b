//! Denoisers `D(x, sigma)` for the Tweedie score model.

use std::sync::Mutex;

use num_complex::Complex64;

use crate::regularization::shrink;
use crate::volume::ImageVolume;

/// Estimate of a clean volume from `x = x0 + sigma * z`. Must satisfy
/// `D(x, 0) = x`.
pub trait Denoiser {
    fn denoise(&self, x: &ImageVolume, sigma: f64) -> ImageVolume;

    fn name(&self) -> String;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x: &ImageVolume, _sigma: f64) -> ImageVolume {
        x.clone()
    }

    fn name(&self) -> String {
        "identity".into()
    }
}

/// MMSE denoiser for the prior `N(mu0, var0 I)`:
/// `(var0 y + sigma^2 mu0) / (var0 + sigma^2)`.
#[derive(Clone, Debug)]
pub struct GaussianPosteriorDenoiser {
    pub mu0: ImageVolume,
    pub var0: f64,
}

impl Denoiser for GaussianPosteriorDenoiser {
    fn denoise(&self, x: &ImageVolume, sigma: f64) -> ImageVolume {
        let s2 = sigma * sigma;
        let d = self.var0 + s2;
        x.lin_comb(self.var0 / d, &self.mu0, s2 / d)
            .expect("denoiser mean must match the input shape")
    }

    fn name(&self) -> String {
        format!("gaussian-posterior(var0={})", self.var0)
    }
}

/// Slicewise orthonormal 2D DCT-II, soft-thresholding every coefficient but
/// DC at `c * sigma`.
#[derive(Debug)]
pub struct DctThresholdDenoiser {
    pub c: f64,
    basis: Mutex<Option<(usize, Vec<f64>)>>,
}

impl Clone for DctThresholdDenoiser {
    fn clone(&self) -> Self {
        DctThresholdDenoiser::new(self.c)
    }
}

/// Default threshold multiplier `c`.
pub const DEFAULT_DCT_THRESHOLD: f64 = 3.0;

impl Default for DctThresholdDenoiser {
    fn default() -> Self {
        DctThresholdDenoiser::new(DEFAULT_DCT_THRESHOLD)
    }
}

/// Row-major orthonormal DCT-II matrix: `C[k][j] = a_k cos(pi (j + 1/2) k / n)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for k in 0..n {
        let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for j in 0..n {
            c[k * n + j] = a * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    c
}

/// `C p C^T` when `forward`, else `C^T p C`, for one `n x n` plane.
fn sandwich(c: &[f64], p: &[Complex64], n: usize, forward: bool) -> Vec<Complex64> {
    let coef = |a: usize, b: usize| if forward { c[a * n + b] } else { c[b * n + a] };
    let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for k in 0..n {
            let w = coef(i, k);
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                tmp[i * n + j] += p[k * n + j] * w;
            }
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += tmp[i * n + k] * coef(j, k);
            }
            out[i * n + j] = acc;
        }
    }
    out
}

impl DctThresholdDenoiser {
    pub fn new(c: f64) -> Self {
        DctThresholdDenoiser {
            c,
            basis: Mutex::new(None),
        }
    }

    fn basis(&self, n: usize) -> Vec<f64> {
        let mut guard = self.basis.lock().unwrap_or_else(|e| e.into_inner());
        match guard.as_ref() {
            Some((m, b)) if *m == n => b.clone(),
            _ => {
                let b = dct_matrix(n);
                *guard = Some((n, b.clone()));
                b
            }
        }
    }

    pub fn forward(&self, plane: &[Complex64], n: usize) -> Vec<Complex64> {
        sandwich(&self.basis(n), plane, n, true)
    }

    pub fn inverse(&self, coeffs: &[Complex64], n: usize) -> Vec<Complex64> {
        sandwich(&self.basis(n), coeffs, n, false)
    }
}

impl Denoiser for DctThresholdDenoiser {
    fn denoise(&self, x: &ImageVolume, sigma: f64) -> ImageVolume {
        let tau = self.c * sigma;
        if !(tau > 0.0) {
            return x.clone();
        }
        let n = x.n();
        let basis = self.basis(n);
        let mut out = ImageVolume::zeros(x.shape());
        for s in 0..x.slices() {
            let mut coeffs = sandwich(&basis, x.slice(s), n, true);
            for z in coeffs.iter_mut().skip(1) {
                *z = shrink(*z, tau);
            }
            out.slice_mut(s).copy_from_slice(&sandwich(&basis, &coeffs, n, false));
        }
        out
    }

    fn name(&self) -> String {
        format!("dct-threshold(c={})", self.c)
    }
}
