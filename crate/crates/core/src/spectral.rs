//! Power iteration and numerical checks of the operator spectra that govern
//! step-size selection.
//!
//! Reports always carry the measured value. When a published reference value
//! disagrees with the measurement, the report records both plus a note; the
//! solver only ever consumes measured values.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::forward::{slice_adjoint, slice_forward, Axis};
use crate::masks::{slice_mask, Mask};
use crate::regularization::atv_gradient;
use crate::volume::{fft1_unchecked, fft2_unchecked, ifft2_unchecked, ImageVolume, KSpaceVolume, Shape};
use crate::{Error, Result};

/// Outcome of a dominant-eigenvalue computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub operator: String,
    pub max_eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reference: Option<f64>,
    pub note: Option<String>,
}

impl SpectralReport {
    fn with_reference(mut self, reference: f64, tol: f64) -> Self {
        self.reference = Some(reference);
        if (self.max_eigenvalue - reference).abs() > tol {
            self.note = Some(format!(
                "measured maximum eigenvalue {:.9} differs from the reference value {} by {:.3e}",
                self.max_eigenvalue,
                reference,
                self.max_eigenvalue - reference
            ));
        }
        self
    }
}

/// Settings for [`power_iteration`].
#[derive(Clone, Copy, Debug)]
pub struct PowerOptions {
    /// Relative change of the Rayleigh quotient that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-10,
            max_iter: 5000,
            seed: 0,
        }
    }
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Dominant eigenvalue of a self-adjoint positive semidefinite map on `C^dim`
/// by power iteration from a seeded Gaussian start. The estimate is the
/// Rayleigh quotient of the current iterate.
pub fn power_iteration<F>(name: &str, dim: usize, mut op: F, opts: PowerOptions) -> SpectralReport
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let norm = vec_norm(&v);
    v.iter_mut().for_each(|z| *z /= norm);

    let mut estimate = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iter.max(1) {
        iterations = k;
        let w = op(&v);
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum();
        let wn = vec_norm(&w);
        if wn == 0.0 || !wn.is_finite() {
            estimate = if wn == 0.0 { 0.0 } else { f64::NAN };
            converged = wn == 0.0;
            break;
        }
        let change = (rayleigh - estimate).abs();
        estimate = rayleigh;
        v = w;
        v.iter_mut().for_each(|z| *z /= wn);
        if k > 1 && change <= opts.tol * rayleigh.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    SpectralReport {
        operator: name.to_string(),
        max_eigenvalue: estimate.max(0.0),
        iterations,
        converged,
        reference: None,
        note: None,
    }
}

/// Normal operator of masked 2D sampling, `F^H diag(M) F`, on `slices` slices.
pub fn check_a_spectrum(mask: &Mask, slices: usize) -> Result<SpectralReport> {
    let shape = Shape::new(slices, mask.n())?;
    let plane = shape.slice_len();
    let pattern = mask.pattern().to_vec();
    let report = power_iteration(
        "A^H A (masked 2D Fourier)",
        shape.len(),
        |v| {
            let vol = ImageVolume::from_parts(shape, v.to_vec());
            let mut k = fft2_unchecked(&vol);
            for (idx, z) in k.as_mut_slice().iter_mut().enumerate() {
                if pattern[idx % plane] == 0 {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
            ifft2_unchecked(&KSpaceVolume::from_grid(k.into_grid())).into_grid().into_vec()
        },
        PowerOptions::default(),
    );
    Ok(report.with_reference(1.0, 1e-6))
}

/// Normal operator of one masked 1D line transform acting on projection
/// vectors (`S x N`), `F1^H diag(m) F1`.
pub fn check_line_spectrum(mask: &Mask, slices: usize, axis: Axis) -> Result<SpectralReport> {
    let n = mask.n();
    Shape::new(slices, n)?;
    let sm = slice_mask(mask);
    let m = match axis {
        Axis::Ky => sm.m_ky,
        Axis::Kx => sm.m_kx,
    };
    let name = match axis {
        Axis::Ky => "A_y^H A_y (masked 1D Fourier, k_x = 0)",
        Axis::Kx => "A_x^H A_x (masked 1D Fourier, k_y = 0)",
    };
    let report = power_iteration(
        name,
        slices * n,
        |v| {
            let mut out = Vec::with_capacity(v.len());
            for chunk in v.chunks_exact(n) {
                let f: Vec<Complex64> = fft1_unchecked(chunk, true)
                    .iter()
                    .zip(&m)
                    .map(|(z, w)| z * *w)
                    .collect();
                out.extend(fft1_unchecked(&f, false));
            }
            out
        },
        PowerOptions::default(),
    );
    Ok(report.with_reference(1.0, 1e-6))
}

/// Normal operator of the composite slice constraint acting on volumes,
/// `A_y^H A_y` after projection and the unitary scaling. Its maximum is also 1.
pub fn check_slice_operator_spectrum(mask: &Mask, slices: usize, axis: Axis) -> Result<SpectralReport> {
    let shape = Shape::new(slices, mask.n())?;
    let sm = slice_mask(mask);
    let m = match axis {
        Axis::Ky => sm.m_ky,
        Axis::Kx => sm.m_kx,
    };
    let report = power_iteration(
        "slice constraint normal operator on volumes",
        shape.len(),
        |v| {
            let vol = ImageVolume::from_parts(shape, v.to_vec());
            let lines = slice_forward(&vol, &m, axis);
            slice_adjoint(&lines, &m, shape, axis).into_grid().into_vec()
        },
        PowerOptions::default(),
    );
    Ok(report.with_reference(1.0, 1e-6))
}

/// `B^H B` for the in-plane first differences, via power iteration.
/// Reference value 4; a note is attached when the measurement disagrees.
pub fn check_b_spectrum(n: usize, slices: usize) -> Result<SpectralReport> {
    let shape = Shape::new(slices, n)?;
    let report = power_iteration(
        "B^H B (in-plane first differences)",
        shape.len(),
        |v| {
            let vol = ImageVolume::from_parts(shape, v.to_vec());
            atv_gradient(&vol).scaled(0.5).into_grid().into_vec()
        },
        PowerOptions {
            tol: 1e-13,
            max_iter: 20_000,
            seed: 0,
        },
    );
    Ok(report.with_reference(4.0, 1e-3))
}

/// Dense spectrum of `D^T D` (first differences on `n` points) next to the
/// closed form `2 - 2 cos(i pi / n)`, `i = 1..n-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhdSpectrum {
    pub n: usize,
    /// All eigenvalues, ascending (the first is the null eigenvalue).
    pub computed: Vec<f64>,
    /// Closed-form values for `i = 1..n-1`, ascending.
    pub formula: Vec<f64>,
}

impl DhdSpectrum {
    /// Largest deviation between the nonzero computed eigenvalues and the
    /// closed form.
    pub fn max_deviation(&self) -> f64 {
        self.computed[1..]
            .iter()
            .zip(&self.formula)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn dhd_matrix(n: usize) -> DMatrix<f64> {
    let d = DMatrix::from_fn(n - 1, n, |r, c| {
        if c == r + 1 {
            1.0
        } else if c == r {
            -1.0
        } else {
            0.0
        }
    });
    d.transpose() * d
}

pub fn dhd_eigenvalues(n: usize) -> Result<DhdSpectrum> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("n must be >= 2, got {n}")));
    }
    let eig = SymmetricEigen::new(dhd_matrix(n));
    let mut computed: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    computed.sort_by(f64::total_cmp);
    let formula = (1..n)
        .map(|i| 2.0 - 2.0 * (i as f64 * std::f64::consts::PI / n as f64).cos())
        .collect();
    Ok(DhdSpectrum {
        n,
        computed,
        formula,
    })
}

/// Grid check of the gradient bound for an isotropic Gaussian density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLipschitzReport {
    pub d: usize,
    pub sigma: f64,
    /// `e^{-1/2} / sqrt((2 pi)^d sigma^{2d+2})`
    pub bound: f64,
    pub grid_max: f64,
    /// `|z - mu|` at the grid maximum.
    pub argmax_radius: f64,
    pub grid_step: f64,
    pub within_bound: bool,
    /// `|grid_max - bound| / bound`
    pub attainment_rel_err: f64,
}

pub fn gaussian_lipschitz_bound(d: usize, sigma: f64) -> f64 {
    (-0.5f64).exp()
        / ((2.0 * std::f64::consts::PI).powi(d as i32) * sigma.powi(2 * d as i32 + 2)).sqrt()
}

fn gaussian_grad_norm(d: usize, sigma: f64, r: f64) -> f64 {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma).powf(d as f64 / 2.0);
    norm * (-r * r / (2.0 * sigma * sigma)).exp() * r / (sigma * sigma)
}

/// Maximize `|grad p(z)|` over a dense grid covering `|z - mu| <= 6 sigma`.
pub fn check_gaussian_lipschitz(d: usize, sigma: f64) -> Result<GaussianLipschitzReport> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let extent = 6.0 * sigma;
    let (grid_max, argmax_radius, step) = match d {
        1 => {
            let points = 24_001;
            let step = 2.0 * extent / (points - 1) as f64;
            let mut best = (0.0, 0.0);
            for k in 0..points {
                let z = -extent + k as f64 * step;
                let g = gaussian_grad_norm(1, sigma, z.abs());
                if g > best.0 {
                    best = (g, z.abs());
                }
            }
            (best.0, best.1, step)
        }
        2 => {
            let points = 1_201;
            let step = 2.0 * extent / (points - 1) as f64;
            let mut best = (0.0, 0.0);
            for a in 0..points {
                let x = -extent + a as f64 * step;
                for b in 0..points {
                    let y = -extent + b as f64 * step;
                    let r = (x * x + y * y).sqrt();
                    if r > extent {
                        continue;
                    }
                    let g = gaussian_grad_norm(2, sigma, r);
                    if g > best.0 {
                        best = (g, r);
                    }
                }
            }
            (best.0, best.1, step)
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "dimension must be 1 or 2, got {d}"
            )))
        }
    };
    let bound = gaussian_lipschitz_bound(d, sigma);
    Ok(GaussianLipschitzReport {
        d,
        sigma,
        bound,
        grid_max,
        argmax_radius,
        grid_step: step,
        within_bound: grid_max <= bound * (1.0 + 1e-12),
        attainment_rel_err: (grid_max - bound).abs() / bound,
    })
}
