//! Simulated acquisition, zero-filled reconstruction and the Fourier-slice
//! measurement operators.
//!
//! With the unitary centered transforms of [`crate::volume`], the DC column
//! of a slice spectrum equals the 1D spectrum of the row sums scaled by
//! `1/sqrt(N)`:
//!
//! ```text
//! F2(X)[k_y, DC] = F1(P_y X)[k_y] / sqrt(N)
//! F2(X)[DC, k_x] = F1(P_x X)[k_x] / sqrt(N)
//! ```
//!
//! [`slice_theorem_scale`] returns that factor. The slice operators below fold it
//! in, so they compare directly against projections read off the acquired
//! k-space.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::masks::{slice_mask, Mask, MaskSlice};
use crate::volume::{fft1_unchecked, fft2_unchecked, ifft2_unchecked, ImageVolume, KSpaceVolume, Shape};
use crate::{Error, Result};

/// Ratio between the 1D spectrum of a projection and the matching centered
/// line of the 2D spectrum, as a function of `N`: `sqrt(N)`.
pub fn slice_theorem_scale(n: usize) -> f64 {
    (n as f64).sqrt()
}

/// Masked k-space plus the zero-frequency line measurements of every slice.
#[derive(Clone, Debug)]
pub struct UndersampledMeasurement {
    kspace: KSpaceVolume,
    mask: Mask,
    slice_mask: MaskSlice,
    /// `S x N`, row `s` is the DC column of slice `s`.
    proj_ky: Vec<Complex64>,
    /// `S x N`, row `s` is the DC row of slice `s`.
    proj_kx: Vec<Complex64>,
    noise_sigma: f64,
}

impl UndersampledMeasurement {
    /// Wrap already-masked k-space. Entries outside the mask are zeroed and
    /// the line measurements are read off the k-space.
    pub fn from_kspace(mut kspace: KSpaceVolume, mask: Mask, noise_sigma: f64) -> Result<Self> {
        if kspace.n() != mask.n() {
            return Err(Error::shape(
                format!("mask of size {}", kspace.n()),
                format!("mask of size {}", mask.n()),
            ));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        kspace.ensure_finite()?;
        let shape = kspace.shape();
        let n = shape.n;
        let plane = shape.slice_len();
        for (k, z) in kspace.as_mut_slice().iter_mut().enumerate() {
            if mask.pattern()[k % plane] == 0 {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        let dc = shape.dc();
        let mut proj_ky = Vec::with_capacity(shape.slices * n);
        let mut proj_kx = Vec::with_capacity(shape.slices * n);
        for s in 0..shape.slices {
            proj_ky.extend((0..n).map(|i| kspace.get(s, i, dc)));
            proj_kx.extend((0..n).map(|j| kspace.get(s, dc, j)));
        }
        let slice_mask = slice_mask(&mask);
        Ok(UndersampledMeasurement {
            kspace,
            mask,
            slice_mask,
            proj_ky,
            proj_kx,
            noise_sigma,
        })
    }

    pub fn kspace(&self) -> &KSpaceVolume {
        &self.kspace
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn slice_mask(&self) -> &MaskSlice {
        &self.slice_mask
    }

    pub fn shape(&self) -> Shape {
        self.kspace.shape()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Line measurement `y_s^{k_y}` of slice `s`.
    pub fn proj_ky(&self, s: usize) -> &[Complex64] {
        let n = self.shape().n;
        &self.proj_ky[s * n..(s + 1) * n]
    }

    /// Line measurement `y_s^{k_x}` of slice `s`.
    pub fn proj_kx(&self, s: usize) -> &[Complex64] {
        let n = self.shape().n;
        &self.proj_kx[s * n..(s + 1) * n]
    }

    pub fn proj_ky_all(&self) -> &[Complex64] {
        &self.proj_ky
    }

    pub fn proj_kx_all(&self) -> &[Complex64] {
        &self.proj_kx
    }
}

/// Simulate an acquisition: `Y_s = M o (F2(X_s) + noise_s)`.
///
/// Noise is circular complex Gaussian with `E|n|^2 = sigma^2` (each of the
/// real and imaginary parts has standard deviation `sigma / sqrt(2)`). Noise
/// is drawn for every k-space position in row-major order so the stream does
/// not depend on the mask.
pub fn acquire(
    gt: &ImageVolume,
    mask: &Mask,
    noise_sigma: f64,
    seed: u64,
) -> Result<UndersampledMeasurement> {
    if gt.n() != mask.n() {
        return Err(Error::shape(
            format!("volume with N={}", mask.n()),
            format!("volume with N={}", gt.n()),
        ));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    gt.ensure_finite()?;
    let mut kspace = fft2_unchecked(gt);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let part = noise_sigma / std::f64::consts::SQRT_2;
        for z in kspace.as_mut_slice() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(re * part, im * part);
        }
    }
    UndersampledMeasurement::from_kspace(kspace, mask.clone(), noise_sigma)
}

/// Inverse 2D transform of the masked k-space, slice by slice.
pub fn zero_filled(meas: &UndersampledMeasurement) -> ImageVolume {
    ifft2_unchecked(meas.kspace())
}

/// Row sums: `P_y(X)[i] = sum_j x[i, j]`.
pub fn project_y(slice: &[Complex64], n: usize) -> Vec<Complex64> {
    slice.chunks_exact(n).map(|row| row.iter().sum()).collect()
}

/// Column sums: `P_x(X)[j] = sum_i x[i, j]`.
pub fn project_x(slice: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for row in slice.chunks_exact(n) {
        for (acc, z) in out.iter_mut().zip(row) {
            *acc += z;
        }
    }
    out
}

/// Which zero-frequency line a slice operator targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// `k_x = 0` column, from the projection onto y.
    Ky,
    /// `k_y = 0` row, from the projection onto x.
    Kx,
}

/// `A_y X = m_ky o F1(P_y X) / sqrt(N)` for all slices (`S x N`, flat).
pub fn slice_forward(vol: &ImageVolume, line_mask: &[f64], axis: Axis) -> Vec<Complex64> {
    let n = vol.n();
    let scale = 1.0 / slice_theorem_scale(n);
    let mut out = Vec::with_capacity(vol.slices() * n);
    for s in 0..vol.slices() {
        let p = match axis {
            Axis::Ky => project_y(vol.slice(s), n),
            Axis::Kx => project_x(vol.slice(s), n),
        };
        let f = fft1_unchecked(&p, true);
        out.extend(f.iter().zip(line_mask).map(|(z, &m)| z * (m * scale)));
    }
    out
}

/// Adjoint of [`slice_forward`]: inverse 1D transform of the masked lines,
/// broadcast back along the summed axis.
pub fn slice_adjoint(lines: &[Complex64], line_mask: &[f64], shape: Shape, axis: Axis) -> ImageVolume {
    let n = shape.n;
    let scale = 1.0 / slice_theorem_scale(n);
    let mut out = ImageVolume::zeros(shape);
    for s in 0..shape.slices {
        let masked: Vec<Complex64> = lines[s * n..(s + 1) * n]
            .iter()
            .zip(line_mask)
            .map(|(z, &m)| z * (m * scale))
            .collect();
        let back = fft1_unchecked(&masked, false);
        let plane = out.slice_mut(s);
        for i in 0..n {
            for j in 0..n {
                plane[i * n + j] = match axis {
                    Axis::Ky => back[i],
                    Axis::Kx => back[j],
                };
            }
        }
    }
    out
}

/// Squared residuals of both slice constraints, summed over slices:
/// `sum_s |y_s^{k_y} - m_ky o F1(P_y X_s) / sqrt(N)|^2` and the x analogue.
pub fn fourier_slice_residual(vol: &ImageVolume, meas: &UndersampledMeasurement) -> Result<(f64, f64)> {
    if vol.shape() != meas.shape() {
        return Err(Error::shape(meas.shape(), vol.shape()));
    }
    let sm = meas.slice_mask();
    let ry = residual_sqr(&slice_forward(vol, &sm.m_ky, Axis::Ky), meas.proj_ky_all());
    let rx = residual_sqr(&slice_forward(vol, &sm.m_kx, Axis::Kx), meas.proj_kx_all());
    Ok((ry, rx))
}

pub(crate) fn residual_sqr(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}
