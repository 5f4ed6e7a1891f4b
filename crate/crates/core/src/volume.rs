//! Complex volumes of shape `S x N x N` and the unitary Fourier transforms
//! applied to them.
//!
//! Spectra are stored centered: the zero-frequency bin of an axis of length
//! `N` sits at index `N / 2`. Forward transforms shift after transforming and
//! inverse transforms unshift before, so image-domain arrays are never
//! shifted.

use std::ops::{Deref, DerefMut};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::{Error, Result};

/// Dimensions of a volume: `slices` stacked `n x n` planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub slices: usize,
    pub n: usize,
}

impl Shape {
    pub fn new(slices: usize, n: usize) -> Result<Self> {
        if slices < 1 || n < 2 {
            return Err(Error::InvalidInput(format!(
                "volume shape must have S >= 1 and N >= 2, got S={slices}, N={n}"
            )));
        }
        Ok(Shape { slices, n })
    }

    pub fn len(&self) -> usize {
        self.slices * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.n * self.n
    }

    /// Index of the zero-frequency bin in centered storage.
    pub fn dc(&self) -> usize {
        self.n / 2
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.slices, self.n, self.n)
    }
}

/// Row-major `(s, i, j)` complex grid shared by image and k-space volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    shape: Shape,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(slices: usize, n: usize, data: Vec<Complex64>) -> Result<Self> {
        let shape = Shape::new(slices, n)?;
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} elements", shape.len()),
                format!("{} elements", data.len()),
            ));
        }
        let grid = ComplexGrid { shape, data };
        grid.ensure_finite()?;
        Ok(grid)
    }

    pub fn zeros(shape: Shape) -> Self {
        ComplexGrid {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
        }
    }

    pub fn from_real(slices: usize, n: usize, real: &[f64]) -> Result<Self> {
        Self::new(
            slices,
            n,
            real.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        )
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        ComplexGrid { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn slices(&self) -> usize {
        self.shape.slices
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn index(&self, s: usize, i: usize, j: usize) -> usize {
        (s * self.shape.n + i) * self.shape.n + j
    }

    #[inline]
    pub fn get(&self, s: usize, i: usize, j: usize) -> Complex64 {
        self.data[self.index(s, i, j)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, i: usize, j: usize, value: Complex64) {
        let k = self.index(s, i, j);
        self.data[k] = value;
    }

    pub fn slice(&self, s: usize) -> &[Complex64] {
        let len = self.shape.slice_len();
        &self.data[s * len..(s + 1) * len]
    }

    pub fn slice_mut(&mut self, s: usize) -> &mut [Complex64] {
        let len = self.shape.slice_len();
        &mut self.data[s * len..(s + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self
            .data
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            None => Ok(()),
            Some(k) => {
                let plane = self.shape.slice_len();
                Err(Error::InvalidInput(format!(
                    "non-finite value at (s={}, i={}, j={})",
                    k / plane,
                    (k % plane) / self.shape.n,
                    k % self.shape.n
                )))
            }
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius norm over all elements.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_modulus(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Real parts as a flat vector.
    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    /// Real inner product `Re <self, other>`.
    pub fn dot_re(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }
}

macro_rules! grid_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(ComplexGrid);

        impl $name {
            pub fn new(slices: usize, n: usize, data: Vec<Complex64>) -> Result<Self> {
                ComplexGrid::new(slices, n, data).map($name)
            }

            pub fn zeros(shape: Shape) -> Self {
                $name(ComplexGrid::zeros(shape))
            }

            pub fn from_real(slices: usize, n: usize, real: &[f64]) -> Result<Self> {
                ComplexGrid::from_real(slices, n, real).map($name)
            }

            pub fn from_grid(grid: ComplexGrid) -> Self {
                $name(grid)
            }

            pub fn into_grid(self) -> ComplexGrid {
                self.0
            }

            pub(crate) fn from_parts(shape: Shape, data: Vec<Complex64>) -> Self {
                $name(ComplexGrid::from_parts(shape, data))
            }

            /// Elementwise `a * self + b * other`.
            pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
                self.0.check_same_shape(&other.0)?;
                let data = self
                    .as_slice()
                    .iter()
                    .zip(other.as_slice())
                    .map(|(x, y)| x * a + y * b)
                    .collect();
                Ok(Self::from_parts(self.shape(), data))
            }

            pub fn scaled(&self, a: f64) -> Self {
                Self::from_parts(self.shape(), self.as_slice().iter().map(|x| x * a).collect())
            }

            pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
                Self::from_parts(self.shape(), self.as_slice().iter().map(|&x| f(x)).collect())
            }
        }

        impl Deref for $name {
            type Target = ComplexGrid;
            fn deref(&self) -> &ComplexGrid {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut ComplexGrid {
                &mut self.0
            }
        }
    };
}

grid_newtype!(
    /// Image-domain volume `X`, one complex plane per slice.
    ImageVolume
);

grid_newtype!(
    /// Per-slice 2D k-space in centered layout.
    KSpaceVolume
);

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    planner()
        .lock()
        .expect("fft planner poisoned")
        .plan_fft(n, direction)
}

/// Circular shift of a length-`n` axis so that index 0 moves to `n / 2`.
fn fftshift_1d(v: &mut [Complex64]) {
    let n = v.len();
    v.rotate_right(n / 2);
}

fn ifftshift_1d(v: &mut [Complex64]) {
    let n = v.len();
    v.rotate_left(n / 2);
}

/// Unitary 2D transform of one `n x n` plane, in place.
fn transform_plane(
    plane: &mut [Complex64],
    n: usize,
    fft: &dyn Fft<f64>,
    scratch: &mut Vec<Complex64>,
    transposed: &mut Vec<Complex64>,
    forward: bool,
) {
    if !forward {
        // undo the centered layout on both axes
        for row in plane.chunks_exact_mut(n) {
            ifftshift_1d(row);
        }
        plane.rotate_left((n / 2) * n);
    }

    scratch.resize(fft.get_inplace_scratch_len(), Complex64::default());
    for row in plane.chunks_exact_mut(n) {
        fft.process_with_scratch(row, scratch);
    }
    transposed.resize(n * n, Complex64::default());
    transpose(plane, transposed, n);
    for col in transposed.chunks_exact_mut(n) {
        fft.process_with_scratch(col, scratch);
    }
    transpose(transposed, plane, n);

    let scale = 1.0 / n as f64;
    for z in plane.iter_mut() {
        *z *= scale;
    }

    if forward {
        for row in plane.chunks_exact_mut(n) {
            fftshift_1d(row);
        }
        plane.rotate_right((n / 2) * n);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}

fn transform_slices(src: &ComplexGrid, forward: bool) -> Vec<Complex64> {
    let n = src.n();
    let direction = if forward {
        FftDirection::Forward
    } else {
        FftDirection::Inverse
    };
    let fft = plan(n, direction);
    let mut data = src.as_slice().to_vec();
    data.par_chunks_mut(n * n).for_each_init(
        || (Vec::new(), Vec::new()),
        |(scratch, transposed), plane| {
            transform_plane(plane, n, fft.as_ref(), scratch, transposed, forward)
        },
    );
    data
}

pub(crate) fn fft2_unchecked(vol: &ImageVolume) -> KSpaceVolume {
    KSpaceVolume::from_parts(vol.shape(), transform_slices(vol, true))
}

pub(crate) fn ifft2_unchecked(ks: &KSpaceVolume) -> ImageVolume {
    ImageVolume::from_parts(ks.shape(), transform_slices(ks, false))
}

/// Unitary 2D DFT of every slice; output spectra are centered.
pub fn fft2_slices(vol: &ImageVolume) -> Result<KSpaceVolume> {
    vol.ensure_finite()?;
    Ok(fft2_unchecked(vol))
}

/// Inverse of [`fft2_slices`].
pub fn ifft2_slices(ks: &KSpaceVolume) -> Result<ImageVolume> {
    ks.ensure_finite()?;
    Ok(ifft2_unchecked(ks))
}

fn check_vec_finite(v: &[Complex64]) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite value in vector".into()))
    }
}

pub(crate) fn fft1_unchecked(v: &[Complex64], forward: bool) -> Vec<Complex64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let direction = if forward {
        FftDirection::Forward
    } else {
        FftDirection::Inverse
    };
    let mut out = v.to_vec();
    if !forward {
        ifftshift_1d(&mut out);
    }
    plan(n, direction).process(&mut out);
    let scale = 1.0 / (n as f64).sqrt();
    for z in out.iter_mut() {
        *z *= scale;
    }
    if forward {
        fftshift_1d(&mut out);
    }
    out
}

/// Unitary 1D DFT with the zero-frequency bin at index `len / 2`.
pub fn fft1(v: &[Complex64]) -> Result<Vec<Complex64>> {
    check_vec_finite(v)?;
    Ok(fft1_unchecked(v, true))
}

/// Inverse of [`fft1`].
pub fn ifft1(v: &[Complex64]) -> Result<Vec<Complex64>> {
    check_vec_finite(v)?;
    Ok(fft1_unchecked(v, false))
}

/// Scale so the largest modulus is 1. An all-zero volume is returned as is.
pub fn normalize(vol: &ImageVolume) -> ImageVolume {
    let max = vol.max_modulus();
    if max == 0.0 || !max.is_finite() {
        return vol.clone();
    }
    vol.scaled(1.0 / max)
}
