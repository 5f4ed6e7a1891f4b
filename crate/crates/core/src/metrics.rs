//! PSNR and Gaussian-window SSIM, volumetric and as per-axis slice means.
//!
//! Volumes are indexed `(s, i, j)`. Axial planes fix `s` (`N x N`), coronal
//! planes fix `i` and sagittal planes fix `j` (both `S x N`).

use serde::{Deserialize, Serialize};

use crate::volume::{normalize, ImageVolume};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Window used along an axis of length `dim`: the configured size, or the
    /// largest odd size that fits.
    pub fn window_for(&self, dim: usize) -> usize {
        if dim >= self.window {
            self.window
        } else if dim % 2 == 1 {
            dim
        } else {
            dim - 1
        }
    }
}

/// Normalized 1D Gaussian weights of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|k| (-((k as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Correlates `data` with one kernel per axis, keeping only fully covered
/// positions.
fn filter_valid(data: &[f64], dims: &[usize], kernels: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let mut cur = data.to_vec();
    let mut cur_dims = dims.to_vec();
    for (axis, k) in kernels.iter().enumerate() {
        let len = cur_dims[axis];
        let out_len = len + 1 - k.len();
        let inner: usize = cur_dims[axis + 1..].iter().product();
        let outer: usize = cur_dims[..axis].iter().product();
        let mut next = vec![0.0; outer * out_len * inner];
        for o in 0..outer {
            for p in 0..out_len {
                let dst = &mut next[(o * out_len + p) * inner..(o * out_len + p + 1) * inner];
                for (q, w) in k.iter().enumerate() {
                    let src = &cur[(o * len + p + q) * inner..(o * len + p + q + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        cur = next;
        cur_dims[axis] = out_len;
    }
    (cur, cur_dims)
}

fn ssim_nd(a: &[f64], b: &[f64], dims: &[usize], windows: &[usize], p: &SsimParams) -> f64 {
    let kernels: Vec<Vec<f64>> = windows.iter().map(|&w| gaussian_window(w, p.sigma)).collect();
    let f = |v: &[f64]| filter_valid(v, dims, &kernels).0;
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b, e_aa, e_bb, e_ab) = (f(a), f(b), f(&aa), f(&bb), f(&ab));
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let mut total = 0.0;
    for k in 0..mu_a.len() {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let va = e_aa[k] - ma * ma;
        let vb = e_bb[k] - mb * mb;
        let cov = e_ab[k] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

fn check_len(a: &[f64], b: &[f64], expected: usize) -> Result<()> {
    if a.len() != expected || b.len() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected} values"),
            found: format!("{} and {}", a.len(), b.len()),
        });
    }
    Ok(())
}

/// `10 log10(range^2 / MSE)`; `+inf` for identical inputs.
pub fn psnr(reference: &[f64], test: &[f64], data_range: f64) -> Result<f64> {
    check_len(reference, test, reference.len())?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidInput(format!("data range must be positive, got {data_range}")));
    }
    if reference.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    let mse = reference
        .iter()
        .zip(test)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Mean local SSIM of two `rows x cols` planes with the configured window.
pub fn ssim2d(reference: &[f64], test: &[f64], rows: usize, cols: usize, params: &SsimParams) -> Result<f64> {
    check_len(reference, test, rows * cols)?;
    if rows < params.window || cols < params.window {
        return Err(Error::InvalidInput(format!(
            "{rows}x{cols} slice is smaller than the {} window",
            params.window
        )));
    }
    Ok(ssim_nd(reference, test, &[rows, cols], &[params.window; 2], params))
}

/// SSIM of a plane, shrinking the window along short axes.
pub fn ssim2d_adaptive(reference: &[f64], test: &[f64], rows: usize, cols: usize, params: &SsimParams) -> Result<f64> {
    check_len(reference, test, rows * cols)?;
    let w = [params.window_for(rows), params.window_for(cols)];
    Ok(ssim_nd(reference, test, &[rows, cols], &w, params))
}

/// SSIM with a separable 3D Gaussian window over `dims = [S, N, N]`.
pub fn ssim3d(reference: &[f64], test: &[f64], dims: [usize; 3], params: &SsimParams) -> Result<f64> {
    check_len(reference, test, dims.iter().product())?;
    let w: Vec<usize> = dims.iter().map(|&d| params.window_for(d)).collect();
    Ok(ssim_nd(reference, test, &dims, &w, params))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceAxis {
    Axial,
    Sagittal,
    Coronal,
}

impl SliceAxis {
    pub const ALL: [SliceAxis; 3] = [SliceAxis::Axial, SliceAxis::Sagittal, SliceAxis::Coronal];
}

/// Planes of a real `[S, N, N]` volume along `axis`, with their dimensions.
pub fn planes(data: &[f64], dims: [usize; 3], axis: SliceAxis) -> (Vec<Vec<f64>>, usize, usize) {
    let [s_dim, n, _] = dims;
    let at = |s: usize, i: usize, j: usize| data[(s * n + i) * n + j];
    match axis {
        SliceAxis::Axial => (
            (0..s_dim).map(|s| data[s * n * n..(s + 1) * n * n].to_vec()).collect(),
            n,
            n,
        ),
        SliceAxis::Coronal => (
            (0..n)
                .map(|i| (0..s_dim).flat_map(|s| (0..n).map(move |j| (s, j))).map(|(s, j)| at(s, i, j)).collect())
                .collect(),
            s_dim,
            n,
        ),
        SliceAxis::Sagittal => (
            (0..n)
                .map(|j| (0..s_dim).flat_map(|s| (0..n).map(move |i| (s, i))).map(|(s, i)| at(s, i, j)).collect())
                .collect(),
            s_dim,
            n,
        ),
    }
}

mod inf_sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unexpected value {s:?}"))),
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            #[derive(serde::Serialize)]
            struct W(#[serde(with = "super")] f64);
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&W(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            #[derive(Deserialize)]
            struct W(#[serde(with = "super")] f64);
            Ok(Vec::<W>::deserialize(d)?.into_iter().map(|w| w.0).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisMetrics {
    pub axis: SliceAxis,
    #[serde(with = "inf_sentinel")]
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    #[serde(with = "inf_sentinel::vec")]
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub window: [usize; 2],
}

/// PSNR in dB, `"inf"` in JSON for identical inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(with = "inf_sentinel")]
    pub psnr_3d: f64,
    pub ssim_3d: f64,
    pub ssim_window_3d: [usize; 3],
    pub axes: Vec<AxisMetrics>,
    pub params: SsimParams,
}

impl MetricReport {
    pub fn axis(&self, axis: SliceAxis) -> &AxisMetrics {
        self.axes.iter().find(|a| a.axis == axis).expect("all axes are reported")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-row table with 3D, axial, sagittal and coronal columns.
    pub fn to_markdown(&self, label: &str) -> String {
        let fmt_psnr = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.2}") };
        let mut out = format!("| {label} | 3D | Axial | Sagittal | Coronal |\n|---|---|---|---|---|\n");
        out += &format!("| SSIM | {:.4}", self.ssim_3d);
        for a in SliceAxis::ALL {
            out += &format!(" | {:.4}", self.axis(a).ssim_mean);
        }
        out += " |\n";
        out += &format!("| PSNR (dB) | {}", fmt_psnr(self.psnr_3d));
        for a in SliceAxis::ALL {
            out += &format!(" | {}", fmt_psnr(self.axis(a).psnr_mean));
        }
        out += " |\n";
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Metrics of two real `[S, N, N]` volumes taken as given.
pub fn report_real(reference: &[f64], test: &[f64], dims: [usize; 3], params: &SsimParams) -> Result<MetricReport> {
    check_len(reference, test, dims.iter().product())?;
    let psnr_3d = psnr(reference, test, params.data_range)?;
    let ssim_3d = ssim3d(reference, test, dims, params)?;
    let mut axes = Vec::new();
    for axis in SliceAxis::ALL {
        let (ra, rows, cols) = planes(reference, dims, axis);
        let (ta, _, _) = planes(test, dims, axis);
        let mut p = Vec::with_capacity(ra.len());
        let mut s = Vec::with_capacity(ra.len());
        for (r, t) in ra.iter().zip(&ta) {
            p.push(psnr(r, t, params.data_range)?);
            s.push(ssim2d_adaptive(r, t, rows, cols, params)?);
        }
        axes.push(AxisMetrics {
            axis,
            psnr_mean: mean(&p),
            ssim_mean: mean(&s),
            psnr: p,
            ssim: s,
            window: [params.window_for(rows), params.window_for(cols)],
        });
    }
    Ok(MetricReport {
        psnr_3d,
        ssim_3d,
        ssim_window_3d: dims.map(|d| params.window_for(d)),
        axes,
        params: *params,
    })
}

/// Metrics on the moduli of two volumes, which are expected to be normalized
/// to `[0, 1]` already.
pub fn report(reference: &ImageVolume, test: &ImageVolume) -> Result<MetricReport> {
    reference.check_same_shape(test)?;
    let sh = reference.shape();
    report_real(
        &reference.modulus(),
        &test.modulus(),
        [sh.slices, sh.n, sh.n],
        &SsimParams::default(),
    )
}

/// Normalizes both volumes by their own maximum modulus, then [`report`].
pub fn evaluate(ground_truth: &ImageVolume, recon: &ImageVolume) -> Result<MetricReport> {
    report(&normalize(ground_truth), &normalize(recon))
}
