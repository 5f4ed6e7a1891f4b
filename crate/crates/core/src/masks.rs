//! Column-wise (phase-encode) undersampling masks in centered layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Uniform,
    Gaussian,
    Full,
    Custom,
}

/// Generation parameters, written next to the mask pattern on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskMeta {
    pub kind: MaskKind,
    pub n: usize,
    pub accel: f64,
    pub center_frac: f64,
    pub seed: u64,
    /// Standard deviation of the column density, Gaussian masks only.
    pub sd: Option<f64>,
}

/// Binary `n x n` sampling pattern, shared by every slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    n: usize,
    pattern: Vec<u8>,
    meta: MaskMeta,
}

/// Mask restricted to the zero-frequency column (`m_ky`) and row (`m_kx`).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSlice {
    pub m_ky: Vec<f64>,
    pub m_kx: Vec<f64>,
}

impl Mask {
    pub fn from_pattern(n: usize, pattern: Vec<u8>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("mask size must be >= 2, got {n}")));
        }
        if pattern.len() != n * n {
            return Err(Error::shape(format!("{} entries", n * n), pattern.len()));
        }
        if let Some(v) = pattern.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("mask entries must be 0 or 1, found {v}")));
        }
        let meta = MaskMeta {
            kind: MaskKind::Custom,
            n,
            accel: 1.0,
            center_frac: 0.0,
            seed: 0,
            sd: None,
        };
        let mut mask = Mask { n, pattern, meta };
        mask.meta.accel = n as f64 * n as f64 / mask.sampled().max(1) as f64;
        Ok(mask)
    }

    pub(crate) fn with_meta(n: usize, pattern: Vec<u8>, meta: MaskMeta) -> Result<Self> {
        let mut m = Self::from_pattern(n, pattern)?;
        m.meta = meta;
        Ok(m)
    }

    /// All-ones mask.
    pub fn full(n: usize) -> Result<Self> {
        let mut m = Self::from_pattern(n, vec![1; n * n])?;
        m.meta = MaskMeta {
            kind: MaskKind::Full,
            n,
            accel: 1.0,
            center_frac: 1.0,
            seed: 0,
            sd: None,
        };
        Ok(m)
    }

    /// Mask that keeps exactly the listed columns.
    pub fn from_columns(n: usize, columns: &[bool]) -> Result<Self> {
        if columns.len() != n {
            return Err(Error::shape(format!("{n} columns"), columns.len()));
        }
        let pattern = (0..n * n).map(|k| u8::from(columns[k % n])).collect();
        Self::from_pattern(n, pattern)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    pub fn meta(&self) -> &MaskMeta {
        &self.meta
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.pattern[i * self.n + j]
    }

    /// Number of sampled k-space positions.
    pub fn sampled(&self) -> usize {
        self.pattern.iter().map(|&v| v as usize).sum()
    }

    /// Columns with at least one sampled entry.
    pub fn sampled_columns(&self) -> Vec<bool> {
        (0..self.n)
            .map(|j| (0..self.n).any(|i| self.get(i, j) == 1))
            .collect()
    }

    pub fn max_value(&self) -> u8 {
        self.pattern.iter().copied().max().unwrap_or(0)
    }
}

fn validate(n: usize, accel: f64, center_frac: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("mask size must be >= 2, got {n}")));
    }
    if !(accel >= 1.0) || !accel.is_finite() {
        return Err(Error::Config(format!("acceleration must be >= 1, got {accel}")));
    }
    if !(0.0..=1.0).contains(&center_frac) {
        return Err(Error::Config(format!(
            "center fraction must lie in [0, 1], got {center_frac}"
        )));
    }
    Ok(())
}

/// Fully sampled band of `ceil(center_frac * n)` columns around the DC column.
fn center_band(n: usize, center_frac: f64) -> std::ops::Range<usize> {
    let width = ((center_frac * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let width = width.min(n);
    let start = (n / 2).saturating_sub(width / 2).min(n - width);
    start..start + width
}

/// Shared column selection: center band plus exactly enough weighted draws
/// (without replacement) to reach `round(n / accel)` columns.
fn column_mask(
    kind: MaskKind,
    n: usize,
    accel: f64,
    center_frac: f64,
    seed: u64,
    sd: Option<f64>,
    weight: impl Fn(usize) -> f64,
) -> Result<Mask> {
    validate(n, accel, center_frac)?;
    let meta = MaskMeta {
        kind,
        n,
        accel,
        center_frac,
        seed,
        sd,
    };
    if center_frac >= 1.0 {
        if accel > 1.0 {
            log::warn!(
                "center fraction 1 keeps every column; acceleration {accel} is ignored"
            );
        }
        return Mask::with_meta(n, vec![1; n * n], meta);
    }
    let budget = n as f64 / accel;
    if center_frac * n as f64 > budget + 1e-9 {
        return Err(Error::Config(format!(
            "center band of {:.2} columns exceeds the sampling budget of {:.2} columns",
            center_frac * n as f64,
            budget
        )));
    }
    let band = center_band(n, center_frac);
    let target = (budget.round() as usize).clamp(band.len(), n);
    let mut keep = vec![false; n];
    for j in band.clone() {
        keep[j] = true;
    }

    let remaining = target - band.len();
    if remaining > 0 {
        // Efraimidis-Spirakis: keep the `remaining` largest keys u^(1/w).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keys: Vec<(f64, usize)> = (0..n)
            .filter(|j| !band.contains(j))
            .map(|j| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (u.ln() / weight(j), j)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in keys.iter().take(remaining) {
            keep[j] = true;
        }
    }
    let pattern = (0..n * n).map(|k| u8::from(keep[k % n])).collect();
    Mask::with_meta(n, pattern, meta)
}

/// Center band plus uniformly random columns, about `n / accel` in total.
pub fn gen_uniform_mask(n: usize, accel: f64, center_frac: f64, seed: u64) -> Result<Mask> {
    column_mask(MaskKind::Uniform, n, accel, center_frac, seed, None, |_| 1.0)
}

/// Center band plus columns drawn with a Gaussian density around DC
/// (standard deviation `n / 6`).
pub fn gen_gaussian_mask(n: usize, accel: f64, center_frac: f64, seed: u64) -> Result<Mask> {
    let sd = n as f64 / 6.0;
    let dc = (n / 2) as f64;
    column_mask(
        MaskKind::Gaussian,
        n,
        accel,
        center_frac,
        seed,
        Some(sd),
        move |j| {
            let d = j as f64 - dc;
            (-0.5 * d * d / (sd * sd)).exp().max(1e-300)
        },
    )
}

/// Restrict the mask to the DC column and DC row.
pub fn slice_mask(mask: &Mask) -> MaskSlice {
    let n = mask.n();
    let dc = n / 2;
    MaskSlice {
        m_ky: (0..n).map(|i| mask.get(i, dc) as f64).collect(),
        m_kx: (0..n).map(|j| mask.get(dc, j) as f64).collect(),
    }
}
