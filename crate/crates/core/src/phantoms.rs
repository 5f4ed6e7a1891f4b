//! Synthetic ground-truth volumes: thin tubes, nested ellipsoids and
//! Gaussian fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::volume::{normalize, ImageVolume, Shape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomKind {
    Tubes {
        #[serde(default = "default_tube_count")]
        count: usize,
        /// Gaussian cross-section standard deviation, in voxels.
        #[serde(default = "default_tube_radius")]
        radius: f64,
        #[serde(default = "default_step_correlation")]
        step_correlation: f64,
    },
    Ellipsoids {
        #[serde(default = "default_ellipsoid_count")]
        count: usize,
    },
    GaussianField {
        mean: f64,
        std: f64,
    },
}

fn default_tube_count() -> usize {
    4
}

fn default_tube_radius() -> f64 {
    0.6
}

fn default_step_correlation() -> f64 {
    0.9
}

fn default_ellipsoid_count() -> usize {
    5
}

impl PhantomKind {
    pub fn tubes() -> Self {
        PhantomKind::Tubes {
            count: default_tube_count(),
            radius: default_tube_radius(),
            step_correlation: default_step_correlation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub slices: usize,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<Shape> {
        if self.n < 8 {
            return Err(Error::Config(format!("phantom needs N >= 8, got {}", self.n)));
        }
        let shape = Shape::new(self.slices, self.n)?;
        match self.kind {
            PhantomKind::Tubes {
                radius,
                step_correlation,
                ..
            } => {
                if !(radius > 0.0) {
                    return Err(Error::Config(format!("tube radius must be positive, got {radius}")));
                }
                if !(0.0..1.0).contains(&step_correlation) {
                    return Err(Error::Config(format!(
                        "step correlation must lie in [0, 1), got {step_correlation}"
                    )));
                }
            }
            PhantomKind::Ellipsoids { .. } => {}
            PhantomKind::GaussianField { mean, std } => {
                if !mean.is_finite() || !(std >= 0.0) || !std.is_finite() {
                    return Err(Error::Config(format!("invalid field parameters mean={mean} std={std}")));
                }
            }
        }
        Ok(shape)
    }
}

pub fn generate(spec: &PhantomSpec) -> Result<ImageVolume> {
    spec.validate()?;
    match spec.kind {
        PhantomKind::Tubes { .. } => gen_tubes(spec),
        PhantomKind::Ellipsoids { .. } => gen_ellipsoids(spec),
        PhantomKind::GaussianField { .. } => gen_gaussian_field(spec),
    }
}

type P3 = [f64; 3];

fn catmull_rom(p0: P3, p1: P3, p2: P3, p3: P3, u: f64) -> P3 {
    let u2 = u * u;
    let u3 = u2 * u;
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = 0.5
            * (2.0 * p1[k]
                + (p2[k] - p0[k]) * u
                + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * u2
                + (3.0 * p1[k] - p0[k] - 3.0 * p2[k] + p3[k]) * u3);
    }
    out
}

fn unit(v: P3) -> P3 {
    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if r == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [v[0] / r, v[1] / r, v[2] / r]
    }
}

/// Correlated random walk in the unit cube, reflected at the faces.
fn walk(rng: &mut ChaCha8Rng, steps: usize, step_len: f64, corr: f64) -> Vec<P3> {
    let gauss = |rng: &mut ChaCha8Rng| -> P3 {
        [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ]
    };
    let mut pos: P3 = [rng.random(), 0.15 + 0.7 * rng.random::<f64>(), 0.15 + 0.7 * rng.random::<f64>()];
    let mut dir = unit(gauss(rng));
    let fresh = (1.0 - corr * corr).sqrt();
    let mut pts = vec![pos];
    for _ in 0..steps {
        let z = gauss(rng);
        dir = unit([
            corr * dir[0] + fresh * z[0],
            corr * dir[1] + fresh * z[1],
            corr * dir[2] + fresh * z[2],
        ]);
        for k in 0..3 {
            pos[k] += step_len * dir[k];
            if pos[k] < 0.0 {
                pos[k] = -pos[k];
                dir[k] = -dir[k];
            } else if pos[k] > 1.0 {
                pos[k] = 2.0 - pos[k];
                dir[k] = -dir[k];
            }
        }
        pts.push(pos);
    }
    pts
}

/// Smooth random tubes with a Gaussian cross-section, normalized to max 1.
pub fn gen_tubes(spec: &PhantomSpec) -> Result<ImageVolume> {
    let shape = spec.validate()?;
    let PhantomKind::Tubes {
        count,
        radius,
        step_correlation,
    } = spec.kind
    else {
        return Err(Error::Config("spec is not a tube phantom".into()));
    };
    let (s_dim, n) = (shape.slices, shape.n);
    let mut out = vec![0.0f64; shape.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = [(s_dim - 1) as f64, (n - 1) as f64, (n - 1) as f64];
    let reach = (3.0 * radius).ceil() as isize;
    for _ in 0..count {
        let ctrl = walk(&mut rng, 10, 0.12, step_correlation);
        let vox: Vec<P3> = ctrl
            .iter()
            .map(|p| [p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]])
            .collect();
        for seg in 0..vox.len() - 1 {
            let p0 = vox[seg.saturating_sub(1)];
            let p1 = vox[seg];
            let p2 = vox[seg + 1];
            let p3 = vox[(seg + 2).min(vox.len() - 1)];
            let span = ((p2[0] - p1[0]).powi(2) + (p2[1] - p1[1]).powi(2) + (p2[2] - p1[2]).powi(2)).sqrt();
            let samples = ((span / (0.25 * radius.min(1.0))).ceil() as usize).max(2);
            for k in 0..samples {
                let c = catmull_rom(p0, p1, p2, p3, k as f64 / samples as f64);
                let centre = [c[0].round() as isize, c[1].round() as isize, c[2].round() as isize];
                for ds in -reach..=reach {
                    let s = centre[0] + ds;
                    if s < 0 || s >= s_dim as isize {
                        continue;
                    }
                    for di in -reach..=reach {
                        let i = centre[1] + di;
                        if i < 0 || i >= n as isize {
                            continue;
                        }
                        for dj in -reach..=reach {
                            let j = centre[2] + dj;
                            if j < 0 || j >= n as isize {
                                continue;
                            }
                            let d2 = (s as f64 - c[0]).powi(2) + (i as f64 - c[1]).powi(2) + (j as f64 - c[2]).powi(2);
                            let v = (-d2 / (2.0 * radius * radius)).exp();
                            let idx = (s as usize * n + i as usize) * n + j as usize;
                            if v > out[idx] {
                                out[idx] = v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(normalize(&ImageVolume::from_real(s_dim, n, &out)?))
}

/// Sum of nested ellipsoids with distinct intensities, clipped to `[0, 1]`.
/// The first is a centred sphere in normalized coordinates.
pub fn gen_ellipsoids(spec: &PhantomSpec) -> Result<ImageVolume> {
    let shape = spec.validate()?;
    let PhantomKind::Ellipsoids { count } = spec.kind else {
        return Err(Error::Config("spec is not an ellipsoid phantom".into()));
    };
    let (s_dim, n) = (shape.slices, shape.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // centre in [-1, 1]^3, semi-axes, intensity
    let mut shapes: Vec<(P3, P3, f64)> = Vec::with_capacity(count);
    for k in 0..count {
        if k == 0 {
            shapes.push(([0.0; 3], [0.8; 3], 0.6));
        } else {
            let axes = [
                0.15 + 0.35 * rng.random::<f64>(),
                0.1 + 0.25 * rng.random::<f64>(),
                0.1 + 0.25 * rng.random::<f64>(),
            ];
            let centre = [
                (rng.random::<f64>() - 0.5) * 0.6,
                (rng.random::<f64>() - 0.5) * 0.8,
                (rng.random::<f64>() - 0.5) * 0.8,
            ];
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            shapes.push((centre, axes, sign * (0.1 + 0.05 * k as f64)));
        }
    }
    // voxel centres in [-1, 1], so thin volumes still cut through the middle
    let coord = |idx: usize, len: usize| (2 * idx + 1) as f64 / len as f64 - 1.0;
    let mut out = vec![0.0; shape.len()];
    for s in 0..s_dim {
        for i in 0..n {
            for j in 0..n {
                let p = [coord(s, s_dim), coord(i, n), coord(j, n)];
                let mut v = 0.0;
                for (c, a, w) in &shapes {
                    let r: f64 = (0..3).map(|k| ((p[k] - c[k]) / a[k]).powi(2)).sum();
                    if r <= 1.0 {
                        v += w;
                    }
                }
                out[(s * n + i) * n + j] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageVolume::from_real(s_dim, n, &out)
}

/// Independent draws from `N(mean, std^2)`.
pub fn gen_gaussian_field(spec: &PhantomSpec) -> Result<ImageVolume> {
    let shape = spec.validate()?;
    let PhantomKind::GaussianField { mean, std } = spec.kind else {
        return Err(Error::Config("spec is not a Gaussian field".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data: Vec<f64> = (0..shape.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean + std * z
        })
        .collect();
    ImageVolume::from_real(shape.slices, shape.n, &data)
}
