//! On-disk formats: raw little-endian payloads with JSON sidecars, mask
//! files, measurements, experiment configs and run manifests.
//!
//! Volumes are `float32` on disk (real or interleaved complex, row-major
//! `(s, i, j)`) and `float64` in memory.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::forward::UndersampledMeasurement;
use crate::masks::{Mask, MaskMeta};
use crate::phantoms::PhantomSpec;
use crate::r3dm::R3dmConfig;
use crate::volume::{ComplexGrid, ImageVolume, KSpaceVolume, Shape};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "c64f32")]
    C64F32,
}

/// Voxel size of the reference knee protocol, in mm.
pub const DEFAULT_VOXEL_SIZE: [f64; 3] = [3.0, 0.5, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub dtype: Dtype,
    pub voxel_size: [f64; 3],
    #[serde(default)]
    pub description: String,
}

/// `foo.raw` -> `foo.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Serializes grid values; `F32` keeps only real parts.
pub fn encode_payload(grid: &ComplexGrid, dtype: Dtype) -> Vec<u8> {
    let per = if dtype == Dtype::F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(grid.as_slice().len() * per);
    for z in grid.as_slice() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        if dtype == Dtype::C64F32 {
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_payload(bytes: &[u8], shape: Shape, dtype: Dtype) -> Result<ComplexGrid> {
    let per = if dtype == Dtype::F32 { 4 } else { 8 };
    if bytes.len() != shape.len() * per {
        return Err(Error::shape(
            format!("{} bytes for {shape} {dtype:?}", shape.len() * per),
            bytes.len(),
        ));
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let data: Vec<Complex64> = bytes
        .chunks_exact(per)
        .map(|c| {
            if dtype == Dtype::F32 {
                Complex64::new(f(c), 0.0)
            } else {
                Complex64::new(f(&c[..4]), f(&c[4..]))
            }
        })
        .collect();
    ComplexGrid::new(shape.slices, shape.n, data)
}

fn write_grid(path: &Path, grid: &ComplexGrid, dtype: Dtype, description: &str) -> Result<Vec<PathBuf>> {
    let sh = grid.shape();
    write_bytes(path, &encode_payload(grid, dtype))?;
    let side = VolumeSidecar {
        dims: [sh.slices, sh.n, sh.n],
        dtype,
        voxel_size: DEFAULT_VOXEL_SIZE,
        description: description.to_string(),
    };
    let side_path = sidecar_path(path);
    write_json(&side_path, &side)?;
    Ok(vec![path.to_path_buf(), side_path])
}

fn read_grid(path: &Path) -> Result<(ComplexGrid, VolumeSidecar)> {
    let side: VolumeSidecar = read_json(&sidecar_path(path))?;
    if side.dims[1] != side.dims[2] {
        return Err(Error::InvalidInput(format!(
            "{}: slices must be square, got {:?}",
            path.display(),
            side.dims
        )));
    }
    let shape = Shape::new(side.dims[0], side.dims[1])?;
    let grid = decode_payload(&read_bytes(path)?, shape, side.dtype)?;
    Ok((grid, side))
}

/// Writes `path` and its sidecar; returns both paths.
pub fn write_volume(path: &Path, vol: &ImageVolume, dtype: Dtype, description: &str) -> Result<Vec<PathBuf>> {
    write_grid(path, vol, dtype, description)
}

pub fn read_volume(path: &Path) -> Result<(ImageVolume, VolumeSidecar)> {
    let (g, s) = read_grid(path)?;
    Ok((ImageVolume::from_grid(g), s))
}

/// Pattern bytes (0/1, row-major) plus the generator parameters as sidecar.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<Vec<PathBuf>> {
    write_bytes(path, mask.pattern())?;
    let side_path = sidecar_path(path);
    write_json(&side_path, mask.meta())?;
    Ok(vec![path.to_path_buf(), side_path])
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let meta: MaskMeta = read_json(&sidecar_path(path))?;
    let pattern = read_bytes(path)?;
    Mask::with_meta(meta.n, pattern, meta)
}

/// Measurement descriptor; payload paths are relative to the descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub kspace: String,
    pub mask: String,
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Writes `<stem>.json` plus `<stem>.kspace.raw` and `<stem>.mask.raw`
/// (with sidecars) next to it.
pub fn write_measurement(path: &Path, meas: &UndersampledMeasurement, seed: u64) -> Result<Vec<PathBuf>> {
    let ks = sibling(path, ".kspace.raw");
    let mk = sibling(path, ".mask.raw");
    let mut written = write_grid(&ks, meas.kspace(), Dtype::C64F32, "masked k-space, centered")?;
    written.extend(write_mask(&mk, meas.mask())?);
    let desc = MeasurementFile {
        kspace: ks.file_name().unwrap().to_string_lossy().into_owned(),
        mask: mk.file_name().unwrap().to_string_lossy().into_owned(),
        noise_sigma: meas.noise_sigma(),
        seed,
    };
    let desc_path = path.with_extension("json");
    write_json(&desc_path, &desc)?;
    written.push(desc_path);
    Ok(written)
}

/// Reads a measurement descriptor; returns the measurement and the payload
/// files it referenced.
pub fn read_measurement(path: &Path) -> Result<(UndersampledMeasurement, Vec<PathBuf>)> {
    let desc_path = path.with_extension("json");
    let desc: MeasurementFile = read_json(&desc_path)?;
    let dir = desc_path.parent().unwrap_or(Path::new(""));
    let ks_path = dir.join(&desc.kspace);
    let mk_path = dir.join(&desc.mask);
    let (grid, _) = read_grid(&ks_path)?;
    let mask = read_mask(&mk_path)?;
    let meas = UndersampledMeasurement::from_kspace(KSpaceVolume::from_grid(grid), mask, desc.noise_sigma)?;
    Ok((meas, vec![desc_path, ks_path, mk_path]))
}

/// Mask generator parameters inside an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub kind: crate::masks::MaskKind,
    #[serde(default = "one")]
    pub accel: f64,
    #[serde(default)]
    pub center_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl MaskSpec {
    pub fn build(&self, n: usize) -> Result<Mask> {
        use crate::masks::{gen_gaussian_mask, gen_uniform_mask, MaskKind};
        match self.kind {
            MaskKind::Uniform => gen_uniform_mask(n, self.accel, self.center_frac, self.seed),
            MaskKind::Gaussian => gen_gaussian_mask(n, self.accel, self.center_frac, self.seed),
            MaskKind::Full => Mask::full(n),
            MaskKind::Custom => Err(Error::Config("custom masks must be loaded from a file".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZeroFilled,
    Pgd,
    R3dm,
}

/// Output switches of `run`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitFlags {
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub png: bool,
    #[serde(default = "yes")]
    pub metrics: bool,
}

fn yes() -> bool {
    true
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            trace: false,
            png: false,
            metrics: true,
        }
    }
}

/// Full description of one experiment for `r3dm run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    /// Ground-truth volume file, used when no phantom is given.
    #[serde(default)]
    pub input: Option<PathBuf>,
    pub mask: MaskSpec,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
    pub method: Method,
    #[serde(default)]
    pub r3dm: R3dmConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitFlags,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.phantom, &self.input) {
            (Some(_), Some(_)) => Err(Error::Config("give either `phantom` or `input`, not both".into())),
            (None, None) => Err(Error::Config("one of `phantom` or `input` is required".into())),
            _ => Ok(()),
        }?;
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        self.r3dm.recon.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of one CLI invocation. `wall_time_s` is the only field that varies
/// between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Result<Self> {
        let canonical = serde_json::to_vec(&config)?;
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config_sha256: sha256_hex(&canonical),
            config,
            seed,
            threads: rayon::current_num_threads(),
            wall_time_s: 0.0,
        })
    }

    pub fn add_inputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.inputs.push(FileDigest::of(p)?);
        }
        Ok(())
    }

    pub fn add_outputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            self.outputs.push(FileDigest::of(p)?);
        }
        Ok(())
    }

    /// `<primary>.manifest.json` next to the primary output.
    pub fn path_for(primary: &Path) -> PathBuf {
        let name = primary.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        primary.with_file_name(format!("{name}.manifest.json"))
    }

    pub fn write(&self, primary: &Path) -> Result<PathBuf> {
        let p = Self::path_for(primary);
        write_json(&p, self)?;
        Ok(p)
    }
}
