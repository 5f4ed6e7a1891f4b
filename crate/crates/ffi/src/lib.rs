//! C ABI over the `r3dm` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_generate`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns an [`R3dmStatus`]; on failure the message is available from
//! [`r3dm_last_error`] on the same thread. Panics are caught and reported as
//! [`R3dmStatus::Panic`].
//!
//! Volumes are `(slices, n, n)` in row-major order. Complex buffers are
//! interleaved `re, im` pairs of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use r3dm::forward::{acquire, zero_filled, UndersampledMeasurement};
use r3dm::io::{read_volume, write_volume, Dtype};
use r3dm::masks::{gen_gaussian_mask, gen_uniform_mask, Mask};
use r3dm::metrics::evaluate;
use r3dm::optimizer::StepMode;
use r3dm::phantoms::{generate, PhantomKind, PhantomSpec};
use r3dm::r3dm::{reconstruct, reconstruct_pgd_only, ModelSpec, R3dmConfig, ScheduleSpec};
use r3dm::{Complex64, Error, ImageVolume};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R3dmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid argument, shape or configuration.
    Config = 2,
    Io = 3,
    Numerical = 4,
    ExternalModel = 5,
    Panic = 6,
}

/// Opaque real or complex image volume.
pub struct R3dmVolume(ImageVolume);
/// Opaque undersampling mask.
pub struct R3dmMask(Mask);
/// Opaque undersampled measurement (masked k-space plus mask).
pub struct R3dmMeasurement(UndersampledMeasurement);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R3dmPhantomKind {
    Tubes = 0,
    Ellipsoids = 1,
    GaussianField = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R3dmMaskKind {
    Uniform = 0,
    Gaussian = 1,
    Full = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R3dmMethod {
    ZeroFilled = 0,
    Pgd = 1,
    R3dm = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R3dmStepMode {
    PowerIteration = 0,
    PaperFormula = 1,
    Fixed = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum R3dmModelKind {
    Zero = 0,
    Gaussian = 1,
    TweedieDct = 2,
}

/// Reconstruction parameters; start from [`r3dm_recon_params_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R3dmReconParams {
    /// Diffusion steps T.
    pub steps: usize,
    /// Proximal-gradient iterations per diffusion step.
    pub inner_iters: usize,
    pub alpha: f64,
    pub rho: f64,
    /// Nonzero enables the smoothness term.
    pub tv_on: i32,
    pub step_mode: R3dmStepMode,
    /// Step size for `Fixed` mode.
    pub lambda: f64,
    pub seed: u64,
    pub model: R3dmModelKind,
    /// Threshold multiplier of the DCT prior.
    pub dct_c: f64,
    pub gaussian_mean: f64,
    pub gaussian_var: f64,
}

/// Scalar image metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct R3dmMetrics {
    /// Infinite for identical volumes.
    pub psnr: f64,
    pub ssim: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> R3dmStatus {
    match e {
        Error::Io { .. } => R3dmStatus::Io,
        Error::Numerical(_) => R3dmStatus::Numerical,
        Error::ExternalModel(_) => R3dmStatus::ExternalModel,
        _ => R3dmStatus::Config,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> R3dmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            R3dmStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            R3dmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            R3dmStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn buffer<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn buffer_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

fn check_len(len: usize, want: usize) -> Result<(), Failure> {
    if len != want {
        return Err(Error::InvalidInput(format!("buffer holds {len} values, expected {want}")).into());
    }
    Ok(())
}

fn volume_len(slices: usize, n: usize) -> Result<usize, Failure> {
    Ok(r3dm::Shape::new(slices, n)?.len())
}

fn emit<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn r3dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn r3dm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `data` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_from_real(
    slices: usize,
    n: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut R3dmVolume,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        check_len(len, volume_len(slices, n)?)?;
        let vals = buffer(data, len, "data")?;
        emit(out, R3dmVolume(ImageVolume::from_real(slices, n, vals)?));
        Ok(())
    })
}

/// `data` holds `2 * slices * n * n` interleaved doubles.
///
/// # Safety
/// `data` must point to `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_from_complex(
    slices: usize,
    n: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut R3dmVolume,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        check_len(len, 2 * volume_len(slices, n)?)?;
        let vals = buffer(data, len, "data")?;
        let z = vals.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        emit(out, R3dmVolume(ImageVolume::new(slices, n, z)?));
        Ok(())
    })
}

/// # Safety
/// `vol` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_free(vol: *mut R3dmVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// # Safety
/// `vol` must be a live handle; `slices` and `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_shape(vol: *const R3dmVolume, slices: *mut usize, n: *mut usize) -> R3dmStatus {
    guard(|| {
        let v = &href(vol, "vol")?.0;
        *out_ptr(slices, "slices")? = v.slices();
        *out_ptr(n, "n")? = v.n();
        Ok(())
    })
}

/// Copies interleaved complex values; `len` must be `2 * slices * n * n`.
///
/// # Safety
/// `vol` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_copy_complex(vol: *const R3dmVolume, out: *mut f64, len: usize) -> R3dmStatus {
    guard(|| {
        let v = &href(vol, "vol")?.0;
        check_len(len, 2 * v.shape().len())?;
        let dst = buffer_mut(out, len, "out")?;
        for (d, z) in dst.chunks_exact_mut(2).zip(v.as_slice()) {
            d[0] = z.re;
            d[1] = z.im;
        }
        Ok(())
    })
}

/// Copies voxel magnitudes; `len` must be `slices * n * n`.
///
/// # Safety
/// `vol` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_copy_magnitude(vol: *const R3dmVolume, out: *mut f64, len: usize) -> R3dmStatus {
    guard(|| {
        let v = &href(vol, "vol")?.0;
        check_len(len, v.shape().len())?;
        buffer_mut(out, len, "out")?.copy_from_slice(&v.modulus());
        Ok(())
    })
}

/// Reads a `.raw` volume with its `.json` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_read(path: *const c_char, out: *mut *mut R3dmVolume) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (v, _) = read_volume(path_arg(path)?)?;
        emit(out, R3dmVolume(v));
        Ok(())
    })
}

/// Writes a complex64 `.raw` volume and sidecar.
///
/// # Safety
/// `vol` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn r3dm_volume_write(vol: *const R3dmVolume, path: *const c_char) -> R3dmStatus {
    guard(|| {
        let v = &href(vol, "vol")?.0;
        write_volume(path_arg(path)?, v, Dtype::C64F32, "written through the C interface")?;
        Ok(())
    })
}

/// Synthetic phantom with default shape parameters for the given kind.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_phantom_generate(
    kind: R3dmPhantomKind,
    slices: usize,
    n: usize,
    seed: u64,
    out: *mut *mut R3dmVolume,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let kind = match kind {
            R3dmPhantomKind::Tubes => PhantomKind::tubes(),
            R3dmPhantomKind::Ellipsoids => PhantomKind::Ellipsoids { count: 5 },
            R3dmPhantomKind::GaussianField => PhantomKind::GaussianField { mean: 0.5, std: 0.1 },
        };
        let v = generate(&PhantomSpec { kind, slices, n, seed })?;
        emit(out, R3dmVolume(v));
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_mask_generate(
    kind: R3dmMaskKind,
    n: usize,
    accel: f64,
    center_frac: f64,
    seed: u64,
    out: *mut *mut R3dmMask,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = match kind {
            R3dmMaskKind::Uniform => gen_uniform_mask(n, accel, center_frac, seed)?,
            R3dmMaskKind::Gaussian => gen_gaussian_mask(n, accel, center_frac, seed)?,
            R3dmMaskKind::Full => Mask::full(n)?,
        };
        emit(out, R3dmMask(m));
        Ok(())
    })
}

/// Mask from an `n * n` row-major 0/1 pattern.
///
/// # Safety
/// `pattern` must hold `len` bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_mask_from_pattern(
    n: usize,
    pattern: *const u8,
    len: usize,
    out: *mut *mut R3dmMask,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        check_len(len, n * n)?;
        let p = buffer(pattern, len, "pattern")?;
        emit(out, R3dmMask(Mask::from_pattern(n, p.to_vec())?));
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle; `n` and `sampled` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_mask_info(mask: *const R3dmMask, n: *mut usize, sampled: *mut usize) -> R3dmStatus {
    guard(|| {
        let m = &href(mask, "mask")?.0;
        *out_ptr(n, "n")? = m.n();
        *out_ptr(sampled, "sampled")? = m.sampled();
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn r3dm_mask_free(mask: *mut R3dmMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Simulates masked k-space with complex noise of standard deviation `sigma`.
///
/// # Safety
/// `gt` and `mask` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_acquire(
    gt: *const R3dmVolume,
    mask: *const R3dmMask,
    sigma: f64,
    seed: u64,
    out: *mut *mut R3dmMeasurement,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let g = &href(gt, "gt")?.0;
        let m = &href(mask, "mask")?.0;
        emit(out, R3dmMeasurement(acquire(g, m, sigma, seed)?));
        Ok(())
    })
}

/// # Safety
/// `meas` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn r3dm_measurement_free(meas: *mut R3dmMeasurement) {
    if !meas.is_null() {
        drop(Box::from_raw(meas));
    }
}

#[no_mangle]
pub extern "C" fn r3dm_recon_params_default() -> R3dmReconParams {
    let d = R3dmConfig::default();
    R3dmReconParams {
        steps: 50,
        inner_iters: d.recon.inner_iters,
        alpha: d.recon.reg.alpha,
        rho: d.recon.rho,
        tv_on: d.recon.reg.tv_on as i32,
        step_mode: R3dmStepMode::PowerIteration,
        lambda: d.recon.lambda,
        seed: d.seed,
        model: R3dmModelKind::TweedieDct,
        dct_c: r3dm::diffusion::DEFAULT_DCT_THRESHOLD,
        gaussian_mean: 0.0,
        gaussian_var: 1.0,
    }
}

fn config_from_params(p: &R3dmReconParams) -> R3dmConfig {
    let mut cfg = R3dmConfig {
        schedule: ScheduleSpec::with_steps(p.steps),
        seed: p.seed,
        ..Default::default()
    };
    cfg.recon.inner_iters = p.inner_iters;
    cfg.recon.reg.alpha = p.alpha;
    cfg.recon.reg.tv_on = p.tv_on != 0;
    cfg.recon.rho = p.rho;
    cfg.recon.lambda = p.lambda;
    cfg.recon.step_mode = match p.step_mode {
        R3dmStepMode::PowerIteration => StepMode::PowerIteration,
        R3dmStepMode::PaperFormula => StepMode::PaperFormula,
        R3dmStepMode::Fixed => StepMode::Fixed,
    };
    cfg.model = match p.model {
        R3dmModelKind::Zero => ModelSpec::Zero,
        R3dmModelKind::Gaussian => ModelSpec::Gaussian {
            mean: p.gaussian_mean,
            var0: p.gaussian_var,
        },
        R3dmModelKind::TweedieDct => ModelSpec::TweedieDct { c: p.dct_c },
    };
    cfg
}

fn run(meas: &UndersampledMeasurement, cfg: &R3dmConfig, method: R3dmMethod) -> Result<ImageVolume, Failure> {
    cfg.recon.validate()?;
    Ok(match method {
        R3dmMethod::ZeroFilled => zero_filled(meas),
        R3dmMethod::Pgd => reconstruct_pgd_only(meas, cfg, None)?.volume,
        R3dmMethod::R3dm => {
            let schedule = cfg.schedule.build()?;
            let mut model = cfg.model.build(&schedule, meas.shape())?;
            reconstruct(meas, &mut model, cfg, None)?.volume
        }
    })
}

/// Reconstructs with the given method. `params` may be null for defaults.
///
/// # Safety
/// `meas` must be a live handle, `params` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_reconstruct(
    meas: *const R3dmMeasurement,
    params: *const R3dmReconParams,
    method: R3dmMethod,
    out: *mut *mut R3dmVolume,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = &href(meas, "meas")?.0;
        let p = params.as_ref().copied().unwrap_or_else(|| r3dm_recon_params_default());
        let v = run(m, &config_from_params(&p), method)?;
        emit(out, R3dmVolume(v));
        Ok(())
    })
}

/// Reconstructs with a full JSON configuration, the same document the
/// command line accepts through `--config`. This is the only route to the
/// external score model.
///
/// # Safety
/// `meas` must be a live handle, `config_json` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_reconstruct_json(
    meas: *const R3dmMeasurement,
    config_json: *const c_char,
    method: R3dmMethod,
    out: *mut *mut R3dmVolume,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = &href(meas, "meas")?.0;
        if config_json.is_null() {
            return Err(Failure::Null("config_json"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| Error::InvalidInput("config is not valid UTF-8".into()))?;
        let cfg = R3dmConfig::from_json(text)?;
        emit(out, R3dmVolume(run(m, &cfg, method)?));
        Ok(())
    })
}

/// 3D PSNR and SSIM of `recon` against `gt`, each normalized by its maximum.
///
/// # Safety
/// `gt` and `recon` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn r3dm_metrics(
    gt: *const R3dmVolume,
    recon: *const R3dmVolume,
    out: *mut R3dmMetrics,
) -> R3dmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = evaluate(&href(gt, "gt")?.0, &href(recon, "recon")?.0)?;
        *out = R3dmMetrics {
            psnr: r.psnr_3d,
            ssim: r.ssim_3d,
        };
        Ok(())
    })
}
