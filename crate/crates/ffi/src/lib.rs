//! C ABI over `ringlab`.
//!
//! Objects cross the boundary as opaque handles created by `rl_*_new`-style
//! functions and released with the matching `rl_*_free`. Every fallible call
//! returns an [`RlStatus`]; on failure the message is kept per thread and can
//! be copied out with [`rl_last_error`]. Panics are caught and reported as
//! [`RlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ringlab::grid::{read_latent, sample_gaussian, write_latent};
use ringlab::model::{Condition, MixtureModel, ModelSpec};
use ringlab::solvers::{rf_invert_implicit, rf_sample, Guided, SolverConfig, TimeGrid};
use ringlab::stats::roc_auc;
use ringlab::watermark::{KeyPattern, Watermark};
use ringlab::{Error, LatentGrid, RngStream};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnsupportedSize = 3,
    Numerical = 4,
    Format = 5,
    Config = 6,
    Io = 7,
    Panic = 8,
}

impl From<&Error> for RlStatus {
    fn from(e: &Error) -> Self {
        match e {
            _ if e.is_numerical() => RlStatus::Numerical,
            Error::UnsupportedSize { .. } => RlStatus::UnsupportedSize,
            Error::Format(_) | Error::Json(_) | Error::Csv(_) => RlStatus::Format,
            Error::Config(_) => RlStatus::Config,
            Error::Io(_) => RlStatus::Io,
            _ => RlStatus::InvalidArgument,
        }
    }
}

/// Watermark extraction metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RlMetrics {
    pub mean_l1: f64,
    pub nmae: f64,
    pub nmse: f64,
}

/// Opaque latent tensor.
pub struct RlLatent(LatentGrid);

/// Opaque ring mask and key.
pub struct RlWatermark(Watermark);

/// Opaque analytic mixture model.
pub struct RlModel(MixtureModel);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(RlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(RlStatus::from(&e), e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

/// Runs `f`, recording the error message and catching panics.
fn guard(f: impl FnOnce() -> FfiResult) -> RlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ringlab".into());
            RlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path<'a>(p: *const c_char) -> FfiResult<&'a Path> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(RlStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Zero latent of shape `channels × height × width`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_new(channels: usize, height: usize, width: usize, out: *mut *mut RlLatent) -> RlStatus {
    guard(|| put(out, RlLatent(LatentGrid::zeros(channels, height, width)?)))
}

/// Standard normal latent from the `(seed, stream)` generator.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_sample(
    seed: u64,
    stream: u64,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut *mut RlLatent,
) -> RlStatus {
    guard(|| {
        let g = sample_gaussian(&mut RngStream::new(seed, stream), channels, height, width)?;
        put(out, RlLatent(g))
    })
}

/// # Safety
/// `latent` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_free(latent: *mut RlLatent) {
    if !latent.is_null() {
        drop(Box::from_raw(latent));
    }
}

/// # Safety
/// Pointers must be valid; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_shape(
    latent: *const RlLatent,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> RlStatus {
    guard(|| {
        let (c, h, w) = borrow(latent, "latent")?.0.shape();
        for (p, v) in [(channels, c), (height, h), (width, w)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the row-major values (channel, row, column) into `buf`, which
/// must hold exactly `C·H·W` values.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_read_values(latent: *const RlLatent, buf: *mut f64, len: usize) -> RlStatus {
    guard(|| {
        let g = &borrow(latent, "latent")?.0;
        if len != g.len() {
            return Err(Failure(
                RlStatus::InvalidArgument,
                format!("buffer holds {len} values, latent has {}", g.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(g.data());
        Ok(())
    })
}

/// Overwrites the latent's values from `buf` (`C·H·W` doubles).
///
/// # Safety
/// `latent` must be a live handle and `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_write_values(latent: *mut RlLatent, buf: *const f64, len: usize) -> RlStatus {
    guard(|| {
        let g = &mut latent.as_mut().ok_or_else(|| null("latent"))?.0;
        let src = slice(buf, len, "buffer")?;
        if src.len() != g.len() {
            return Err(Failure(
                RlStatus::InvalidArgument,
                format!("buffer holds {len} values, latent has {}", g.len()),
            ));
        }
        g.data_mut().copy_from_slice(src);
        Ok(())
    })
}

/// Loads an `RLT1` file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_load(file: *const c_char, out: *mut *mut RlLatent) -> RlStatus {
    guard(|| put(out, RlLatent(read_latent(path(file)?)?)))
}

/// Saves an `RLT1` file.
///
/// # Safety
/// `latent` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rl_latent_save(latent: *const RlLatent, file: *const c_char) -> RlStatus {
    guard(|| Ok(write_latent(path(file)?, &borrow(latent, "latent")?.0)?))
}

/// Hermitian ring watermark for `height × width` planes.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_watermark_new(
    height: usize,
    width: usize,
    radius: f64,
    channel: usize,
    key_seed: u64,
    out: *mut *mut RlWatermark,
) -> RlStatus {
    guard(|| {
        let wm = Watermark::generate(height, width, radius, channel, key_seed, KeyPattern::HermitianRingConstant)?;
        put(out, RlWatermark(wm))
    })
}

/// # Safety
/// `wm` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rl_watermark_free(wm: *mut RlWatermark) {
    if !wm.is_null() {
        drop(Box::from_raw(wm));
    }
}

/// Writes the key into a copy of `latent`.
///
/// # Safety
/// Handles must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_watermark_embed(
    wm: *const RlWatermark,
    latent: *const RlLatent,
    out: *mut *mut RlLatent,
) -> RlStatus {
    guard(|| {
        let y = borrow(wm, "watermark")?.0.embed(&borrow(latent, "latent")?.0)?;
        put(out, RlLatent(y))
    })
}

/// Distance of the latent's ring spectrum to the key.
///
/// # Safety
/// Handles must be live; `metrics` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_watermark_score(
    wm: *const RlWatermark,
    latent: *const RlLatent,
    metrics: *mut RlMetrics,
) -> RlStatus {
    guard(|| {
        let m = borrow(wm, "watermark")?.0.score(&borrow(latent, "latent")?.0)?;
        let out = metrics.as_mut().ok_or_else(|| null("metrics"))?;
        *out = RlMetrics {
            mean_l1: m.mean_l1,
            nmae: m.nmae,
            nmse: m.nmse,
        };
        Ok(())
    })
}

/// The default low-frequency mixture at the given shape.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_model_default(
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
    out: *mut *mut RlModel,
) -> RlStatus {
    guard(|| {
        let m = ModelSpec::default_mixture(seed).build((channels, height, width), Path::new("."))?;
        put(out, RlModel(m))
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rl_model_free(model: *mut RlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of mixture components.
///
/// # Safety
/// `model` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn rl_model_components(model: *const RlModel, count: *mut usize) -> RlStatus {
    guard(|| {
        let n = borrow(model, "model")?.0.len();
        *count.as_mut().ok_or_else(|| null("count"))? = n;
        Ok(())
    })
}

/// Euler sampling from noise to data under component `k` with guidance.
///
/// # Safety
/// Handles must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_rf_sample(
    model: *const RlModel,
    noise: *const RlLatent,
    k: usize,
    guidance_scale: f64,
    steps: usize,
    out: *mut *mut RlLatent,
) -> RlStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let p = Guided::new(model, Condition::Exact { k }, guidance_scale);
        let x0 = rf_sample(&p, &TimeGrid::uniform_rf(steps)?, &borrow(noise, "noise")?.0, None)?;
        put(out, RlLatent(x0))
    })
}

/// Implicit (backward Euler) inversion from data to noise. `converged`
/// may be null.
///
/// # Safety
/// Handles must be live; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn rl_rf_invert(
    model: *const RlModel,
    sample: *const RlLatent,
    k: usize,
    guidance_scale: f64,
    steps: usize,
    converged: *mut bool,
    out: *mut *mut RlLatent,
) -> RlStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let p = Guided::new(model, Condition::Exact { k }, guidance_scale);
        let cfg = SolverConfig {
            steps,
            guidance_scale,
            ..SolverConfig::rf()
        };
        cfg.validate()?;
        let inv = rf_invert_implicit(&p, &TimeGrid::uniform_rf(steps)?, &borrow(sample, "sample")?.0, &cfg, None)?;
        if let Some(c) = converged.as_mut() {
            *c = inv.converged;
        }
        put(out, RlLatent(inv.latent))
    })
}

/// ROC AUC with watermarked distances expected to be the smaller ones.
///
/// # Safety
/// Arrays must hold the stated number of doubles; `auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_roc_auc(
    watermarked: *const f64,
    n_watermarked: usize,
    clean: *const f64,
    n_clean: usize,
    auc: *mut f64,
) -> RlStatus {
    guard(|| {
        let v = roc_auc(slice(watermarked, n_watermarked, "watermarked")?, slice(clean, n_clean, "clean")?)?;
        *auc.as_mut().ok_or_else(|| null("auc"))? = v;
        Ok(())
    })
}
