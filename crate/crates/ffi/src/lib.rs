//! C ABI over the `cemgms` pipeline.
//!
//! Every function returns a [`CemStatus`]; on failure the message is kept in
//! a thread-local buffer readable through [`cem_last_error`]. Objects are
//! opaque handles created by the constructor functions and released with
//! the matching `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cemgms::experiment::{run_single, run_single_with_field, ExperimentConfig, RunReport};
use cemgms::fields::{generate_channelized, load_raster, PermeabilityField};
use cemgms::{Error, ErrorCategory};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    Internal = 6,
    Panic = 7,
}

/// A permeability field.
pub struct CemField {
    inner: PermeabilityField,
}

/// An experiment configuration.
pub struct CemConfig {
    inner: ExperimentConfig,
}

/// The result of one run.
pub struct CemRun {
    inner: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CemStatus {
    match (e, e.category()) {
        (Error::Config(_) | Error::Parse { .. }, _) => CemStatus::Config,
        (_, ErrorCategory::InvalidInput) => CemStatus::InvalidArgument,
        (_, ErrorCategory::Io) => CemStatus::Io,
        (_, ErrorCategory::Numerical) => CemStatus::Numerical,
        (_, ErrorCategory::Internal) => CemStatus::Internal,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (CemStatus, String)>) -> CemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CemStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            CemStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CemStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (CemStatus, String) {
    (CemStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (CemStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CemStatus::InvalidArgument, format!("`{name}` is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn cem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn cem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Seeded channelized field with background 1 and channels at `contrast`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cem_field_channelized(
    nx: usize,
    ny: usize,
    channels: usize,
    contrast: f64,
    seed: u64,
    out: *mut *mut CemField,
) -> CemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = generate_channelized(nx, ny, channels, contrast, seed).map_err(lib_err)?;
        write_out(out, CemField { inner });
        Ok(())
    })
}

/// Loads a raster file (`nx ny` header, then `nx·ny` values, row-major).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cem_field_from_raster(path: *const c_char, out: *mut *mut CemField) -> CemStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_raster(Path::new(path)).map_err(lib_err)?;
        write_out(out, CemField { inner });
        Ok(())
    })
}

/// Field from `len = nx·ny` row-major cell values.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn cem_field_from_values(
    nx: usize,
    ny: usize,
    values: *const f64,
    len: usize,
    out: *mut *mut CemField,
) -> CemStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if nx.checked_mul(ny) != Some(len) {
            return Err((CemStatus::InvalidArgument, format!("{len} values for a {nx}x{ny} field")));
        }
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let inner = PermeabilityField::new(nx, ny, data).map_err(lib_err)?;
        write_out(out, CemField { inner });
        Ok(())
    })
}

/// `κ_max / κ_min`.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cem_field_contrast(field: *const CemField, out: *mut f64) -> CemStatus {
    guard(|| {
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = field.inner.contrast();
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cem_field_free(field: *mut CemField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Default configuration (80×80 fine grid, 10×10 coarse, `L_z = 2`, auto
/// layers, `τ = 0.01`, `T = 1`, no output directory).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cem_config_default(out: *mut *mut CemConfig) -> CemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        write_out(out, CemConfig { inner: ExperimentConfig::default() });
        Ok(())
    })
}

/// Sets one config key, using the same keys as the config file format.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cem_config_set(config: *mut CemConfig, key: *const c_char, value: *const c_char) -> CemStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        let key = c_str(key, "key")?;
        let value = c_str(value, "value")?;
        config.inner.set(key, value).map_err(lib_err)
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cem_config_free(config: *mut CemConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured experiment (sweeps are ignored).
///
/// # Safety
/// `config` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cem_run_single(config: *const CemConfig, out: *mut *mut CemRun) -> CemStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = run_single(&config.inner).map_err(lib_err)?;
        write_out(out, CemRun { inner });
        Ok(())
    })
}

/// Runs the configured experiment on `field` instead of the configured one.
///
/// # Safety
/// `config` and `field` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cem_run_with_field(
    config: *const CemConfig,
    field: *const CemField,
    out: *mut *mut CemRun,
) -> CemStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = run_single_with_field(&config.inner, field.inner.clone()).map_err(lib_err)?;
        write_out(out, CemRun { inner });
        Ok(())
    })
}

/// Number of stored time levels (`N + 1`).
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cem_run_steps(run: *const CemRun, out: *mut usize) -> CemStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = run.inner.errors.len();
        Ok(())
    })
}

/// Time and relative errors at time level `step`; an error that is undefined
/// (zero reference norm) is reported as NaN.
///
/// # Safety
/// `run` must be a live handle; the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn cem_run_errors(
    run: *const CemRun,
    step: usize,
    t: *mut f64,
    e_v: *mut f64,
    e_p: *mut f64,
) -> CemStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if t.is_null() || e_v.is_null() || e_p.is_null() {
            return Err(null("t/e_v/e_p"));
        }
        let e = &run.inner.errors;
        if step >= e.len() {
            return Err((CemStatus::InvalidArgument, format!("step {step} out of range ({} levels)", e.len())));
        }
        *t = e.times[step];
        *e_v = e.e_v[step].unwrap_or(f64::NAN);
        *e_p = e.e_p[step].unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Oversampling layers actually used (resolves `auto`).
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cem_run_layers(run: *const CemRun, out: *mut usize) -> CemStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = run.inner.layers;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cem_run_free(run: *mut CemRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
