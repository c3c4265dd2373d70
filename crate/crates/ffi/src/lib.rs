//! C interface to the simulator.
//!
//! Every function returns a [`FeddureStatus`]; on failure the message is
//! available from [`feddure_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use feddure::harness::{parse_override, parse_overrides_toml, preset, ConfigOverrides, Experiment, ExperimentConfig};
use feddure::server::Checkpoint;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeddureStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Runtime = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Opaque experiment configuration.
pub struct FeddureConfig {
    inner: ExperimentConfig,
}

/// Opaque in-memory experiment.
pub struct FeddureExperiment {
    inner: Experiment,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).unwrap()));
}

struct Failure(FeddureStatus, String);

impl From<feddure::Error> for Failure {
    fn from(e: feddure::Error) -> Self {
        let status = match e {
            feddure::Error::Config { .. } => FeddureStatus::Config,
            _ => FeddureStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FeddureStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FeddureStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FeddureStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(FeddureStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FeddureStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn config_from(o: ConfigOverrides) -> Result<Box<FeddureConfig>, Failure> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply(o);
    cfg.validate()?;
    Ok(Box::new(FeddureConfig { inner: cfg }))
}

/// Last error message on this thread, or null. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn feddure_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn feddure_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_config_default(out: *mut *mut FeddureConfig) -> FeddureStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(config_from(ConfigOverrides::default())?);
        Ok(())
    })
}

/// Configuration from a flat TOML document.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_config_from_toml(toml: *const c_char, out: *mut *mut FeddureConfig) -> FeddureStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = str_arg(toml, "toml")?;
        *out = Box::into_raw(config_from(parse_overrides_toml(text)?)?);
        Ok(())
    })
}

/// Configuration from a built-in preset name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_config_from_preset(name: *const c_char, out: *mut *mut FeddureConfig) -> FeddureStatus {
    guard(|| {
        non_null(out, "out")?;
        let name = str_arg(name, "name")?;
        *out = Box::into_raw(config_from(preset(name)?)?);
        Ok(())
    })
}

/// Sets one key. The value uses TOML syntax; bare words are read as
/// strings. The config is left unchanged if the result is invalid.
///
/// # Safety
/// `cfg` must come from a `feddure_config_*` constructor; `key` and `value`
/// must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn feddure_config_set(
    cfg: *mut FeddureConfig,
    key: *const c_char,
    value: *const c_char,
) -> FeddureStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut next = (*cfg).inner.clone();
        next.apply(parse_override(&format!("{key}={value}"))?);
        next.validate()?;
        (*cfg).inner = next;
        Ok(())
    })
}

/// Writes the config as TOML into `buf` (NUL-terminated). `needed` receives
/// the required size including the terminator; a too-small buffer returns
/// `BUFFER_TOO_SMALL` without writing.
///
/// # Safety
/// `cfg` must be valid; `buf` must hold `capacity` bytes or be null when
/// `capacity` is 0; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn feddure_config_to_toml(
    cfg: *const FeddureConfig,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> FeddureStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(needed, "needed")?;
        let text = (*cfg).inner.to_toml();
        *needed = text.len() + 1;
        if capacity < text.len() + 1 {
            return Err(Failure(
                FeddureStatus::BufferTooSmall,
                format!("buffer holds {capacity} bytes, {} needed", text.len() + 1),
            ));
        }
        non_null(buf, "buf")?;
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a constructor and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn feddure_config_free(cfg: *mut FeddureConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds data, partition, clients, and the initial model.
///
/// # Safety
/// `cfg` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_new(
    cfg: *const FeddureConfig,
    out: *mut *mut FeddureExperiment,
) -> FeddureStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let inner = Experiment::new(&(*cfg).inner)?;
        *out = Box::into_raw(Box::new(FeddureExperiment { inner }));
        Ok(())
    })
}

/// Rebuilds an experiment from `cfg` and restores a checkpoint file.
///
/// # Safety
/// `cfg` must be valid, `path` NUL-terminated, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_resume(
    cfg: *const FeddureConfig,
    path: *const c_char,
    out: *mut *mut FeddureExperiment,
) -> FeddureStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::load(&path)?;
        let inner = Experiment::from_checkpoint(&(*cfg).inner, &ck)?;
        *out = Box::into_raw(Box::new(FeddureExperiment { inner }));
        Ok(())
    })
}

/// Runs one round; `accuracy` (nullable) receives the new test accuracy.
///
/// # Safety
/// `exp` must be valid; `accuracy` null or valid.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_run_round(exp: *mut FeddureExperiment, accuracy: *mut f64) -> FeddureStatus {
    guard(|| {
        non_null(exp, "exp")?;
        let acc = (*exp).inner.run_round()?.test_accuracy;
        if !accuracy.is_null() {
            *accuracy = acc;
        }
        Ok(())
    })
}

/// Number of completed rounds.
///
/// # Safety
/// `exp` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_rounds_done(exp: *const FeddureExperiment, out: *mut usize) -> FeddureStatus {
    guard(|| {
        non_null(exp, "exp")?;
        non_null(out, "out")?;
        *out = (*exp).inner.rounds_done();
        Ok(())
    })
}

/// Test accuracy of the latest round; fails before the first round.
///
/// # Safety
/// `exp` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_accuracy(exp: *const FeddureExperiment, out: *mut f64) -> FeddureStatus {
    guard(|| {
        non_null(exp, "exp")?;
        non_null(out, "out")?;
        let last = (*exp).inner.global.history.last().ok_or_else(|| {
            Failure(FeddureStatus::Runtime, "no round has been run".into())
        })?;
        *out = last.test_accuracy;
        Ok(())
    })
}

/// Number of global model parameters.
///
/// # Safety
/// `exp` must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_param_count(exp: *const FeddureExperiment, out: *mut usize) -> FeddureStatus {
    guard(|| {
        non_null(exp, "exp")?;
        non_null(out, "out")?;
        *out = (*exp).inner.global.global_params.len();
        Ok(())
    })
}

/// Copies the flattened global parameters into `buf`.
///
/// # Safety
/// `exp` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_copy_params(
    exp: *const FeddureExperiment,
    buf: *mut f64,
    len: usize,
) -> FeddureStatus {
    guard(|| {
        non_null(exp, "exp")?;
        non_null(buf, "buf")?;
        let flat = (*exp).inner.global.global_params.to_flat();
        if len < flat.len() {
            return Err(Failure(
                FeddureStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", flat.len()),
            ));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        Ok(())
    })
}

/// Writes a JSON checkpoint.
///
/// # Safety
/// `exp` must be valid and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_save_checkpoint(
    exp: *const FeddureExperiment,
    path: *const c_char,
) -> FeddureStatus {
    guard(|| {
        non_null(exp, "exp")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        (*exp).inner.checkpoint().save(&path)?;
        Ok(())
    })
}

/// # Safety
/// `exp` must come from a constructor and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn feddure_experiment_free(exp: *mut FeddureExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}
