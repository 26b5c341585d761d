//! C ABI over the `motioncache` engine.
//!
//! Every fallible function returns an [`McStatus`]. On failure a message for
//! the calling thread is available from [`mc_last_error_message`]. Strings
//! handed out by the library are owned by the caller and released with
//! [`mc_string_free`]; engines are released with [`mc_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use motioncache::analysis::ndcg;
use motioncache::experiment::{
    build_summary, run_experiment, verify, write_experiment, ExperimentConfig, RunFilter, VerifyKind, VerifyOptions,
};
use motioncache::policy::soft_map;
use motioncache::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    State = 5,
    Numeric = 6,
    InsufficientData = 7,
    Format = 8,
    Io = 9,
    Panic = 10,
}

/// Opaque handle owning a validated experiment configuration.
pub struct McEngine {
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> McStatus {
    match e {
        Error::InvalidArgument(_) => McStatus::InvalidArgument,
        Error::Numeric(_) => McStatus::Numeric,
        Error::State(_) => McStatus::State,
        Error::InsufficientData(_) => McStatus::InsufficientData,
        Error::Config { .. } => McStatus::Config,
        Error::Format(_) => McStatus::Format,
        Error::Io(_) => McStatus::Io,
    }
}

struct Failure(McStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(McStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> McStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            McStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(McStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(McStatus::Format, "output contains a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn parse_config(json: *const c_char) -> Result<ExperimentConfig, Failure> {
    if json.is_null() {
        return Ok(ExperimentConfig::default());
    }
    Ok(ExperimentConfig::from_json(read_str(json, "config_json")?)?)
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn mc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an engine from JSON config text (NULL selects the defaults).
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_engine_new(config_json: *const c_char, out: *mut *mut McEngine) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = parse_config(config_json)?;
        *out = Box::into_raw(Box::new(McEngine { config }));
        Ok(())
    })
}

/// Destroys an engine. NULL is ignored.
///
/// # Safety
/// `engine` must come from [`mc_engine_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mc_engine_free(engine: *mut McEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Overrides the engine's seed list with a single seed.
///
/// # Safety
/// `engine` must be a live engine.
#[no_mangle]
pub unsafe extern "C" fn mc_engine_set_seed(engine: *mut McEngine, seed: u64) -> McStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        e.config.seeds = vec![seed];
        Ok(())
    })
}

/// Runs every configured policy and returns the summary JSON. When
/// `out_dir` is not NULL, traces and `summary.json` are written there.
///
/// # Safety
/// `engine` must be live, `out_dir` NULL or NUL-terminated, `summary_out` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_engine_run(engine: *const McEngine, out_dir: *const c_char, summary_out: *mut *mut c_char) -> McStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if summary_out.is_null() {
            return Err(null("summary_out"));
        }
        let results = run_experiment(&e.config, &RunFilter::default())?;
        let summary = if out_dir.is_null() {
            build_summary(&e.config, &results)?
        } else {
            let dir = PathBuf::from(read_str(out_dir, "out_dir")?);
            write_experiment(&e.config, &results, &dir)?
        };
        write_string(summary_out, summary.to_json())
    })
}

/// Runs a check (`prop1`, `lemma`, `ndcg` or `sparse-dense`). `passed` is
/// set to 1 or 0; the report JSON goes to `report_out` when it is not NULL.
///
/// # Safety
/// `engine` must be live, `kind` NUL-terminated, `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_engine_verify(
    engine: *const McEngine,
    kind: *const c_char,
    passed: *mut i32,
    report_out: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if passed.is_null() {
            return Err(null("passed"));
        }
        let kind = VerifyKind::parse(read_str(kind, "kind")?)?;
        let report = verify(&e.config, kind, &VerifyOptions::default(), &RunFilter::default())?;
        *passed = i32::from(report.passed);
        if !report_out.is_null() {
            write_string(report_out, serde_json::to_string(&report).expect("report serializes"))?;
        }
        Ok(())
    })
}

/// Canonical hash of the engine's configuration (hex SHA-256).
///
/// # Safety
/// `engine` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_engine_config_hash(engine: *const McEngine, out: *mut *mut c_char) -> McStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_string(out, e.config.hash())
    })
}

/// Canonical hash of JSON config text without building an engine.
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_config_hash(config_json: *const c_char, out: *mut *mut c_char) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        write_string(out, parse_config(config_json)?.hash())
    })
}

/// Full-depth NDCG of ranking by `proxy` against relevance `oracle`.
///
/// # Safety
/// Both arrays must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_ndcg(proxy: *const f64, oracle: *const f64, n: usize, out: *mut f64) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ndcg(slice(proxy, n, "proxy")?, slice(oracle, n, "oracle")?, None)?;
        Ok(())
    })
}

/// Soft weights `α + (1 − α)(M − min)/(max − min + eps)` of one frame.
///
/// # Safety
/// `importance` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mc_soft_map(importance: *const f64, n: usize, alpha: f64, eps: f64, out: *mut f64) -> McStatus {
    guard(|| {
        let m = slice(importance, n, "importance")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&alpha) || !(eps > 0.0) {
            return Err(Failure(McStatus::InvalidArgument, "need alpha in [0, 1] and eps > 0".into()));
        }
        let w = soft_map(m, alpha, eps);
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&w);
        Ok(())
    })
}
