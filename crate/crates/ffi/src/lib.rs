//! C ABI for prunescope.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`PsStatus`]; on failure the message is available from
//! [`ps_last_error`] on the same thread until the next failing call.
//! Panics are caught and reported as `PS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use prunescope::experiment::{emit_plots, load_checkpoint, Checkpoint, ExperimentConfig, Pipeline};
use prunescope::landscape::inverse_volume;
use prunescope::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Checkpoint = 7,
    MissingArtifact = 8,
    Panic = 9,
    Other = 10,
}

/// Parsed and validated experiment configuration.
pub struct PsConfig(ExperimentConfig);

/// An experiment bound to an artifact directory.
pub struct PsPipeline(Pipeline);

/// A checkpoint loaded from disk.
pub struct PsCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::Config(_) => PsStatus::Config,
        Error::NumericalFailure(_)
        | Error::Divergence { .. }
        | Error::DegenerateProfile { .. }
        | Error::DegeneratePlane { .. } => PsStatus::Numerical,
        Error::Io(_) => PsStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::LabelRange { .. } => PsStatus::Parse,
        Error::VersionMismatch { .. } | Error::TruncatedPayload { .. } | Error::ChecksumMismatch { .. } => {
            PsStatus::Checkpoint
        }
        Error::MissingArtifact { .. } => PsStatus::MissingArtifact,
        Error::Dimension { .. }
        | Error::InvalidVector(_)
        | Error::Precondition(_)
        | Error::Domain(_)
        | Error::EmptySubspace
        | Error::UndefinedCosine
        | Error::Exhausted { .. } => PsStatus::InvalidArgument,
    }
}

fn fail(status: PsStatus, msg: impl Into<String>) -> PsStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), PsStatus>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PsStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: prunescope::Result<T>) -> Result<T, PsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn string_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PsStatus> {
    if p.is_null() {
        return Err(fail(PsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, PsStatus> {
    p.as_ref()
        .ok_or_else(|| fail(PsStatus::NullArgument, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PsStatus> {
    p.as_mut()
        .ok_or_else(|| fail(PsStatus::NullArgument, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PsStatus> {
    handle_mut(p, what)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default desk-scale configuration.
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn ps_config_default(out: *mut *mut PsConfig) -> PsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(PsConfig(ExperimentConfig::default())));
        Ok(())
    })
}

/// Parses a JSON configuration.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_config_from_json(json: *const c_char, out: *mut *mut PsConfig) -> PsStatus {
    guard(|| {
        let text = string_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let cfg = lift(ExperimentConfig::from_json(text))?;
        *out = Box::into_raw(Box::new(PsConfig(cfg)));
        Ok(())
    })
}

/// Fingerprint (hex SHA-256) of the configuration, copied into `buf`
/// including the terminating nul. `buf_len` must be at least 65.
///
/// # Safety
/// `cfg` must be a live handle and `buf` valid for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_config_fingerprint(cfg: *const PsConfig, buf: *mut c_char, buf_len: usize) -> PsStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        if buf.is_null() {
            return Err(fail(PsStatus::NullArgument, "buf is null"));
        }
        let fp = cfg.0.fingerprint();
        if buf_len < fp.len() + 1 {
            return Err(fail(
                PsStatus::InvalidArgument,
                format!("buffer of {buf_len} bytes is too small, need {}", fp.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(fp.as_ptr().cast(), buf, fp.len());
        *buf.add(fp.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_config_free(cfg: *mut PsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Opens (or resumes) an experiment in `out_dir`. Relative dataset paths
/// resolve against `data_base`, which may be null for the working directory.
///
/// # Safety
/// `cfg` must be a live handle; strings must be nul-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ps_pipeline_open(
    cfg: *const PsConfig,
    out_dir: *const c_char,
    data_base: *const c_char,
    out: *mut *mut PsPipeline,
) -> PsStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        let dir = PathBuf::from(string_arg(out_dir, "out_dir")?);
        let base = if data_base.is_null() {
            PathBuf::from(".")
        } else {
            PathBuf::from(string_arg(data_base, "data_base")?)
        };
        let out = out_arg(out, "out")?;
        let p = lift(Pipeline::open(cfg.0.clone(), &dir, &base))?;
        *out = Box::into_raw(Box::new(PsPipeline(p)));
        Ok(())
    })
}

/// Runs every remaining stage.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_pipeline_run_all(p: *mut PsPipeline) -> PsStatus {
    guard(|| {
        let p = handle_mut(p, "pipeline")?;
        lift(p.0.run_all()).map(drop)
    })
}

/// Runs one stage by name ("data", "dense", "imp", "variants", "eigen",
/// "radius", "interp", "surface", "geometry", "taylor", "postprune",
/// "summary", "plots"), along with whatever it depends on.
///
/// # Safety
/// `p` must be a live handle and `stage` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ps_pipeline_run_stage(p: *mut PsPipeline, stage: *const c_char) -> PsStatus {
    guard(|| {
        let p = &mut handle_mut(p, "pipeline")?.0;
        let r = match string_arg(stage, "stage")? {
            "data" => p.data(),
            "dense" => p.dense(),
            "imp" => p.imp(),
            "variants" => p.all_variants(),
            "eigen" => p.eigen(),
            "radius" => p.radius(),
            "interp" => p.interp(),
            "surface" => p.surface(),
            "geometry" => p.geometry(),
            "taylor" => p.taylor(),
            "postprune" => p.postprune(),
            "summary" => p.summary().map(drop),
            "plots" => p.plots(),
            other => return Err(fail(PsStatus::InvalidArgument, format!("unknown stage {other:?}"))),
        };
        lift(r)
    })
}

/// # Safety
/// `p` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_pipeline_free(p: *mut PsPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Loads and verifies a checkpoint file.
///
/// # Safety
/// `path` must be nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ps_checkpoint_load(path: *const c_char, out: *mut *mut PsCheckpoint) -> PsStatus {
    guard(|| {
        let path = PathBuf::from(string_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let cp = lift(load_checkpoint(&path))?;
        *out = Box::into_raw(Box::new(PsCheckpoint(cp)));
        Ok(())
    })
}

/// Parameter count, or 0 for a null handle.
///
/// # Safety
/// `cp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_checkpoint_param_count(cp: *const PsCheckpoint) -> usize {
    cp.as_ref().map_or(0, |c| c.0.params.len())
}

/// Pruning level recorded in the header, or 0 for a null handle.
///
/// # Safety
/// `cp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_checkpoint_level(cp: *const PsCheckpoint) -> usize {
    cp.as_ref().map_or(0, |c| c.0.header.level)
}

/// Copies the parameters into `buf`, which must hold exactly
/// `ps_checkpoint_param_count` doubles.
///
/// # Safety
/// `cp` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_checkpoint_copy_params(cp: *const PsCheckpoint, buf: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        let cp = handle(cp, "checkpoint")?;
        if buf.is_null() {
            return Err(fail(PsStatus::NullArgument, "buf is null"));
        }
        let src = cp.0.params.as_slice();
        if len != src.len() {
            return Err(fail(
                PsStatus::InvalidArgument,
                format!("buffer holds {len} values, checkpoint has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
        Ok(())
    })
}

/// Copies the mask as one byte (0 or 1) per parameter.
///
/// # Safety
/// `cp` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ps_checkpoint_copy_mask(cp: *const PsCheckpoint, buf: *mut u8, len: usize) -> PsStatus {
    guard(|| {
        let cp = handle(cp, "checkpoint")?;
        if buf.is_null() {
            return Err(fail(PsStatus::NullArgument, "buf is null"));
        }
        let bits = cp.0.mask.bits();
        if len != bits.len() {
            return Err(fail(
                PsStatus::InvalidArgument,
                format!("buffer holds {len} bytes, checkpoint has {}", bits.len()),
            ));
        }
        for (i, &b) in bits.iter().enumerate() {
            *buf.add(i) = u8::from(b);
        }
        Ok(())
    })
}

/// # Safety
/// `cp` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_checkpoint_free(cp: *mut PsCheckpoint) {
    if !cp.is_null() {
        drop(Box::from_raw(cp));
    }
}

/// Sum of the logs of the `k` largest positive eigenvalues.
///
/// # Safety
/// `eigenvalues` must be valid for `n` doubles and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ps_inverse_volume(eigenvalues: *const f64, n: usize, k: usize, out: *mut f64) -> PsStatus {
    guard(|| {
        if eigenvalues.is_null() && n > 0 {
            return Err(fail(PsStatus::NullArgument, "eigenvalues is null"));
        }
        let out = out_arg(out, "out")?;
        let eig = if n == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(eigenvalues, n)
        };
        *out = lift(inverse_volume(eig, k))?;
        Ok(())
    })
}

/// Renders SVG figures for an artifact directory with a manifest.
///
/// # Safety
/// `dir` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ps_emit_plots(dir: *const c_char) -> PsStatus {
    guard(|| {
        let dir = PathBuf::from(string_arg(dir, "dir")?);
        lift(emit_plots(&dir)).map(drop)
    })
}
