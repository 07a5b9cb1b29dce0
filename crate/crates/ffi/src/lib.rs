//! C ABI over the degencontrol library.
//!
//! A `DcLab` owns a validated run configuration and the assembled operator.
//! Every function returns a `DcStatus`; on failure the message is available
//! from `dc_last_error_message` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use degencontrol::cli::{run, RunConfig, Setup, Subcommand};
use degencontrol::diagnostics::estimate_observability_constant;
use degencontrol::hum::solve_hum;
use degencontrol::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque handle.
pub struct DcLab {
    config: RunConfig,
    setup: Setup,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DcControlSummary {
    pub final_norm: f64,
    pub free_final_norm: f64,
    pub reduction: f64,
    pub optimality_residual: f64,
    pub control_norm: f64,
    pub iterations: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::Io { .. } => DcStatus::Io,
        e if e.is_config() => DcStatus::Config,
        _ => DcStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (DcStatus, String)>>(f: F) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DcStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DcStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (DcStatus, String)> {
    if p.is_null() {
        return Err((DcStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn lab_ref<'a>(lab: *const DcLab) -> Result<&'a DcLab, (DcStatus, String)> {
    lab.as_ref().ok_or((DcStatus::NullPointer, "lab handle is null".to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a lab from JSON config text. Relative paths resolve against `base_dir`
/// (may be null for the current directory).
///
/// # Safety
/// `json` and `base_dir` must be null or valid NUL-terminated strings; `out` must be
/// a valid pointer. The handle must be released with `dc_lab_free`.
#[no_mangle]
pub unsafe extern "C" fn dc_lab_new(json: *const c_char, base_dir: *const c_char, out: *mut *mut DcLab) -> DcStatus {
    guard(|| {
        if out.is_null() {
            return Err((DcStatus::NullPointer, "out is null".into()));
        }
        *out = std::ptr::null_mut();
        let text = str_arg(json, "json")?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let config = RunConfig::from_json(text, Path::new(base)).map_err(lib_err)?;
        let setup = Setup::from_config(&config).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DcLab { config, setup }));
        Ok(())
    })
}

/// # Safety
/// `lab` must be null or a handle from `dc_lab_new` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dc_lab_free(lab: *mut DcLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Number of unknowns of the assembled operator.
///
/// # Safety
/// `lab` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_lab_unknowns(lab: *const DcLab, out: *mut u64) -> DcStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        if out.is_null() {
            return Err((DcStatus::NullPointer, "out is null".into()));
        }
        *out = lab.setup.operator.n_dofs() as u64;
        Ok(())
    })
}

/// Runs a pipeline (`solve`, `control`, `observability`, `carleman-audit`) and
/// writes its result files into `out_dir`.
///
/// # Safety
/// `lab` must be a live handle; string arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dc_lab_run(lab: *const DcLab, subcommand: *const c_char, out_dir: *const c_char) -> DcStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let name = str_arg(subcommand, "subcommand")?;
        let sub = Subcommand::parse(name)
            .ok_or_else(|| (DcStatus::Config, format!("unknown subcommand `{name}`")))?;
        let dir = str_arg(out_dir, "out_dir")?;
        run(sub, &lab.config, Path::new(dir)).map_err(|f| (status_of(&f.error), f.to_string()))?;
        Ok(())
    })
}

/// Computes the penalized HUM control for the configured initial state.
///
/// # Safety
/// `lab` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_lab_control(lab: *const DcLab, out: *mut DcControlSummary) -> DcStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        if out.is_null() {
            return Err((DcStatus::NullPointer, "out is null".into()));
        }
        let s = &lab.setup;
        let z0 = lab.config.initial_state.sample(&s.grid);
        let res = solve_hum(&s.operator, &s.regions, &z0, &lab.config.hum, s.spec.horizon, lab.config.grid.steps)
            .map_err(lib_err)?;
        let sum = res.summary(&s.operator);
        *out = DcControlSummary {
            final_norm: sum.final_norm,
            free_final_norm: sum.free_final_norm,
            reduction: sum.reduction,
            optimality_residual: sum.optimality_residual,
            control_norm: sum.control_norm,
            iterations: sum.iterations as u64,
        };
        Ok(())
    })
}

/// Lower bound for the observability constant on the configured collar.
///
/// # Safety
/// `lab` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_lab_observability(lab: *const DcLab, out: *mut f64) -> DcStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        if out.is_null() {
            return Err((DcStatus::NullPointer, "out is null".into()));
        }
        let s = &lab.setup;
        let cfg = &lab.config;
        let rs = if cfg.observability.control_everywhere {
            s.regions.clone().with_control_everywhere()
        } else {
            s.regions.clone()
        };
        let rep = estimate_observability_constant(
            &s.operator,
            &rs,
            s.spec.horizon,
            cfg.grid.steps,
            cfg.observability.iters,
            cfg.observability.samples,
            cfg.seed,
        )
        .map_err(lib_err)?;
        *out = rep.c_obs_low;
        Ok(())
    })
}
