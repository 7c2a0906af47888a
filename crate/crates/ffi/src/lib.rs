//! C ABI over the `subkam` crate.
//!
//! Objects are opaque heap handles released with the matching `_free`
//! function. Every fallible call returns a [`SubkamStatus`]; on failure the
//! message is available from [`subkam_last_error`] on the same thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use subkam::action::{sr_distance, OptimizerSettings};
use subkam::config::parse_config;
use subkam::grid::{GridBox, GridFunction};
use subkam::hjsolver::{critical_solution, SchemeSettings};
use subkam::instances::{build, named, Instance};
use subkam::lagrangian::hamiltonian;
use subkam::run::execute;
use subkam::{KamError, Lagrangian};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubkamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownInstance = 3,
    Config = 4,
    NotConverged = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// A control system together with its Lagrangian.
pub struct SubkamInstance(Instance);

/// Values on a uniform state grid.
pub struct SubkamGrid(GridFunction);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &KamError) -> SubkamStatus {
    match e {
        KamError::InvalidArgument(_) | KamError::InvalidSystem(_) | KamError::OutOfBox(_) => SubkamStatus::InvalidArgument,
        KamError::UnknownInstance(_) => SubkamStatus::UnknownInstance,
        KamError::Config { .. } => SubkamStatus::Config,
        KamError::NotConverged { .. } => SubkamStatus::NotConverged,
        KamError::Io(_) | KamError::Json(_) | KamError::Csv(_) => SubkamStatus::Io,
        _ => SubkamStatus::Numerical,
    }
}

enum Fail {
    Null,
    Kam(KamError),
}

impl From<KamError> for Fail {
    fn from(e: KamError) -> Self {
        Fail::Kam(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SubkamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SubkamStatus::Ok,
        Ok(Err(Fail::Null)) => {
            set_error("null pointer argument");
            SubkamStatus::NullPointer
        }
        Ok(Err(Fail::Kam(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SubkamStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(Fail::Null);
    }
    CStr::from_ptr(s).to_str().map_err(|_| Fail::Kam(KamError::InvalidArgument("string is not UTF-8".into())))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null);
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn instance_arg<'a>(p: *const SubkamInstance) -> Result<&'a Instance, Fail> {
    p.as_ref().map(|i| &i.0).ok_or(Fail::Null)
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null)
}

/// Message of the last failure on this thread; valid until the next call.
#[no_mangle]
pub extern "C" fn subkam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a named built-in instance.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn subkam_instance_new(name: *const c_char, out: *mut *mut SubkamInstance) -> SubkamStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let inst = named(str_arg(name)?)?;
        *out = Box::into_raw(Box::new(SubkamInstance(inst)));
        Ok(())
    })
}

/// Builds the instance described by configuration text, including `custom`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn subkam_instance_from_config(text: *const c_char, out: *mut *mut SubkamInstance) -> SubkamStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let cfg = parse_config(str_arg(text)?)?;
        let inst = build(&cfg.instance, &cfg.params, cfg.system.as_ref())?;
        *out = Box::into_raw(Box::new(SubkamInstance(inst)));
        Ok(())
    })
}

/// # Safety
/// `inst` must come from an instance constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn subkam_instance_free(inst: *mut SubkamInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// State dimension `d`, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn subkam_instance_state_dim(inst: *const SubkamInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.state_dim())
}

/// Number of controls `m`, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn subkam_instance_control_dim(inst: *const SubkamInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.system.controls())
}

/// `min_x L(x, 0)` for instances with a trusted oracle.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn subkam_oracle_critical(inst: *const SubkamInstance, out: *mut f64) -> SubkamStatus {
    guard(|| {
        let inst = instance_arg(inst)?;
        let out = out_arg(out)?;
        *out = inst.oracle_c.ok_or_else(|| KamError::InvalidArgument("instance has no oracle critical value".into()))?;
        Ok(())
    })
}

/// `L(x, u)` with `x` of length `d` and `u` of length `m`.
///
/// # Safety
/// Pointers must be valid for the instance dimensions.
#[no_mangle]
pub unsafe extern "C" fn subkam_lagrangian(inst: *const SubkamInstance, x: *const f64, u: *const f64, out: *mut f64) -> SubkamStatus {
    guard(|| {
        let inst = instance_arg(inst)?;
        let x = slice_arg(x, inst.state_dim())?;
        let u = slice_arg(u, inst.system.controls())?;
        *out_arg(out)? = inst.lagrangian.eval(x, u);
        Ok(())
    })
}

/// `H(x, p)` for a covector `p` of length `d`.
///
/// # Safety
/// Pointers must be valid for the instance dimensions.
#[no_mangle]
pub unsafe extern "C" fn subkam_hamiltonian(inst: *const SubkamInstance, x: *const f64, p: *const f64, out: *mut f64) -> SubkamStatus {
    guard(|| {
        let inst = instance_arg(inst)?;
        let d = inst.state_dim();
        let (x, p) = (slice_arg(x, d)?, slice_arg(p, d)?);
        *out_arg(out)? = hamiltonian(&inst.lagrangian, &inst.system, x, p)?;
        Ok(())
    })
}

/// Sub-Riemannian distance with default optimizer settings and `seed`.
///
/// # Safety
/// Pointers must be valid for the instance dimensions.
#[no_mangle]
pub unsafe extern "C" fn subkam_sr_distance(
    inst: *const SubkamInstance,
    x: *const f64,
    y: *const f64,
    seed: u64,
    out: *mut f64,
) -> SubkamStatus {
    guard(|| {
        let inst = instance_arg(inst)?;
        let d = inst.state_dim();
        let settings = OptimizerSettings { seed, ..Default::default() };
        *out_arg(out)? = sr_distance(&inst.system, slice_arg(x, d)?, slice_arg(y, d)?, &settings)?;
        Ok(())
    })
}

/// Critical solution on the cube `[−half_width, half_width]^d` with
/// `resolution` nodes per axis, started from zero.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn subkam_critical_solution(
    inst: *const SubkamInstance,
    c: f64,
    half_width: f64,
    resolution: usize,
    dt: f64,
    control_samples: usize,
    control_bound: f64,
    out: *mut *mut SubkamGrid,
) -> SubkamStatus {
    guard(|| {
        let inst = instance_arg(inst)?;
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let grid = GridBox::cube(inst.state_dim(), half_width, resolution)?;
        let settings = SchemeSettings::new(grid.clone(), dt, control_samples, control_bound);
        let sol = critical_solution(&inst.lagrangian, &inst.system, c, &settings, &GridFunction::zeros(grid))?;
        if !sol.converged {
            return Err(KamError::NotConverged { iterations: sol.iterations, residual: sol.change.max(sol.drift.abs()) }.into());
        }
        *out = Box::into_raw(Box::new(SubkamGrid(sol.chi)));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn subkam_grid_free(grid: *mut SubkamGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn subkam_grid_len(grid: *const SubkamGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.values.len())
}

/// Copies node values (axis 0 fastest) into `out`, which holds `len` doubles.
///
/// # Safety
/// `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn subkam_grid_values(grid: *const SubkamGrid, out: *mut f64, len: usize) -> SubkamStatus {
    guard(|| {
        let g = &grid.as_ref().ok_or(Fail::Null)?.0;
        if out.is_null() {
            return Err(Fail::Null);
        }
        if len != g.values.len() {
            return Err(KamError::InvalidArgument(format!("buffer holds {len} values, grid has {}", g.values.len())).into());
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&g.values);
        Ok(())
    })
}

/// Multilinear interpolation at `x` (length `d`), clamped to the box.
///
/// # Safety
/// `x` must be valid for `d` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn subkam_grid_interpolate(grid: *const SubkamGrid, x: *const f64, out: *mut f64) -> SubkamStatus {
    guard(|| {
        let g = &grid.as_ref().ok_or(Fail::Null)?.0;
        *out_arg(out)? = g.interpolate(slice_arg(x, g.grid.dim())?);
        Ok(())
    })
}

/// Runs a full configuration. `out_dir` may be null to keep the file's
/// setting. `exit_code` receives 0 (ok), 1 (error) or 2 (flagged).
///
/// # Safety
/// Strings must be NUL-terminated; `exit_code` must be valid.
#[no_mangle]
pub unsafe extern "C" fn subkam_run_config(text: *const c_char, out_dir: *const c_char, exit_code: *mut c_int) -> SubkamStatus {
    guard(|| {
        let code = out_arg(exit_code)?;
        let mut cfg = parse_config(str_arg(text)?)?;
        if !out_dir.is_null() {
            cfg.out_dir = str_arg(out_dir)?.into();
        }
        let outcome = execute(&cfg);
        *code = outcome.exit_code;
        if let Some(e) = outcome.manifest.get("error").and_then(|e| e.as_str()) {
            set_error(e);
        }
        Ok(())
    })
}
