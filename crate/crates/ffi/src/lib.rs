//! C ABI for the weingarten solver.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns a
//! [`WgStatus`]; the message of the last failure on the calling thread is
//! available from [`wg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use weingarten::cli_io::{self, ExitStatus, MeshFormat, RunConfig, RunOutcome};
use weingarten::graphgeom::GraphState;
use weingarten::psidsl::PsiExpr;
use weingarten::solver::max_norm;
use weingarten::symfunc::{elem_sym_norm, PrincipalTuple};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Serrin = 4,
    Continuation = 5,
    Diagnostics = 6,
    Io = 7,
    BufferTooSmall = 8,
    Psi = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WgMeshFormat {
    Obj = 0,
    Vtk = 1,
}

/// Validated run configuration.
pub struct WgConfig {
    inner: RunConfig,
}

/// Result of a run: the final state plus its residual.
pub struct WgSolution {
    config: RunConfig,
    state: GraphState,
    residual: Vec<f64>,
    status: WgStatus,
}

/// Parsed curvature expression.
pub struct WgPsi {
    inner: PsiExpr,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: WgStatus, msg: impl Into<String>) -> WgStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> WgStatus) -> WgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(WgStatus::Panic, msg)
        }
    }
}

fn from_exit(s: ExitStatus) -> WgStatus {
    match s {
        ExitStatus::Success => WgStatus::Ok,
        ExitStatus::ConfigError => WgStatus::Config,
        ExitStatus::SerrinViolation => WgStatus::Serrin,
        ExitStatus::ContinuationFailure => WgStatus::Continuation,
        ExitStatus::DiagnosticsFailure => WgStatus::Diagnostics,
        ExitStatus::IoError => WgStatus::Io,
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, WgStatus> {
    if p.is_null() {
        return Err(fail(WgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(WgStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Process exit code used by the command-line tool for `status`.
#[no_mangle]
pub extern "C" fn wg_status_exit_code(status: WgStatus) -> i32 {
    match status {
        WgStatus::Ok => 0,
        WgStatus::Config | WgStatus::Psi | WgStatus::InvalidArgument | WgStatus::NullPointer => 2,
        WgStatus::Serrin => 3,
        WgStatus::Continuation => 4,
        WgStatus::Diagnostics => 5,
        WgStatus::Io => 6,
        WgStatus::BufferTooSmall | WgStatus::Panic => 1,
    }
}

/// Parses a TOML configuration held in `text`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn wg_config_from_toml(text: *const c_char, out: *mut *mut WgConfig) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return fail(WgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let src = match str_arg(text, "text") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match cli_io::parse_config(src) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(WgConfig { inner: c }));
                WgStatus::Ok
            }
            Err(e) => fail(WgStatus::Config, e.to_string()),
        }
    })
}

/// Reads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn wg_config_load(path: *const c_char, out: *mut *mut WgConfig) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return fail(WgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let p = match str_arg(path, "path") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match cli_io::load_config(&PathBuf::from(p)) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(WgConfig { inner: c }));
                WgStatus::Ok
            }
            Err(e) => fail(WgStatus::Config, e.to_string()),
        }
    })
}

/// Overrides the grid resolution.
///
/// # Safety
/// `config` must come from `wg_config_from_toml` or `wg_config_load`.
#[no_mangle]
pub unsafe extern "C" fn wg_config_set_grid(config: *mut WgConfig, rings: usize, sectors: usize) -> WgStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(WgStatus::NullPointer, "config is null");
        };
        let mut next = c.inner.clone();
        next.rings = rings;
        next.sectors = sectors;
        match next.validate() {
            Ok(()) => {
                c.inner = next;
                WgStatus::Ok
            }
            Err(e) => fail(WgStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `config` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wg_config_free(config: *mut WgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the solver without writing files. On continuation or diagnostics
/// failure `out` still receives the last state and the status says why.
///
/// # Safety
/// `config` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn wg_solve(config: *const WgConfig, out: *mut *mut WgSolution) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return fail(WgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(c) = config.as_ref() else {
            return fail(WgStatus::NullPointer, "config is null");
        };
        let mut cfg = c.inner.clone();
        let o = &mut cfg.output;
        (o.csv, o.obj, o.vtk, o.history, o.report) = (false, false, false, false, false);
        let RunOutcome { status, report, state, residual, .. } = cli_io::run(&cfg);
        let status = from_exit(status);
        if status != WgStatus::Ok {
            set_error(report.message.clone());
        }
        if let Some(state) = state {
            *out = Box::into_raw(Box::new(WgSolution {
                config: cfg,
                state,
                residual: residual.unwrap_or_default(),
                status,
            }));
        }
        status
    })
}

/// # Safety
/// `solution` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_free(solution: *mut WgSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of grid nodes, or 0 for NULL.
///
/// # Safety
/// `solution` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_node_count(solution: *const WgSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.state.grid().len())
}

/// Status of the run that produced `solution`.
///
/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_status(solution: *const WgSolution) -> WgStatus {
    solution.as_ref().map_or(WgStatus::NullPointer, |s| s.status)
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> WgStatus {
    if buf.is_null() {
        return fail(WgStatus::NullPointer, "buffer is null");
    }
    if len < src.len() {
        return fail(WgStatus::BufferTooSmall, format!("need {} values, got {len}", src.len()));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    WgStatus::Ok
}

/// Copies `u = 1 / rho` per node into `buf` (at least node-count values).
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_copy_u(solution: *const WgSolution, buf: *mut f64, len: usize) -> WgStatus {
    guard(|| {
        let Some(s) = solution.as_ref() else {
            return fail(WgStatus::NullPointer, "solution is null");
        };
        copy_out(&s.state.u_values(), buf, len)
    })
}

/// Copies embedded vertices as `x0 y0 z0 x1 ...` (three per node).
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_copy_vertices(solution: *const WgSolution, buf: *mut f64, len: usize) -> WgStatus {
    guard(|| {
        let Some(s) = solution.as_ref() else {
            return fail(WgStatus::NullPointer, "solution is null");
        };
        let flat: Vec<f64> = s.state.points().iter().flat_map(|p| p.position).collect();
        copy_out(&flat, buf, len)
    })
}

/// Max-norm of the target residual at the returned state.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_residual(solution: *const WgSolution, out: *mut f64) -> WgStatus {
    guard(|| {
        let Some(s) = solution.as_ref() else {
            return fail(WgStatus::NullPointer, "solution is null");
        };
        if out.is_null() {
            return fail(WgStatus::NullPointer, "out is null");
        }
        *out = if s.residual.is_empty() { f64::NAN } else { max_norm(&s.residual) };
        WgStatus::Ok
    })
}

/// Writes the embedded mesh as OBJ or legacy VTK.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wg_solution_export(
    solution: *const WgSolution,
    path: *const c_char,
    format: WgMeshFormat,
) -> WgStatus {
    guard(|| {
        let Some(s) = solution.as_ref() else {
            return fail(WgStatus::NullPointer, "solution is null");
        };
        let p = match str_arg(path, "path") {
            Ok(p) => p,
            Err(e) => return e,
        };
        let fmt = match format {
            WgMeshFormat::Obj => MeshFormat::Obj,
            WgMeshFormat::Vtk => MeshFormat::Vtk,
        };
        match cli_io::export_mesh(&s.state, &s.config.psi(), s.config.k, fmt, &PathBuf::from(p)) {
            Ok(()) => WgStatus::Ok,
            Err(e) => fail(WgStatus::Io, e.to_string()),
        }
    })
}

/// Parses a curvature expression in `nx`, `ny`, `nz`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn wg_psi_parse(text: *const c_char, out: *mut *mut WgPsi) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return fail(WgStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let src = match str_arg(text, "text") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match src.parse::<PsiExpr>() {
            Ok(p) => {
                *out = Box::into_raw(Box::new(WgPsi { inner: p }));
                WgStatus::Ok
            }
            Err(e) => fail(WgStatus::Psi, e.to_string()),
        }
    })
}

/// Evaluates `psi` at the point `n[0..3]`.
///
/// # Safety
/// `n` must point to three readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn wg_psi_eval(psi: *const WgPsi, n: *const f64, out: *mut f64) -> WgStatus {
    guard(|| {
        let Some(p) = psi.as_ref() else {
            return fail(WgStatus::NullPointer, "psi is null");
        };
        if n.is_null() || out.is_null() {
            return fail(WgStatus::NullPointer, "n or out is null");
        }
        let x = [*n, *n.add(1), *n.add(2)];
        *out = p.inner.value(x);
        WgStatus::Ok
    })
}

/// # Safety
/// `psi` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wg_psi_free(psi: *mut WgPsi) {
    if !psi.is_null() {
        drop(Box::from_raw(psi));
    }
}

/// Normalized elementary symmetric function `S_k` of `values[0..n]`.
///
/// # Safety
/// `values` must point to `n` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn wg_elem_sym_norm(values: *const f64, n: usize, k: usize, out: *mut f64) -> WgStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return fail(WgStatus::NullPointer, "values or out is null");
        }
        let v = std::slice::from_raw_parts(values, n).to_vec();
        let r = PrincipalTuple::new(v).and_then(|t| elem_sym_norm(&t, k));
        match r {
            Ok(x) => {
                *out = x;
                WgStatus::Ok
            }
            Err(e) => fail(WgStatus::InvalidArgument, e.to_string()),
        }
    })
}
