//! C ABI over `kinv-core`.
//!
//! Every entry point returns a [`KinvStatus`]; on failure the message is
//! available from [`kinv_last_error`] on the same thread. Objects are opaque
//! handles owned by the caller and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kinv_core::inverse::{solve_inverse, InverseResult};
use kinv_core::nonlinear::solve_nonlinear_forward;
use kinv_core::{GridFunction2, GridFunction3, KinvError, ProblemConfig, ProblemSpec};

/// Result codes. The nonzero values match the exit codes of the `kinv` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinvStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or a too-small buffer.
    InvalidArgument = 1,
    Validation = 2,
    Solver = 3,
    Io = 4,
    Panic = 5,
}

/// A loaded and validated problem.
pub struct KinvProblem {
    spec: ProblemSpec,
}

/// A dense field of rank 2 (`[Nx][Nv]`) or 3 (`[Nt + 1][Nx][Nv]`).
pub struct KinvField {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Outcome of an inverse solve.
pub struct KinvInverse {
    result: InverseResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: KinvError) -> KinvStatus {
    let status = match e.exit_code() {
        2 => KinvStatus::Validation,
        4 => KinvStatus::Io,
        _ => KinvStatus::Solver,
    };
    set_error(e.to_string());
    status
}

fn invalid(msg: &str) -> KinvStatus {
    set_error(msg.to_string());
    KinvStatus::InvalidArgument
}

fn guard(f: impl FnOnce() -> KinvStatus) -> KinvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            KinvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, KinvStatus> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn field3(u: GridFunction3) -> KinvField {
    let g = u.grid();
    let shape = vec![g.nt() + 1, g.nx(), g.nv()];
    KinvField {
        shape,
        values: u.into_values(),
    }
}

fn field2(u: GridFunction2) -> KinvField {
    let shape = vec![u.grid().nx(), u.grid().nv()];
    KinvField {
        shape,
        values: u.into_values(),
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kinv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn kinv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a JSON config file. Relative paths inside it resolve against its
/// directory. With `strict`, validation warnings are errors too.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kinv_problem_load(path: *const c_char, strict: bool, out: *mut *mut KinvProblem) -> KinvStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ProblemSpec::load(path).and_then(|spec| spec.ensure_valid(strict).map(|_| spec)) {
            Ok(spec) => {
                emit(out, KinvProblem { spec });
                KinvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Builds a problem from JSON text. `base_dir` may be null (current directory).
///
/// # Safety
/// `json` and a non-null `base_dir` must be nul-terminated strings and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kinv_problem_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    strict: bool,
    out: *mut *mut KinvProblem,
) -> KinvStatus {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        let text = match str_arg(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            "."
        } else {
            match str_arg(base_dir, "base_dir") {
                Ok(b) => b,
                Err(s) => return s,
            }
        };
        let built = ProblemConfig::from_json(text).and_then(|c| {
            let strict = strict || c.strict;
            let spec = ProblemSpec::from_config(c, Path::new(base))?;
            spec.ensure_valid(strict)?;
            Ok(spec)
        });
        match built {
            Ok(spec) => {
                emit(out, KinvProblem { spec });
                KinvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `problem` must come from a `kinv_problem_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn kinv_problem_free(problem: *mut KinvProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Grid sizes of a problem.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kinv_problem_dims(
    problem: *const KinvProblem,
    nx: *mut usize,
    nv: *mut usize,
    nt: *mut usize,
) -> KinvStatus {
    if problem.is_null() || nx.is_null() || nv.is_null() || nt.is_null() {
        return invalid("null argument");
    }
    let g = &(*problem).spec.grid;
    *nx = g.nx();
    *nv = g.nv();
    *nt = g.nt();
    KinvStatus::Ok
}

/// Solves the direct problem with the configured source; `out` receives the
/// rank-3 solution.
///
/// # Safety
/// `problem` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kinv_forward(problem: *const KinvProblem, out: *mut *mut KinvField) -> KinvStatus {
    guard(|| {
        if problem.is_null() || out.is_null() {
            return invalid("null argument");
        }
        let spec = &(*problem).spec;
        match solve_nonlinear_forward(spec, &spec.source) {
            Ok((u, _)) => {
                emit(out, field3(u));
                KinvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Solves the inverse problem of an inverse-mode config for its `psi`.
///
/// # Safety
/// `problem` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kinv_inverse(problem: *const KinvProblem, out: *mut *mut KinvInverse) -> KinvStatus {
    guard(|| {
        if problem.is_null() || out.is_null() {
            return invalid("null argument");
        }
        let spec = &(*problem).spec;
        let Some(psi) = spec.psi.as_ref() else {
            return fail(KinvError::Config("psi required".into()));
        };
        match solve_inverse(spec, psi) {
            Ok(result) => {
                emit(out, KinvInverse { result });
                KinvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `inverse` must come from [`kinv_inverse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn kinv_inverse_free(inverse: *mut KinvInverse) {
    if !inverse.is_null() {
        drop(Box::from_raw(inverse));
    }
}

/// Recovered control `f` or `sigma` as a rank-2 field.
///
/// # Safety
/// `inverse` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kinv_inverse_control(inverse: *const KinvInverse, out: *mut *mut KinvField) -> KinvStatus {
    if inverse.is_null() || out.is_null() {
        return invalid("null argument");
    }
    emit(out, field2((*inverse).result.control.clone()));
    KinvStatus::Ok
}

/// Final forward state as a rank-3 field.
///
/// # Safety
/// `inverse` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kinv_inverse_state(inverse: *const KinvInverse, out: *mut *mut KinvField) -> KinvStatus {
    if inverse.is_null() || out.is_null() {
        return invalid("null argument");
    }
    emit(out, field3((*inverse).result.state.clone()));
    KinvStatus::Ok
}

/// Newton steps taken and the final residual `‖M(χ) − ψ‖_∞`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kinv_inverse_stats(
    inverse: *const KinvInverse,
    iterations: *mut usize,
    residual: *mut f64,
) -> KinvStatus {
    if inverse.is_null() || iterations.is_null() || residual.is_null() {
        return invalid("null argument");
    }
    let report = &(*inverse).result.report;
    *iterations = report.iterations;
    *residual = report.final_residual();
    KinvStatus::Ok
}

/// # Safety
/// `field` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn kinv_field_free(field: *mut KinvField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Rank (2 or 3) and shape; `shape` must hold 3 entries, unused ones are 0.
///
/// # Safety
/// `field` and `rank` must be valid; `shape` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn kinv_field_shape(field: *const KinvField, rank: *mut usize, shape: *mut usize) -> KinvStatus {
    if field.is_null() || rank.is_null() || shape.is_null() {
        return invalid("null argument");
    }
    let f = &*field;
    *rank = f.shape.len();
    for d in 0..3 {
        *shape.add(d) = f.shape.get(d).copied().unwrap_or(0);
    }
    KinvStatus::Ok
}

/// Number of values in the field.
///
/// # Safety
/// `field` must be a valid pointer or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn kinv_field_len(field: *const KinvField) -> usize {
    if field.is_null() {
        0
    } else {
        (*field).values.len()
    }
}

/// Copies the values in row-major order into `buf`, which holds `len`
/// doubles; fails if `len` is smaller than [`kinv_field_len`].
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kinv_field_copy(field: *const KinvField, buf: *mut f64, len: usize) -> KinvStatus {
    if field.is_null() || buf.is_null() {
        return invalid("null argument");
    }
    let v = &(*field).values;
    if len < v.len() {
        return invalid(&format!("buffer holds {len} values, field has {}", v.len()));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
    KinvStatus::Ok
}
