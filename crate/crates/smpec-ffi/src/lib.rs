//! C ABI for the smpec toolkit.
//!
//! Problems and runs are opaque heap handles created by `smpec_*_new` /
//! `smpec_run` and released with the matching `*_free`. Every fallible call
//! returns an [`SmpecStatus`]; the message of the most recent failure on the
//! calling thread is available through [`smpec_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use smpec::baselines::{saa_solve, SaaConfig};
use smpec::problems::{build_problem, validation_tokens, ProblemParams, DEFAULT_VALIDATION_SEED};
use smpec::zsol::{self, BatchRule, Counters, LowerMode, RunTrace, Schedule};
use smpec::SmpecError;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmpecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    LowerLevel = 5,
    Stalled = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmpecSolver {
    ZsolConvex = 0,
    ZsolNonconvex = 1,
    ZsolAcc = 2,
    Saa = 3,
}

/// Plain-data schedule. `lower_alpha <= 0` selects the default lower step,
/// `batch == 0` the growing batch `k+1`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmpecSchedule {
    pub gamma0: f64,
    pub a: f64,
    pub eta0: f64,
    pub b: f64,
    pub r: f64,
    pub tau: f64,
    pub rho: f64,
    pub m0: f64,
    pub lambda: f64,
    pub delta: f64,
    pub lower_alpha: f64,
    pub iters: u64,
    pub batch: u64,
    pub relax_step_bound: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmpecCounters {
    pub upper_projections: u64,
    pub upper_samples: u64,
    pub lower_solves: u64,
    pub lower_projections: u64,
    pub lower_samples: u64,
}

/// Opaque problem handle.
pub struct SmpecProblem {
    inner: smpec::problems::SmpecProblem,
}

/// Opaque result of one solver run.
pub struct SmpecRun {
    trace: RunTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SmpecError) -> SmpecStatus {
    match e {
        SmpecError::Argument(_) => SmpecStatus::InvalidArgument,
        SmpecError::Numerical { .. } => SmpecStatus::Numerical,
        SmpecError::Lower { .. } => SmpecStatus::LowerLevel,
        SmpecError::Config(_) => SmpecStatus::Config,
        SmpecError::Stall(_) => SmpecStatus::Stalled,
    }
}

fn fail(status: SmpecStatus, msg: impl Into<String>) -> SmpecStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SmpecStatus>) -> SmpecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmpecStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SmpecStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: smpec::Result<T>) -> Result<T, SmpecStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, SmpecStatus> {
    if p.is_null() {
        return Err(fail(SmpecStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SmpecStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SmpecStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SmpecStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SmpecStatus> {
    p.as_mut().ok_or_else(|| fail(SmpecStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, SmpecStatus> {
    p.as_ref().ok_or_else(|| fail(SmpecStatus::NullPointer, format!("{what} is null")))
}

fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), SmpecStatus> {
    if len < src.len() {
        return Err(fail(
            SmpecStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if dst.is_null() {
        return Err(fail(SmpecStatus::NullPointer, "output buffer is null"));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smpec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length without the NUL.
/// Returns 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn smpec_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds a registry problem (`"cournot2s"`, `"bard"`, `"p1"`, ...) with
/// `n_params` overrides given as parallel key/value arrays.
///
/// # Safety
/// `id` and every key must be NUL-terminated strings; `keys` and `values`
/// must hold `n_params` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smpec_problem_new(
    id: *const c_char,
    keys: *const *const c_char,
    values: *const f64,
    n_params: usize,
    out: *mut *mut SmpecProblem,
) -> SmpecStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let id = c_str(id, "problem id")?;
        let keys = slice(keys, n_params, "keys")?;
        let values = slice(values, n_params, "values")?;
        let mut params = ProblemParams::new();
        for (k, v) in keys.iter().zip(values) {
            params.insert(c_str(*k, "parameter key")?.to_string(), *v);
        }
        let inner = lift(build_problem(id, &params))?;
        *out = Box::into_raw(Box::new(SmpecProblem { inner }));
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle from [`smpec_problem_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smpec_problem_free(problem: *mut SmpecProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Dimension of the upper-level variable (0 for a null handle).
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smpec_problem_dim_x(problem: *const SmpecProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.dim_x)
}

/// Reference optimum in the problem's reported sign convention.
///
/// # Safety
/// `problem` must be a live handle, `x` must hold `len` doubles, `f` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smpec_problem_optimum(
    problem: *const SmpecProblem,
    x: *mut f64,
    len: usize,
    f: *mut f64,
) -> SmpecStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.inner;
        let f = out_ref(f, "f")?;
        let o = p
            .optimum
            .as_ref()
            .ok_or_else(|| fail(SmpecStatus::InvalidArgument, format!("{} has no reference optimum", p.id)))?;
        copy_out(&o.x_star, x, len)?;
        *f = p.reported(o.f_star);
        Ok(())
    })
}

/// Expected objective at `x` (reported sign), using the closed form when the
/// problem has one and otherwise `validation_size` fixed validation draws.
///
/// # Safety
/// `problem` must be a live handle, `x` must hold `len` doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smpec_expected_value(
    problem: *const SmpecProblem,
    x: *const f64,
    len: usize,
    validation_size: u64,
    out: *mut f64,
) -> SmpecStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.inner;
        let out = out_ref(out, "out")?;
        let x = slice(x, len, "x")?;
        if x.len() != p.dim_x {
            return Err(fail(SmpecStatus::InvalidArgument, format!("x has {} entries, expected {}", x.len(), p.dim_x)));
        }
        let tokens = if p.expected_value.is_some() || p.omega.dim() == 0 {
            Vec::new()
        } else {
            validation_tokens(p, validation_size.max(1) as usize, DEFAULT_VALIDATION_SEED)
        };
        *out = p.reported(lift(smpec::problems::expected_value(p, x, &tokens))?);
        Ok(())
    })
}

/// Writes the library default schedule into `out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn smpec_schedule_default(out: *mut SmpecSchedule) -> SmpecStatus {
    guard(|| {
        let s = Schedule::default();
        *out_ref(out, "out")? = SmpecSchedule {
            gamma0: s.gamma0,
            a: s.a,
            eta0: s.eta0,
            b: s.b,
            r: s.r,
            tau: s.tau,
            rho: s.rho,
            m0: s.m0,
            lambda: s.lambda,
            delta: s.delta,
            lower_alpha: 0.0,
            iters: s.iters as u64,
            batch: 0,
            relax_step_bound: s.relax_step_bound,
        };
        Ok(())
    })
}

fn to_schedule(s: &SmpecSchedule) -> Schedule {
    Schedule {
        gamma0: s.gamma0,
        a: s.a,
        eta0: s.eta0,
        b: s.b,
        r: s.r,
        tau: s.tau,
        rho: s.rho,
        m0: s.m0,
        lambda: s.lambda,
        delta: s.delta,
        lower_alpha: (s.lower_alpha > 0.0).then_some(s.lower_alpha),
        iters: s.iters as usize,
        batch: if s.batch == 0 { BatchRule::Linear } else { BatchRule::Constant(s.batch as usize) },
        relax_step_bound: s.relax_step_bound,
        ..Schedule::default()
    }
}

/// Runs one seeded solve. `exact_lower` selects exact lower-level solves;
/// the accelerated scheme and SAA always solve exactly.
///
/// # Safety
/// `problem` must be a live handle, `schedule` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smpec_run(
    problem: *const SmpecProblem,
    solver: SmpecSolver,
    exact_lower: bool,
    schedule: *const SmpecSchedule,
    seed: u64,
    out: *mut *mut SmpecRun,
) -> SmpecStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let p = &handle(problem, "problem")?.inner;
        let sched = to_schedule(handle(schedule, "schedule")?);
        let mode = if exact_lower { LowerMode::Exact } else { LowerMode::Inexact };
        let trace = match solver {
            SmpecSolver::ZsolConvex => lift(zsol::run_convex(p, &sched, mode, seed))?,
            SmpecSolver::ZsolNonconvex => lift(zsol::run_nonconvex(p, &sched, mode, seed))?,
            SmpecSolver::ZsolAcc => lift(zsol::run_accelerated(p, &sched, seed))?,
            SmpecSolver::Saa => {
                let r = lift(saa_solve(p, &SaaConfig::default(), seed))?;
                RunTrace {
                    iterates: None,
                    output: r.x_hat,
                    r_index: None,
                    counters: Counters::default(),
                    wall_time: r.wall_time,
                    seed,
                }
            }
        };
        *out = Box::into_raw(Box::new(SmpecRun { trace }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from [`smpec_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smpec_run_free(run: *mut SmpecRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Copies the returned point (averaged iterate, `x_R` or `z_K`).
///
/// # Safety
/// `run` must be a live handle and `x` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn smpec_run_output(run: *const SmpecRun, x: *mut f64, len: usize) -> SmpecStatus {
    guard(|| copy_out(&handle(run, "run")?.trace.output, x, len))
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smpec_run_counters(run: *const SmpecRun, out: *mut SmpecCounters) -> SmpecStatus {
    guard(|| {
        let c = &handle(run, "run")?.trace.counters;
        *out_ref(out, "out")? = SmpecCounters {
            upper_projections: c.upper_projections,
            upper_samples: c.upper_samples,
            lower_solves: c.lower_solves,
            lower_projections: c.lower_projections,
            lower_samples: c.lower_samples,
        };
        Ok(())
    })
}

/// Solver wall time in seconds (negative for a null handle).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smpec_run_wall_time(run: *const SmpecRun) -> f64 {
    run.as_ref().map_or(-1.0, |r| r.trace.wall_time)
}
