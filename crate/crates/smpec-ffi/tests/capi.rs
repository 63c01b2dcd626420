use std::ffi::{c_char, CStr, CString};
use std::ptr;

use smpec_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { smpec_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn problem(id: &str, params: &[(&str, f64)]) -> Result<*mut SmpecProblem, SmpecStatus> {
    let id = CString::new(id).unwrap();
    let keys: Vec<CString> = params.iter().map(|(k, _)| CString::new(*k).unwrap()).collect();
    let kp: Vec<*const c_char> = keys.iter().map(|k| k.as_ptr()).collect();
    let vals: Vec<f64> = params.iter().map(|(_, v)| *v).collect();
    let mut out = ptr::null_mut();
    let s = unsafe { smpec_problem_new(id.as_ptr(), kp.as_ptr(), vals.as_ptr(), params.len(), &mut out) };
    if s == SmpecStatus::Ok {
        Ok(out)
    } else {
        assert!(out.is_null());
        Err(s)
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(smpec_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn unknown_problem_is_config_error() {
    assert_eq!(problem("nope", &[]), Err(SmpecStatus::Config));
    assert!(last_error().contains("nope"));
}

#[test]
fn null_arguments() {
    let mut out = ptr::null_mut();
    let s = unsafe { smpec_problem_new(ptr::null(), ptr::null(), ptr::null(), 0, &mut out) };
    assert_eq!(s, SmpecStatus::NullPointer);
    let s = unsafe { smpec_run_output(ptr::null(), ptr::null_mut(), 0) };
    assert_eq!(s, SmpecStatus::NullPointer);
    assert_eq!(unsafe { smpec_problem_dim_x(ptr::null()) }, 0);
    assert!(unsafe { smpec_run_wall_time(ptr::null()) } < 0.0);
    unsafe {
        smpec_problem_free(ptr::null_mut());
        smpec_run_free(ptr::null_mut());
    }
}

#[test]
fn optimum_and_expected_value_agree() {
    let p = problem("cournot2s", &[("N", 10.0)]).unwrap();
    let n = unsafe { smpec_problem_dim_x(p) };
    assert_eq!(n, 1);
    let mut x = [0.0; 1];
    let mut f = 0.0;
    assert_eq!(unsafe { smpec_problem_optimum(p, x.as_mut_ptr(), 1, &mut f) }, SmpecStatus::Ok);
    let mut v = 0.0;
    assert_eq!(unsafe { smpec_expected_value(p, x.as_ptr(), 1, 1000, &mut v) }, SmpecStatus::Ok);
    assert!((v - f).abs() < 1e-9 * (1.0 + f.abs()), "{v} vs {f}");
    let s = unsafe { smpec_problem_optimum(p, x.as_mut_ptr(), 0, &mut f) };
    assert_eq!(s, SmpecStatus::BufferTooSmall);
    let s = unsafe { smpec_expected_value(p, x.as_ptr(), 0, 10, &mut v) };
    assert_eq!(s, SmpecStatus::InvalidArgument);
    unsafe { smpec_problem_free(p) };
}

#[test]
fn convex_run_is_seed_deterministic() {
    let p = problem("cournot2s", &[("N", 10.0)]).unwrap();
    let mut sched = unsafe { std::mem::zeroed::<SmpecSchedule>() };
    assert_eq!(unsafe { smpec_schedule_default(&mut sched) }, SmpecStatus::Ok);
    sched.iters = 200;
    let mut xs = Vec::new();
    for _ in 0..2 {
        let mut run = ptr::null_mut();
        let s = unsafe { smpec_run(p, SmpecSolver::ZsolConvex, true, &sched, 5, &mut run) };
        assert_eq!(s, SmpecStatus::Ok);
        let mut x = [0.0; 1];
        assert_eq!(unsafe { smpec_run_output(run, x.as_mut_ptr(), 1) }, SmpecStatus::Ok);
        let mut c = SmpecCounters::default();
        assert_eq!(unsafe { smpec_run_counters(run, &mut c) }, SmpecStatus::Ok);
        assert_eq!(c.upper_projections, 200);
        assert!(unsafe { smpec_run_wall_time(run) } >= 0.0);
        xs.push(x[0]);
        unsafe { smpec_run_free(run) };
    }
    assert_eq!(xs[0], xs[1]);
    unsafe { smpec_problem_free(p) };
}

#[test]
fn invalid_schedule_reports_message() {
    let p = problem("cournot2s", &[]).unwrap();
    let mut sched = unsafe { std::mem::zeroed::<SmpecSchedule>() };
    unsafe { smpec_schedule_default(&mut sched) };
    sched.gamma0 = -1.0;
    let mut run = ptr::null_mut();
    let s = unsafe { smpec_run(p, SmpecSolver::ZsolConvex, true, &sched, 0, &mut run) };
    assert_ne!(s, SmpecStatus::Ok);
    assert!(run.is_null());
    assert!(!last_error().is_empty());
    unsafe { smpec_problem_free(p) };
}

#[test]
fn truncated_error_buffer() {
    let _ = problem("definitely-not-a-problem", &[]);
    let mut buf = [0 as c_char; 4];
    let n = unsafe { smpec_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn header_declares_entry_points() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/smpec.h")).unwrap();
    for f in [
        "smpec_problem_new",
        "smpec_problem_free",
        "smpec_run",
        "smpec_run_output",
        "smpec_run_counters",
        "smpec_run_free",
        "smpec_last_error_message",
        "typedef struct SmpecProblem SmpecProblem",
    ] {
        assert!(h.contains(f), "{f} missing from header");
    }
}
