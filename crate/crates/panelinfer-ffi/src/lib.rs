//! C ABI over the core library: opaque handles, integer status codes, and a
//! thread-local last-error message. Every entry point catches panics, so no
//! unwinding crosses the boundary.
//!
//! Ownership: constructors hand out `*mut` handles that the caller must
//! release with the matching `_free`; accessors never take ownership.
//! Strings returned by [`pi_last_error`] stay valid until the next failing
//! call on the same thread.

use panelinfer_core::error::Error;
use panelinfer_core::homogeneity::{test_homogeneity, TestReport};
use panelinfer_core::kernel::{default_bandwidth, KernelFamily, KernelSpec};
use panelinfer_core::panel::Panel;
use nalgebra::DMatrix;
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiStatus {
    PiOk = 0,
    PiNullArg = 1,
    PiParseError = 2,
    PiInvalidInput = 3,
    PiNumerical = 4,
    PiUtf8 = 5,
    PiIo = 6,
    PiInternal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> PiStatus {
    match err.root() {
        Error::Parse { .. } => PiStatus::PiParseError,
        Error::Input(_) | Error::Spec(_) => PiStatus::PiInvalidInput,
        Error::Numerical(_) => PiStatus::PiNumerical,
        Error::Io(_) => PiStatus::PiIo,
        Error::Stage { .. } => PiStatus::PiInternal,
    }
}

fn fail(err: &Error) -> PiStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Runs a body, translating panics into `PiInternal`.
fn guarded<F: FnOnce() -> PiStatus>(body: F) -> PiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            PiStatus::PiInternal
        }
    }
}

/// Opaque panel handle.
pub struct PiPanel(Panel);

/// Opaque test-report handle; remembers the level the decision refers to.
pub struct PiReport {
    report: TestReport,
    level: f64,
}

/// Message for the most recent failure on this thread. Never null; empty
/// before any failure. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a long-format CSV (header `unit,time,value`) into a panel.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_panel_read_long_csv(
    path: *const c_char,
    out: *mut *mut PiPanel,
) -> PiStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return PiStatus::PiUtf8;
            }
        };
        let text = match std::fs::read_to_string(Path::new(path)) {
            Ok(t) => t,
            Err(e) => {
                set_error(&e.to_string());
                return PiStatus::PiIo;
            }
        };
        match Panel::read_long_csv(text.as_bytes()) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(PiPanel(p))) };
                PiStatus::PiOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Builds a balanced panel from a dense row-major N x T array.
///
/// # Safety
/// `values` must point to `n_units * n_times` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pi_panel_from_dense(
    values: *const c_double,
    n_units: usize,
    n_times: usize,
    out: *mut *mut PiPanel,
) -> PiStatus {
    guarded(|| {
        if values.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        let data = unsafe { std::slice::from_raw_parts(values, n_units * n_times) };
        let m = DMatrix::from_row_slice(n_units, n_times, data);
        match Panel::from_matrix(m) {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(PiPanel(p))) };
                PiStatus::PiOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a panel handle. Null is a no-op.
///
/// # Safety
/// `p` must have come from a `pi_panel_*` constructor and not been freed.
#[no_mangle]
pub unsafe extern "C" fn pi_panel_free(p: *mut PiPanel) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// # Safety
/// `p` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_panel_n_units(p: *const PiPanel, out: *mut usize) -> PiStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        unsafe { *out = (*p).0.n_units() };
        PiStatus::PiOk
    })
}

/// # Safety
/// `p` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_panel_n_times(p: *const PiPanel, out: *mut usize) -> PiStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        unsafe { *out = (*p).0.n_times() };
        PiStatus::PiOk
    })
}

/// Max-type statistic for equality of unit means.
///
/// # Safety
/// `p` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_q_statistic(p: *const PiPanel, out: *mut c_double) -> PiStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        match panelinfer_core::homogeneity::q_statistic(&unsafe { &*p }.0) {
            Ok(v) => {
                unsafe { *out = v };
                PiStatus::PiOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the bootstrap homogeneity test with a Bartlett kernel.
/// `bandwidth == 0` selects the default floor(1.75 T^(1/3)).
///
/// # Safety
/// `p` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_test_homogeneity(
    p: *const PiPanel,
    bandwidth: usize,
    reps: usize,
    level: c_double,
    seed: u64,
    out: *mut *mut PiReport,
) -> PiStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        let panel = &unsafe { &*p }.0;
        let m = if bandwidth == 0 {
            default_bandwidth(panel.n_times())
        } else {
            bandwidth
        };
        let spec = match KernelSpec::new(KernelFamily::Bartlett, m) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match test_homogeneity(panel, &spec, reps, &[level], seed) {
            Ok(report) => {
                unsafe { *out = Box::into_raw(Box::new(PiReport { report, level })) };
                PiStatus::PiOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `r` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_report_statistic(r: *const PiReport, out: *mut c_double) -> PiStatus {
    guarded(|| {
        if r.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        unsafe { *out = (*r).report.statistic };
        PiStatus::PiOk
    })
}

/// # Safety
/// `r` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_report_p_value(r: *const PiReport, out: *mut c_double) -> PiStatus {
    guarded(|| {
        if r.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        unsafe { *out = (*r).report.p_value };
        PiStatus::PiOk
    })
}

/// Decision at the level the test was run with: 1 = reject, 0 = keep.
///
/// # Safety
/// `r` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pi_report_decision(r: *const PiReport, out: *mut c_int) -> PiStatus {
    guarded(|| {
        if r.is_null() || out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        let pi = unsafe { &*r };
        match pi.report.decision(pi.level) {
            Some(d) => {
                unsafe { *out = if d { 1 } else { 0 } };
                PiStatus::PiOk
            }
            None => {
                set_error("level not among the report's critical values");
                PiStatus::PiInvalidInput
            }
        }
    })
}

/// Releases a report handle. Null is a no-op.
///
/// # Safety
/// `r` must have come from `pi_test_homogeneity` and not been freed.
#[no_mangle]
pub unsafe extern "C" fn pi_report_free(r: *mut PiReport) {
    if !r.is_null() {
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Exact grouping of `n` means into `j` groups by smallest within-group sum
/// of squares. Writes `n` group labels (0-based, sorted by group center)
/// and `j` centers.
///
/// # Safety
/// `means` must hold `n` doubles, `assignments_out` room for `n` usizes,
/// `centers_out` room for `j` doubles.
#[no_mangle]
pub unsafe extern "C" fn pi_group_means(
    means: *const c_double,
    n: usize,
    j: usize,
    assignments_out: *mut usize,
    centers_out: *mut c_double,
) -> PiStatus {
    guarded(|| {
        if means.is_null() || assignments_out.is_null() || centers_out.is_null() {
            set_error("null argument");
            return PiStatus::PiNullArg;
        }
        let xs = unsafe { std::slice::from_raw_parts(means, n) };
        match panelinfer_core::grouping::group_fixed_j(xs, j, 1, 0) {
            Ok(res) => {
                unsafe {
                    std::ptr::copy_nonoverlapping(res.assignments.as_ptr(), assignments_out, n);
                    std::ptr::copy_nonoverlapping(res.centers.as_ptr(), centers_out, j);
                }
                PiStatus::PiOk
            }
            Err(e) => fail(&e),
        }
    })
}
