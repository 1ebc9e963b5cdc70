//! Exercises the C ABI the way a foreign caller would: through raw pointers
//! and status codes, including the error paths.

use panelinfer_ffi::*;
use std::ffi::{c_double, c_int, CStr, CString};
use std::ptr;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pi_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn dense_panel(values: &[f64], n: usize, t: usize) -> *mut PiPanel {
    let mut p: *mut PiPanel = ptr::null_mut();
    let status = unsafe { pi_panel_from_dense(values.as_ptr(), n, t, &mut p) };
    assert_eq!(status, PiStatus::PiOk, "{}", last_error());
    assert!(!p.is_null());
    p
}

#[test]
fn dense_panel_round_trip_and_test() {
    // Two flat units and one shifted unit: the test must reject.
    let n = 3;
    let t = 40;
    let mut values = Vec::with_capacity(n * t);
    for i in 0..n {
        for s in 0..t {
            let noise = ((i * 31 + s * 17) % 13) as f64 / 13.0 - 0.5;
            values.push(if i == 2 { 6.0 + noise } else { noise });
        }
    }
    let p = dense_panel(&values, n, t);

    let mut nu = 0usize;
    let mut nt = 0usize;
    unsafe {
        assert_eq!(pi_panel_n_units(p, &mut nu), PiStatus::PiOk);
        assert_eq!(pi_panel_n_times(p, &mut nt), PiStatus::PiOk);
    }
    assert_eq!((nu, nt), (n, t));

    let mut q: c_double = 0.0;
    assert_eq!(unsafe { pi_q_statistic(p, &mut q) }, PiStatus::PiOk);
    assert!(q > 1.0, "statistic {q} too small for a planted shift");

    let mut r: *mut PiReport = ptr::null_mut();
    let status = unsafe { pi_test_homogeneity(p, 0, 199, 0.95, 7, &mut r) };
    assert_eq!(status, PiStatus::PiOk, "{}", last_error());

    let mut stat: c_double = 0.0;
    let mut pv: c_double = 1.0;
    let mut dec: c_int = 0;
    unsafe {
        assert_eq!(pi_report_statistic(r, &mut stat), PiStatus::PiOk);
        assert_eq!(pi_report_p_value(r, &mut pv), PiStatus::PiOk);
        assert_eq!(pi_report_decision(r, &mut dec), PiStatus::PiOk);
    }
    assert_eq!(stat, q);
    assert!(pv < 0.05, "p-value {pv}");
    assert_eq!(dec, 1);

    unsafe {
        pi_report_free(r);
        pi_panel_free(p);
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut out: *mut PiPanel = ptr::null_mut();
    let status = unsafe { pi_panel_read_long_csv(ptr::null(), &mut out) };
    assert_eq!(status, PiStatus::PiNullArg);
    assert!(!last_error().is_empty());

    let values = [1.0, 2.0];
    let status = unsafe { pi_panel_from_dense(values.as_ptr(), 1, 2, ptr::null_mut()) };
    assert_eq!(status, PiStatus::PiNullArg);

    let mut q: c_double = 0.0;
    assert_eq!(unsafe { pi_q_statistic(ptr::null(), &mut q) }, PiStatus::PiNullArg);

    // Freeing null handles is a safe no-op.
    unsafe {
        pi_panel_free(ptr::null_mut());
        pi_report_free(ptr::null_mut());
    }
}

#[test]
fn csv_reader_matches_dense_construction() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let mut text = String::from("unit,time,value\n");
    let values = [0.5, 1.5, -0.5, 2.0, 0.0, 1.0];
    for i in 0..2 {
        for t in 0..3 {
            text.push_str(&format!("u{i},{t},{}\n", values[i * 3 + t]));
        }
    }
    std::fs::write(&path, text).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut from_csv: *mut PiPanel = ptr::null_mut();
    let status = unsafe { pi_panel_read_long_csv(cpath.as_ptr(), &mut from_csv) };
    assert_eq!(status, PiStatus::PiOk, "{}", last_error());

    let from_dense = dense_panel(&values, 2, 3);
    let mut q_csv = 0.0;
    let mut q_dense = 0.0;
    unsafe {
        assert_eq!(pi_q_statistic(from_csv, &mut q_csv), PiStatus::PiOk);
        assert_eq!(pi_q_statistic(from_dense, &mut q_dense), PiStatus::PiOk);
        pi_panel_free(from_csv);
        pi_panel_free(from_dense);
    }
    assert_eq!(q_csv, q_dense);
}

#[test]
fn error_paths_map_to_distinct_statuses() {
    // Missing file -> IO.
    let missing = CString::new("/nonexistent/never.csv").unwrap();
    let mut out: *mut PiPanel = ptr::null_mut();
    assert_eq!(
        unsafe { pi_panel_read_long_csv(missing.as_ptr(), &mut out) },
        PiStatus::PiIo
    );

    // Wrong header -> parse error with the expectation in the message.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
    let cbad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { pi_panel_read_long_csv(cbad.as_ptr(), &mut out) },
        PiStatus::PiParseError
    );
    assert!(last_error().contains("unit,time,value"), "{}", last_error());

    // Non-UTF-8 path -> PiUtf8.
    let raw = CString::new(vec![0xFFu8, 0xFEu8]).unwrap();
    assert_eq!(
        unsafe { pi_panel_read_long_csv(raw.as_ptr(), &mut out) },
        PiStatus::PiUtf8
    );

    // Statistic on a single unit -> invalid input.
    let single = dense_panel(&[1.0, 2.0, 3.0], 1, 3);
    let mut q = 0.0;
    assert_eq!(unsafe { pi_q_statistic(single, &mut q) }, PiStatus::PiInvalidInput);
    unsafe { pi_panel_free(single) };
}

#[test]
fn group_means_splits_two_clusters() {
    let means = [0.1, -0.1, 5.2, 4.8];
    let mut labels = [usize::MAX; 4];
    let mut centers = [f64::NAN; 2];
    let status = unsafe {
        pi_group_means(means.as_ptr(), 4, 2, labels.as_mut_ptr(), centers.as_mut_ptr())
    };
    assert_eq!(status, PiStatus::PiOk, "{}", last_error());
    assert_eq!(labels, [0, 0, 1, 1]);
    assert!((centers[0] - 0.0).abs() < 1e-12);
    assert!((centers[1] - 5.0).abs() < 1e-12);

    // More groups than points is an input error.
    let status = unsafe {
        pi_group_means(means.as_ptr(), 2, 3, labels.as_mut_ptr(), centers.as_mut_ptr())
    };
    assert_eq!(status, PiStatus::PiInvalidInput);
}

#[test]
fn header_declares_every_exported_symbol() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/panelinfer.h"
    ))
    .expect("header present");
    for symbol in [
        "pi_last_error",
        "pi_panel_read_long_csv",
        "pi_panel_from_dense",
        "pi_panel_free",
        "pi_panel_n_units",
        "pi_panel_n_times",
        "pi_q_statistic",
        "pi_test_homogeneity",
        "pi_report_statistic",
        "pi_report_p_value",
        "pi_report_decision",
        "pi_report_free",
        "pi_group_means",
    ] {
        assert!(header.contains(symbol), "header missing {symbol}");
    }
    for status in [
        "PI_OK = 0",
        "PI_NULL_ARG = 1",
        "PI_PARSE_ERROR = 2",
        "PI_INVALID_INPUT = 3",
        "PI_NUMERICAL = 4",
        "PI_UTF8 = 5",
        "PI_IO = 6",
        "PI_INTERNAL = 7",
    ] {
        assert!(header.contains(status), "header missing {status}");
    }
}
