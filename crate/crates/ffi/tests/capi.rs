//! Drives the C ABI the way a C caller would: handles in, status codes
//! out, error text through the thread-local channel. Each test body is one
//! `unsafe` block — every pointer handed over is valid by construction.

use std::ffi::{CStr, CString};
use std::ptr;

use soboltrace_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(st_last_error()) }.to_str().unwrap().to_string()
}

unsafe fn make_model(spec: &str, case: Option<&str>, p: usize) -> *mut st_model {
    let spec = c(spec);
    let case = case.map(c);
    let mut out: *mut st_model = ptr::null_mut();
    let status = unsafe {
        st_model_new(
            spec.as_ptr(),
            case.as_ref().map_or(ptr::null(), |s| s.as_ptr()),
            p,
            &mut out,
        )
    };
    assert_eq!(status, st_status::ST_OK, "{}", last_error());
    assert!(!out.is_null());
    out
}

#[test]
fn estimate_round_trip() {
    unsafe {
        let model = make_model("bilinear:2,3", None, 0);

        let mut dim = 0usize;
        assert_eq!(st_model_input_dim(model, &mut dim), st_status::ST_OK);
        assert_eq!(dim, 2);
        assert_eq!(st_model_output_dim(model, &mut dim), st_status::ST_OK);
        assert_eq!(dim, 2);

        let u = [1usize];
        let mut truth = 0.0f64;
        assert_eq!(st_model_true_index(model, u.as_ptr(), 1, &mut truth), st_status::ST_OK);
        assert!((truth - 5.0 / 17.0).abs() < 1e-12);

        let mut sample: *mut st_sample = ptr::null_mut();
        assert_eq!(
            st_sample_generate(model, u.as_ptr(), 1, 2000, 42, &mut sample),
            st_status::ST_OK,
            "{}",
            last_error()
        );
        let mut n = 0usize;
        assert_eq!(st_sample_len(sample, &mut n), st_status::ST_OK);
        assert_eq!(n, 2000);
        assert_eq!(st_sample_output_dim(sample, &mut dim), st_status::ST_OK);
        assert_eq!(dim, 2);

        let mut est = 0.0f64;
        assert_eq!(st_estimate_index(sample, &mut est), st_status::ST_OK);
        assert!((est - truth).abs() < 0.05, "estimate {est} vs truth {truth}");

        let (mut point, mut lo, mut hi, mut sigma2) = (0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            st_confidence_interval(sample, 0.95, &mut point, &mut lo, &mut hi, &mut sigma2),
            st_status::ST_OK
        );
        assert_eq!(point, est);
        assert!(lo <= est && est <= hi);
        assert!(sigma2 > 0.0);

        let mut parts = [0.0f64; 2];
        assert_eq!(
            st_estimate_componentwise(sample, parts.as_mut_ptr(), 2),
            st_status::ST_OK
        );
        assert!(parts.iter().all(|v| v.is_finite()));
        // Wrongly sized buffers are refused before any write.
        assert_eq!(
            st_estimate_componentwise(sample, parts.as_mut_ptr(), 1),
            st_status::ST_CONFIG
        );

        // Same (model, u, n, seed) reproduces the estimate bit-for-bit.
        let mut again: *mut st_sample = ptr::null_mut();
        assert_eq!(
            st_sample_generate(model, u.as_ptr(), 1, 2000, 42, &mut again),
            st_status::ST_OK
        );
        let mut est2 = 0.0f64;
        assert_eq!(st_estimate_index(again, &mut est2), st_status::ST_OK);
        assert_eq!(est.to_bits(), est2.to_bits());

        st_sample_free(again);
        st_sample_free(sample);
        st_model_free(model);
    }
}

#[test]
fn status_codes_and_error_text() {
    unsafe {
        let mut out: *mut st_model = ptr::null_mut();

        assert_eq!(st_model_new(ptr::null(), ptr::null(), 0, &mut out), st_status::ST_NULL_ARG);
        assert!(!last_error().is_empty());

        let bogus = c("bogus");
        assert_eq!(st_model_new(bogus.as_ptr(), ptr::null(), 0, &mut out), st_status::ST_CONFIG);
        assert!(last_error().contains("bogus"), "message was {:?}", last_error());

        let polar = c("polar");
        let weird = c("weird");
        assert_eq!(st_model_new(polar.as_ptr(), weird.as_ptr(), 0, &mut out), st_status::ST_CONFIG);

        // External commands carry no input law: the dimension is mandatory.
        let external = c("external:cat:2");
        assert_eq!(
            st_model_new(external.as_ptr(), ptr::null(), 0, &mut out),
            st_status::ST_CONFIG
        );

        let invalid = c"\xff\xfe";
        assert_eq!(
            st_model_new(invalid.as_ptr(), ptr::null(), 0, &mut out),
            st_status::ST_INVALID_UTF8
        );

        // No closed form for the oscillator: the code says so, cleanly.
        let model = make_model("mass-spring", None, 0);
        let u = [1usize];
        let mut truth = 0.0f64;
        assert_eq!(
            st_model_true_index(model, u.as_ptr(), 1, &mut truth),
            st_status::ST_UNSUPPORTED
        );

        // Out-of-range subset index.
        let mut sample: *mut st_sample = ptr::null_mut();
        let far = [9usize];
        assert_eq!(
            st_sample_generate(model, far.as_ptr(), 1, 100, 1, &mut sample),
            st_status::ST_CONFIG
        );
        st_model_free(model);

        // Freeing NULL is the usual no-op.
        st_model_free(ptr::null_mut());
        st_sample_free(ptr::null_mut());
    }
}

#[test]
fn external_and_degenerate_paths() {
    unsafe {
        // `cat` echoes its two Gaussian inputs: the identity model.
        let model = make_model("external:cat:2", None, 2);
        let u = [1usize];
        let mut sample: *mut st_sample = ptr::null_mut();
        assert_eq!(
            st_sample_generate(model, u.as_ptr(), 1, 4000, 5, &mut sample),
            st_status::ST_OK,
            "{}",
            last_error()
        );
        let mut est = 0.0f64;
        assert_eq!(st_estimate_index(sample, &mut est), st_status::ST_OK);
        assert!((est - 0.5).abs() < 0.05, "identity model index {est}");
        st_sample_free(sample);
        st_model_free(model);

        // A constant simulator has zero output variance; the index must refuse.
        let model = make_model("external:sed s/.*/1.0/:1", None, 1);
        let mut sample: *mut st_sample = ptr::null_mut();
        assert_eq!(
            st_sample_generate(model, u.as_ptr(), 1, 50, 1, &mut sample),
            st_status::ST_OK
        );
        assert_eq!(st_estimate_index(sample, &mut est), st_status::ST_DEGENERATE);
        assert!(!last_error().is_empty());
        st_sample_free(sample);
        st_model_free(model);

        // A missing binary surfaces as the runtime class, with a message.
        let model = make_model("external:/no/such/simulator:1", None, 1);
        let mut sample: *mut st_sample = ptr::null_mut();
        assert_eq!(
            st_sample_generate(model, u.as_ptr(), 1, 10, 1, &mut sample),
            st_status::ST_EXTERNAL
        );
        st_model_free(model);
    }
}

#[test]
fn planner_and_version() {
    unsafe {
        let mut n = 0u64;
        assert_eq!(st_min_sample_size(0.2, 0.1, 1.0, &mut n), st_status::ST_OK);
        assert_eq!(n, 11899);
        assert_eq!(st_min_sample_size(0.0, 0.1, 1.0, &mut n), st_status::ST_DOMAIN);
        assert_eq!(st_min_sample_size(0.2, 0.1, 1.0, ptr::null_mut()), st_status::ST_NULL_ARG);

        let version = CStr::from_ptr(st_version()).to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn header_is_generated_and_complete() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/soboltrace.h"
    ))
    .expect("generated header");
    for symbol in [
        "st_model_new",
        "st_model_free",
        "st_sample_generate",
        "st_sample_free",
        "st_estimate_index",
        "st_confidence_interval",
        "st_estimate_componentwise",
        "st_min_sample_size",
        "st_last_error",
        "ST_DEGENERATE",
        "typedef struct st_model st_model;",
        "typedef struct st_sample st_sample;",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
