//! C ABI over the core estimators: opaque handles, integer status codes,
//! a thread-local error message, and a cbindgen-generated header in
//! `include/soboltrace.h`.
//!
//! Conventions: every constructor hands ownership to the caller, released
//! with the matching `*_free` (both accept NULL). Output parameters are
//! written only when the call returns [`st_status::ST_OK`]. String
//! arguments are NUL-terminated UTF-8. Subset indices are 1-based, as
//! everywhere else in the library.

#![allow(non_camel_case_types)]
#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use soboltrace::asymptotics::confidence_interval;
use soboltrace::cli::{default_case, parse_case, parse_model};
use soboltrace::concentration::min_sample_size;
use soboltrace::design::{DesignConfig, InputSpec, SubsetU};
use soboltrace::estimators::{estimate_componentwise, estimate_index, PickFreezeSample};
use soboltrace::models::{InputCase, ModelSpec};
use soboltrace::Error;

/// Status of every fallible call. Anything but ST_OK leaves the output
/// parameters untouched; st_last_error() then describes the failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum st_status {
    ST_OK = 0,
    /// A required pointer argument was NULL.
    ST_NULL_ARG = 1,
    /// A string argument was not valid UTF-8.
    ST_INVALID_UTF8 = 2,
    /// Malformed specification: unknown model or case string, bad subset,
    /// invalid sizes or levels.
    ST_CONFIG = 3,
    /// Structurally valid input outside an operation's mathematical domain.
    ST_DOMAIN = 4,
    /// Output variance or eigenvalue gap too small; the quantity is
    /// undefined on this data.
    ST_DEGENERATE = 5,
    /// Exact enumeration cap exceeded.
    ST_CAPACITY = 6,
    /// Operation not defined for this model/case combination.
    ST_UNSUPPORTED = 7,
    /// No sample size up to the search cap meets the requested risk.
    ST_UNATTAINABLE = 8,
    /// External model subprocess failed or answered garbage.
    ST_EXTERNAL = 9,
    /// Filesystem or pipe failure.
    ST_IO = 10,
    /// Internal panic; treat the library state as poisoned.
    ST_PANIC = 11,
}

/// A model resolved together with its input law and case, ready to sample.
pub struct st_model {
    model: ModelSpec,
    inputs: InputSpec,
    case: InputCase,
}

/// One paired pick-and-freeze sample (Y, Y^u) for a fixed subset.
pub struct st_sample {
    inner: PickFreezeSample,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped");
    });
}

fn fail(e: &Error) -> st_status {
    set_error(&e.to_string());
    match e {
        Error::Config(_) => st_status::ST_CONFIG,
        Error::Domain(_) | Error::Schedule { .. } | Error::InvalidRho { .. } => {
            st_status::ST_DOMAIN
        }
        Error::Degenerate { .. } | Error::NonSimpleSpectrum { .. } => st_status::ST_DEGENERATE,
        Error::Capacity { .. } => st_status::ST_CAPACITY,
        Error::Unsupported(_) => st_status::ST_UNSUPPORTED,
        Error::Unattainable { .. } => st_status::ST_UNATTAINABLE,
        Error::External { .. } => st_status::ST_EXTERNAL,
        Error::Io(_) => st_status::ST_IO,
    }
}

fn null_arg(which: &str) -> st_status {
    set_error(&format!("argument {which} must not be NULL"));
    st_status::ST_NULL_ARG
}

/// Shields the C boundary from unwinding.
fn guarded(f: impl FnOnce() -> st_status) -> st_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            st_status::ST_PANIC
        }
    }
}

/// # Safety
/// `ptr` must be NUL-terminated; lifetime is the caller's problem.
unsafe fn cstr<'a>(ptr: *const c_char, which: &str) -> Result<&'a str, st_status> {
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(&format!("argument {which} is not valid UTF-8"));
            Err(st_status::ST_INVALID_UTF8)
        }
    }
}

unsafe fn subset_from(u: *const usize, u_len: usize) -> Result<SubsetU, st_status> {
    if u.is_null() && u_len > 0 {
        return Err(null_arg("u"));
    }
    let indices = if u_len == 0 {
        &[]
    } else {
        unsafe { std::slice::from_raw_parts(u, u_len) }
    };
    Ok(SubsetU::new(indices.iter().copied()))
}

/// Message for the most recent failure on this thread; empty string when
/// nothing failed yet. Valid until the next failing call on the same
/// thread. Never NULL.
#[no_mangle]
pub extern "C" fn st_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a model from its string form
/// (`polar | mass-spring | aniso:A | bilinear:A,B | external:CMD:K`).
/// `case` selects the input law (`"gaussian"` or `"uniform"`); NULL means
/// the model's native case. `p` is the input dimension — required for
/// external commands, otherwise 0 (or the model's true dimension).
///
/// # Safety
/// `spec` and `case` (when non-NULL) must point to NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_model_new(
    spec: *const c_char,
    case: *const c_char,
    p: usize,
    out: *mut *mut st_model,
) -> st_status {
    guarded(|| {
        if spec.is_null() {
            return null_arg("spec");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let spec = match unsafe { cstr(spec, "spec") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let model = match parse_model(spec) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let case = if case.is_null() {
            default_case(&model)
        } else {
            let text = match unsafe { cstr(case, "case") } {
                Ok(s) => s,
                Err(status) => return status,
            };
            match parse_case(text) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            }
        };
        let inputs = match model.sampling_inputs(case, (p > 0).then_some(p)) {
            Ok(i) => i,
            Err(e) => return fail(&e),
        };
        let handle = Box::new(st_model { model, inputs, case });
        unsafe { *out = Box::into_raw(handle) };
        st_status::ST_OK
    })
}

/// Releases a model handle; NULL is a no-op.
///
/// # Safety
/// `model` must have come from [`st_model_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn st_model_free(model: *mut st_model) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of inputs the model consumes.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_model_input_dim(model: *const st_model, out: *mut usize) -> st_status {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { *out = (*model).inputs.p() };
        st_status::ST_OK
    })
}

/// Number of output components per evaluation.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_model_output_dim(model: *const st_model, out: *mut usize) -> st_status {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { *out = (*model).model.output_dim() };
        st_status::ST_OK
    })
}

/// Exact index for the subset `u` (1-based indices, `u_len` of them) where
/// a closed form exists; ST_UNSUPPORTED otherwise.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable. `u` must hold `u_len` readable indices.
#[no_mangle]
pub unsafe extern "C" fn st_model_true_index(
    model: *const st_model,
    u: *const usize,
    u_len: usize,
    out: *mut f64,
) -> st_status {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let subset = match unsafe { subset_from(u, u_len) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let m = unsafe { &*model };
        match m.model.true_index(m.case, &subset) {
            Ok(v) => {
                unsafe { *out = v };
                st_status::ST_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Draws a paired design of size `n` for the subset `u` (1-based indices)
/// and evaluates the model on both replicas. Identical (model, u, n, seed)
/// reproduce the identical sample.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable. `u` must hold `u_len` readable indices.
#[no_mangle]
pub unsafe extern "C" fn st_sample_generate(
    model: *const st_model,
    u: *const usize,
    u_len: usize,
    n: usize,
    seed: u64,
    out: *mut *mut st_sample,
) -> st_status {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let subset = match unsafe { subset_from(u, u_len) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let m = unsafe { &*model };
        if let Err(e) = subset.validate_for(m.inputs.p()) {
            return fail(&e);
        }
        let cfg = match DesignConfig::new(n, seed) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        match PickFreezeSample::generate(&m.model, &m.inputs, &subset, &cfg) {
            Ok(sample) => {
                unsafe { *out = Box::into_raw(Box::new(st_sample { inner: sample })) };
                st_status::ST_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a sample handle; NULL is a no-op.
///
/// # Safety
/// `sample` must have come from [`st_sample_generate`] and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn st_sample_free(sample: *mut st_sample) {
    if !sample.is_null() {
        drop(unsafe { Box::from_raw(sample) });
    }
}

/// Number of pick-and-freeze pairs in the sample.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_sample_len(sample: *const st_sample, out: *mut usize) -> st_status {
    guarded(|| {
        if sample.is_null() {
            return null_arg("sample");
        }
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { *out = (*sample).inner.n() };
        st_status::ST_OK
    })
}

/// Number of output components carried by each observation.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_sample_output_dim(sample: *const st_sample, out: *mut usize) -> st_status {
    guarded(|| {
        if sample.is_null() {
            return null_arg("sample");
        }
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { *out = (*sample).inner.k() };
        st_status::ST_OK
    })
}

/// Trace-ratio index estimate of the sample's subset.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_estimate_index(sample: *const st_sample, out: *mut f64) -> st_status {
    guarded(|| {
        if sample.is_null() {
            return null_arg("sample");
        }
        if out.is_null() {
            return null_arg("out");
        }
        match estimate_index(unsafe { &(*sample).inner }) {
            Ok(est) => {
                unsafe { *out = est.value };
                st_status::ST_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Two-sided asymptotic interval at `level` (e.g. 0.95): writes the point
/// estimate, both endpoints, and the plug-in variance.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_confidence_interval(
    sample: *const st_sample,
    level: f64,
    estimate: *mut f64,
    lo: *mut f64,
    hi: *mut f64,
    sigma2: *mut f64,
) -> st_status {
    guarded(|| {
        if sample.is_null() {
            return null_arg("sample");
        }
        for (ptr, name) in [(estimate, "estimate"), (lo, "lo"), (hi, "hi"), (sigma2, "sigma2")] {
            if ptr.is_null() {
                return null_arg(name);
            }
        }
        match confidence_interval(unsafe { &(*sample).inner }, level) {
            Ok(ci) => {
                unsafe {
                    *estimate = ci.estimate;
                    *lo = ci.lo;
                    *hi = ci.hi;
                    *sigma2 = ci.sigma2_hat;
                }
                st_status::ST_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Per-component first-order indices, written into `out[0..out_len]`.
/// `out_len` must equal the sample's output dimension.
///
/// # Safety
/// Handles must come from this library and still be live; non-NULL output
/// pointers must be writable. `out` must hold `out_len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn st_estimate_componentwise(
    sample: *const st_sample,
    out: *mut f64,
    out_len: usize,
) -> st_status {
    guarded(|| {
        if sample.is_null() {
            return null_arg("sample");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let s = unsafe { &(*sample).inner };
        if out_len != s.k() {
            set_error(&format!(
                "output buffer holds {out_len} value(s), the sample has {} component(s)",
                s.k()
            ));
            return st_status::ST_CONFIG;
        }
        let values = estimate_componentwise(s);
        let slice = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
        slice.copy_from_slice(&values);
        st_status::ST_OK
    })
}

/// Smallest sample size whose worst-case two-sided deviation risk at
/// relative deviation `t` is at most `alpha`, for V = (sum_l v_l)^2.
///
/// # Safety
/// `out` must be writable when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn st_min_sample_size(
    t: f64,
    alpha: f64,
    v_total: f64,
    out: *mut u64,
) -> st_status {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        match min_sample_size(t, alpha, v_total) {
            Ok(n) => {
                unsafe { *out = n };
                st_status::ST_OK
            }
            Err(e) => fail(&e),
        }
    })
}
