//! C ABI over `gainbudget`.
//!
//! Every function returns a [`GbStatus`]; on failure the message is kept in a
//! thread-local slot readable through [`gb_last_error`]. Objects cross the
//! boundary as opaque handles and must be released with their `_free` function.
//! Strings returned by the library are owned by the caller and released with
//! [`gb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gainbudget::gaincert::{certify_gain_lmi, certify_point_mass};
use gainbudget::harness::{run_experiment, ExperimentConfig};
use gainbudget::plant::{PointMassParams, Prestabilizer};
use gainbudget::policy::GainBoundedPolicy;
use gainbudget::Error;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GbStatus {
    Ok = 0,
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Contract = 3,
    Range = 4,
    Infeasible = 5,
    InvalidConfig = 6,
    NonFinite = 7,
    Io = 8,
    Json = 9,
    /// A run finished but at least one window bound failed.
    BoundViolation = 10,
    Panic = 99,
}

/// Opaque recurrent policy.
pub struct GbPolicy {
    inner: GainBoundedPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> GbStatus {
    match e {
        Error::Contract(_) => GbStatus::Contract,
        Error::Range { .. } => GbStatus::Range,
        Error::Infeasible(_) => GbStatus::Infeasible,
        Error::InvalidConfig(_) => GbStatus::InvalidConfig,
        Error::NonFinite { .. } => GbStatus::NonFinite,
        Error::Io(_) => GbStatus::Io,
        Error::Json(_) => GbStatus::Json,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (GbStatus, String)>) -> GbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GbStatus::Ok,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside gainbudget");
            GbStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (GbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GbStatus, String) {
    (GbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (GbStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| (GbStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (GbStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), (GbStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn gb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a pointer returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Certified ℓ2 gain of the prestabilized point mass.
///
/// # Safety
/// `gamma_hat_out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn gb_point_mass_gain(
    m: f64,
    ts: f64,
    b1: f64,
    b2: f64,
    k1: f64,
    k2: f64,
    gamma_hat_out: *mut f64,
) -> GbStatus {
    guard(|| {
        let p = PointMassParams { m, ts, b1, b2 };
        let k = Prestabilizer { k1, k2 };
        let cert = certify_point_mass(&p, &k).map_err(lib_err)?;
        write_out(gamma_hat_out, cert.gamma_hat, "gamma_hat_out")
    })
}

/// Certified ℓ2 gain of `x⁺ = A x + B d`; `a` is n×n and `b` is n×k, both row-major.
///
/// # Safety
/// `a` must hold `n*n` values, `b` must hold `n*k` values.
#[no_mangle]
pub unsafe extern "C" fn gb_certify_linear(a: *const f64, n: usize, b: *const f64, k: usize, gamma_hat_out: *mut f64) -> GbStatus {
    guard(|| {
        if n == 0 || k == 0 {
            return Err((GbStatus::Contract, "dimensions must be positive".into()));
        }
        let a = read_slice(a, n * n, "a")?;
        let b = read_slice(b, n * k, "b")?;
        let am = DMatrix::from_row_slice(n, n, a);
        let bm = DMatrix::from_row_slice(n, k, b);
        let cert = certify_gain_lmi(&am, &bm).map_err(lib_err)?;
        write_out(gamma_hat_out, cert.gamma_hat, "gamma_hat_out")
    })
}

/// Random policy with balanced caps at `gamma_bar`, weights at `init_frac` of each cap.
///
/// # Safety
/// `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_random(
    n: usize,
    m: usize,
    h: usize,
    gamma_bar: f64,
    s_rec: f64,
    init_frac: f64,
    seed: u64,
    out: *mut *mut GbPolicy,
) -> GbStatus {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = GainBoundedPolicy::random(n, m, h, gamma_bar, s_rec, init_frac, &mut rng).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(GbPolicy { inner })), "out")
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_from_json(json: *const c_char, out: *mut *mut GbPolicy) -> GbStatus {
    guard(|| {
        let s = read_str(json, "json")?;
        let inner = GainBoundedPolicy::from_json(s).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(GbPolicy { inner })), "out")
    })
}

/// Serializes a policy checkpoint; free the result with [`gb_string_free`].
///
/// # Safety
/// `p` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_to_json(p: *const GbPolicy, out: *mut *mut c_char) -> GbStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("policy"))?;
        let s = p.inner.to_json().map_err(lib_err)?;
        write_out(out, to_c_string(s), "out")
    })
}

/// # Safety
/// `p` must be a live handle; each out pointer must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_dims(p: *const GbPolicy, n: *mut usize, m: *mut usize, h: *mut usize) -> GbStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("policy"))?;
        let s = p.inner.shape();
        for (o, v) in [(n, s.n), (m, s.m), (h, s.h)] {
            if !o.is_null() {
                o.write(v);
            }
        }
        Ok(())
    })
}

/// Certified ℓ2 gain of the policy under its current caps.
///
/// # Safety
/// `p` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_certified_gain(p: *const GbPolicy, out: *mut f64) -> GbStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("policy"))?;
        let g = p.inner.certified_gain().map_err(lib_err)?;
        write_out(out, g, "out")
    })
}

/// Projects the weights so the certified gain is at most `gamma`.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_project(p: *mut GbPolicy, gamma: f64) -> GbStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("policy"))?;
        p.inner.project_exact(gamma).map_err(lib_err)
    })
}

/// One step: reads `z` (length n), writes `u` (length m), advances the hidden state.
///
/// # Safety
/// `z` must hold `z_len` values and `u` must have room for `u_len` values.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_step(p: *mut GbPolicy, z: *const f64, z_len: usize, u: *mut f64, u_len: usize) -> GbStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("policy"))?;
        let z = read_slice(z, z_len, "z")?;
        if u.is_null() && u_len > 0 {
            return Err(null("u"));
        }
        let mut buf = vec![0.0; u_len];
        p.inner.step(z, &mut buf).map_err(lib_err)?;
        if u_len > 0 {
            ptr::copy_nonoverlapping(buf.as_ptr(), u, u_len);
        }
        Ok(())
    })
}

/// Zeroes the hidden state.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_reset(p: *mut GbPolicy) -> GbStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("policy"))?;
        p.inner.reset();
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gb_policy_free(p: *mut GbPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Runs the experiment described by a JSON config and returns the run summary
/// as JSON (free with [`gb_string_free`]). Output files are written only when the
/// config names an `output_dir`. Returns `BoundViolation` with the summary still
/// filled in if any window bound failed.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `summary_out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn gb_run_experiment(config_json: *const c_char, summary_out: *mut *mut c_char) -> GbStatus {
    let mut verified = true;
    let st = guard(|| {
        let s = read_str(config_json, "config_json")?;
        let cfg = ExperimentConfig::from_json(s).map_err(lib_err)?;
        let out = run_experiment(&cfg).map_err(lib_err)?;
        verified = out.summary.all_verified;
        let js = out.summary.to_json().map_err(lib_err)?;
        write_out(summary_out, to_c_string(js), "summary_out")
    });
    if st == GbStatus::Ok && !verified {
        set_error("window bound violated");
        return GbStatus::BoundViolation;
    }
    st
}
