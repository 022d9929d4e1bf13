//! C ABI over polymerlab. Objects are opaque handles freed by their `*_free` function. Every
//! fallible call returns a `PlStatus` and writes results through out-pointers; the message of
//! the last failure on the calling thread is available from `pl_last_error_message`.

use polymerlab::functionals::{self as fun, FixedPointOptions, HBetaSolution};
use polymerlab::mollifier::{self, KernelSpec, Profile};
use polymerlab::noise::NoiseBox;
use polymerlab::polymer::{self, McOptions, PathSource};
use polymerlab::stats::RngStream;
use polymerlab::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    InvalidParameter = 1,
    UnsupportedMode = 2,
    Singularity = 3,
    OutOfDomain = 4,
    PathEscape = 5,
    NumericalOverflow = 6,
    SupercriticalBeta = 7,
    InvalidBracket = 8,
    UnsupportedOrder = 9,
    InvalidReference = 10,
    InnerMcDegenerate = 11,
    Config = 12,
    Io = 13,
    NullPointer = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlProfile {
    Bump = 0,
    DirectRIndicator = 1,
}

/// Opaque kernel specification.
pub struct PlKernelSpec(KernelSpec);

/// Opaque radial solution of the 𝔥_β equation.
pub struct PlHBetaSolution(HBetaSolution);

/// Estimate with its standard error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PlStatus {
    match e {
        Error::InvalidParameter { .. } => PlStatus::InvalidParameter,
        Error::UnsupportedMode { .. } => PlStatus::UnsupportedMode,
        Error::Singularity { .. } => PlStatus::Singularity,
        Error::OutOfDomain { .. } => PlStatus::OutOfDomain,
        Error::PathEscape { .. } => PlStatus::PathEscape,
        Error::NumericalOverflow { .. } => PlStatus::NumericalOverflow,
        Error::SupercriticalBeta { .. } => PlStatus::SupercriticalBeta,
        Error::InvalidBracket { .. } => PlStatus::InvalidBracket,
        Error::UnsupportedOrder { .. } => PlStatus::UnsupportedOrder,
        Error::InvalidReference { .. } => PlStatus::InvalidReference,
        Error::InnerMcDegenerate { .. } => PlStatus::InnerMcDegenerate,
        Error::Config { .. } => PlStatus::Config,
        Error::Io { .. } => PlStatus::Io,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PlStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            PlStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    *out = v;
    Ok(())
}

fn estimate(e: &polymer::Estimate) -> PlEstimate {
    PlEstimate { value: e.value, std_error: e.std_error, n: e.n_samples as u64 }
}

/// Message of the last failed call on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn pl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn pl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pl_kernel_spec_new(dim: usize, profile: PlProfile, support_radius: f64, out: *mut *mut PlKernelSpec) -> PlStatus {
    guard(|| {
        let p = match profile {
            PlProfile::Bump => Profile::Bump,
            PlProfile::DirectRIndicator => Profile::DirectRIndicator,
        };
        let spec = if dim == 3 && p == Profile::Bump && support_radius == 1.0 { KernelSpec::default_bump() } else { KernelSpec::new(dim, p, support_radius)? };
        put(out, Box::into_raw(Box::new(PlKernelSpec(spec))), "out")
    })
}

/// # Safety
/// `spec` must come from `pl_kernel_spec_new` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pl_kernel_spec_free(spec: *mut PlKernelSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// R(x) for a point of the spec's dimension.
///
/// # Safety
/// `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pl_kernel_r(spec: *const PlKernelSpec, x: *const f64, dim: usize, out: *mut f64) -> PlStatus {
    guard(|| {
        let s = &as_ref(spec, "spec")?.0;
        if dim != s.dim() {
            return Err(Error::InvalidParameter { op: "mollifier::kernel_R", msg: format!("point has dimension {dim}, spec {}", s.dim()) }.into());
        }
        put(out, s.kernel_r(slice(x, dim, "x")?), "out")
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_kernel_r0(spec: *const PlKernelSpec, out: *mut f64) -> PlStatus {
    guard(|| put(out, as_ref(spec, "spec")?.0.r0(), "out"))
}

/// # Safety
/// `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pl_heat_kernel(dim: usize, t: f64, x: *const f64, out: *mut f64) -> PlStatus {
    guard(|| put(out, mollifier::heat_kernel(dim, t, slice(x, dim, "x")?)?, "out"))
}

/// # Safety
/// `z` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pl_yukawa(dim: usize, z: *const f64, out: *mut f64) -> PlStatus {
    guard(|| put(out, mollifier::yukawa(dim, slice(z, dim, "z")?)?, "out"))
}

/// Solves 𝔥 = 1 + K_β𝔥 with default solver options, reporting on m + 1 radii of [0, r_max].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_hbeta_solve(spec: *const PlKernelSpec, beta: f64, r_max: f64, m: usize, out: *mut *mut PlHBetaSolution) -> PlStatus {
    guard(|| {
        let s = &as_ref(spec, "spec")?.0;
        let h = fun::h_beta_fixed_point(s, beta, r_max, m, &FixedPointOptions::default())?;
        put(out, Box::into_raw(Box::new(PlHBetaSolution(h))), "out")
    })
}

/// # Safety
/// `sol` must come from `pl_hbeta_solve` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pl_hbeta_free(sol: *mut PlHBetaSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// 𝔥_β at radius r.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_hbeta_value_at(sol: *const PlHBetaSolution, r: f64, out: *mut f64) -> PlStatus {
    guard(|| {
        if !(r >= 0.0) {
            return Err(Error::InvalidParameter { op: "functionals::h_beta_fixed_point", msg: format!("radius {r} < 0") }.into());
        }
        put(out, as_ref(sol, "sol")?.0.value_at(r), "out")
    })
}

/// Number of reported radii.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_hbeta_len(sol: *const PlHBetaSolution, out: *mut usize) -> PlStatus {
    guard(|| put(out, as_ref(sol, "sol")?.0.values.len(), "out"))
}

/// Copies min(len, pl_hbeta_len) radii and values into the caller's buffers.
///
/// # Safety
/// `radii` and `values` must each have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn pl_hbeta_copy(sol: *const PlHBetaSolution, radii: *mut f64, values: *mut f64, len: usize) -> PlStatus {
    guard(|| {
        let h = &as_ref(sol, "sol")?.0;
        if radii.is_null() || values.is_null() {
            return Err(Fail::Null("buffers"));
        }
        let n = len.min(h.values.len());
        std::ptr::copy_nonoverlapping(h.radial_grid.as_ptr(), radii, n);
        std::ptr::copy_nonoverlapping(h.values.as_ptr(), values, n);
        Ok(())
    })
}

/// γ(β)² by quadrature from a solution.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_gamma_squared(spec: *const PlKernelSpec, sol: *const PlHBetaSolution, out: *mut f64) -> PlStatus {
    guard(|| put(out, fun::gamma_squared(&as_ref(spec, "spec")?.0, &as_ref(sol, "sol")?.0), "out"))
}

/// H_{β;(T,∞)}(x₁, x₂) from a solution at the same β.
///
/// # Safety
/// `x1` and `x2` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pl_kernel_h_t_inf(sol: *const PlHBetaSolution, t: f64, x1: *const f64, x2: *const f64, dim: usize, out: *mut f64) -> PlStatus {
    guard(|| {
        let h = &as_ref(sol, "sol")?.0;
        let e = fun::kernel_h_t_inf(h.beta, t, slice(x1, dim, "x1")?, slice(x2, dim, "x2")?, h)?;
        put(out, e.h_t_inf.unwrap_or(f64::NAN), "out")
    })
}

/// Bracket [lo, hi] for β_{L²}.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_beta_l2_estimate(spec: *const PlKernelSpec, lo: f64, hi: f64, tol: f64, out_lo: *mut f64, out_hi: *mut f64) -> PlStatus {
    guard(|| {
        let b = fun::beta_l2_estimate(&as_ref(spec, "spec")?.0, (lo, hi), tol, &FixedPointOptions::default())?;
        put(out_lo, b.lo, "out_lo")?;
        put(out_hi, b.hi, "out_hi")
    })
}

/// A_β(a, b, T) over n bridges with time step dt.
///
/// # Safety
/// `a` and `b` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pl_bridge_functional(spec: *const PlKernelSpec, beta: f64, a: *const f64, b: *const f64, dim: usize, t: f64, dt: f64, n: usize, seed: u64, out: *mut PlEstimate) -> PlStatus {
    guard(|| {
        let e = fun::bridge_functional(&as_ref(spec, "spec")?.0, beta, slice(a, dim, "a")?, slice(b, dim, "b")?, t, dt, n, &RngStream::new(seed))?;
        put(out, estimate(&e), "out")
    })
}

/// 𝒵_T(x) on one noise realization drawn from `noise_seed`, with n paths drawn from `path_seed`.
///
/// # Safety
/// `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn pl_partition_mc(spec: *const PlKernelSpec, beta: f64, t: f64, x: *const f64, dim: usize, dx: f64, dt: f64, n_paths: usize, noise_seed: u64, path_seed: u64, out: *mut PlEstimate) -> PlStatus {
    guard(|| {
        let s = &as_ref(spec, "spec")?.0;
        let x = slice(x, dim, "x")?;
        let nb = NoiseBox::for_paths(noise_seed, s, dx, dt, &[x.to_vec()], t)?;
        let e = polymer::partition_mc(beta, t, x, &nb.view(), s, PathSource::Sampler { n_paths, stream: &RngStream::new(path_seed) }, &McOptions::default())?;
        put(out, estimate(&e), "out")
    })
}
