//! C ABI over the `twisted-reeb` core.
//!
//! Systems, orbits and orbit lists are opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`TrStatus`]; the message of the last failure on the calling thread is
//! available through [`tr_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use twisted_reeb::catalog::{make_henon_heiles, make_sphere};
use twisted_reeb::cli::SystemSpec;
use twisted_reeb::flow::{flow_map, FlowOptions};
use twisted_reeb::geometry::SymplecticSystem;
use twisted_reeb::invariants::{floquet_analysis, orbit_action, FloquetOptions};
use twisted_reeb::orbit::{newton_refine, seed_sweep, SeedStrategy, ShootingConfig, TwistedOrbit};
use twisted_reeb::Error;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    InvalidParameter = 3,
    Unsupported = 4,
    IntegrationFailure = 5,
    NoConvergence = 6,
    RankDeficient = 7,
    NotContractible = 8,
    InvalidCertificate = 9,
    BufferTooSmall = 10,
    InvalidText = 11,
    IndexOutOfRange = 12,
    Panic = 13,
}

impl From<&Error> for TrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => TrStatus::DimensionMismatch,
            Error::Parameter(_) => TrStatus::InvalidParameter,
            Error::UnsupportedStructure(_) => TrStatus::Unsupported,
            Error::IntegrationFailure { .. } | Error::CrossingNotFound { .. } => TrStatus::IntegrationFailure,
            Error::NonConvergence { .. } | Error::Conditioning { .. } => TrStatus::NoConvergence,
            Error::RankDeficient { .. } => TrStatus::RankDeficient,
            Error::NotContractible { .. } | Error::InvalidStabilization { .. } => TrStatus::NotContractible,
            Error::InvalidCertificate(_) => TrStatus::InvalidCertificate,
        }
    }
}

/// Opaque symplectic system.
pub struct TrSystem {
    inner: SymplecticSystem,
}

/// Opaque twisted periodic orbit.
pub struct TrOrbit {
    inner: TwistedOrbit,
}

/// Opaque list of orbits returned by a search.
pub struct TrOrbitList {
    items: Vec<TwistedOrbit>,
}

/// Scalar summary of an orbit.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TrOrbitInfo {
    pub tau: f64,
    pub energy: f64,
    pub residual: f64,
    pub twist: usize,
    pub order: usize,
    /// Number of twisted segments after which the loop closes.
    pub closing_factor: usize,
    pub dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(TrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(TrStatus::from(&e), e.to_string())
    }
}

fn fail(status: TrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TrStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let (status, msg) = match outcome {
        Ok(Ok(())) => (TrStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (TrStatus::Panic, m)
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(TrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input<'a>(p: *const f64, len: usize, expected: usize) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(fail(TrStatus::NullPointer, "input buffer is null"));
    }
    if len != expected {
        return Err(Error::DimensionMismatch { expected, got: len }.into());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(fail(TrStatus::NullPointer, "output buffer is null"));
    }
    if len < needed {
        return Err(fail(TrStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(TrStatus::NullPointer, "output handle is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put(out: *mut f64, v: f64) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(TrStatus::NullPointer, "output is null"));
    }
    *out = v;
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the size needed including the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn tr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a system from a TOML table such as `kind = "henon-heiles"` (the
/// `[system]` section of an experiment config).
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_system_from_toml(spec: *const c_char, out: *mut *mut TrSystem) -> TrStatus {
    guard(|| {
        if spec.is_null() {
            return Err(fail(TrStatus::NullPointer, "spec is null"));
        }
        let text = CStr::from_ptr(spec).to_str().map_err(|e| fail(TrStatus::InvalidText, e.to_string()))?;
        let parsed: SystemSpec = toml::from_str(text).map_err(|e| fail(TrStatus::InvalidText, e.to_string()))?;
        store(out, TrSystem { inner: parsed.build()? })
    })
}

/// Round sphere of radius `radius` in `C^n` with the diagonal rotation of order `order`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_system_sphere(n: usize, radius: f64, order: usize, out: *mut *mut TrSystem) -> TrStatus {
    guard(|| store(out, TrSystem { inner: make_sphere(n, radius, order, &vec![1; n])?.system }))
}

/// Hénon–Heiles with its rotation of order 3.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_system_henon_heiles(out: *mut *mut TrSystem) -> TrStatus {
    guard(|| store(out, TrSystem { inner: make_henon_heiles().system }))
}

/// # Safety
/// `system` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn tr_system_free(system: *mut TrSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Phase-space dimension, or 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_system_dim(system: *const TrSystem) -> usize {
    system.as_ref().map_or(0, |s| s.inner.dim())
}

/// Symmetry order, or 0 for a null handle.
///
/// # Safety
/// `system` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_system_symmetry_order(system: *const TrSystem) -> usize {
    system.as_ref().map_or(0, |s| s.inner.symmetry.order())
}

/// # Safety
/// `system` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_system_default_energy(system: *const TrSystem, out: *mut f64) -> TrStatus {
    guard(|| put(out, deref(system, "system")?.inner.default_energy))
}

/// # Safety
/// `x` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_system_energy(system: *const TrSystem, x: *const f64, len: usize, out: *mut f64) -> TrStatus {
    guard(|| {
        let s = &deref(system, "system")?.inner;
        let x = input(x, len, s.dim())?;
        put(out, s.energy(x))
    })
}

/// Hamiltonian flow of `x` for time `t`, written to `out`.
///
/// # Safety
/// `x` must hold `len` values and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn tr_system_flow(
    system: *const TrSystem,
    x: *const f64,
    len: usize,
    t: f64,
    out: *mut f64,
    out_len: usize,
) -> TrStatus {
    guard(|| {
        let s = &deref(system, "system")?.inner;
        let x = input(x, len, s.dim())?;
        let out = output(out, out_len, s.dim())?;
        out.copy_from_slice(flow_map(s, x, t, &FlowOptions::default())?.as_slice());
        Ok(())
    })
}

/// Newton refinement of a twisted orbit `Phi_tau(x) = phi^twist(x)` on `H = energy`.
///
/// # Safety
/// `x0` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_refine(
    system: *const TrSystem,
    x0: *const f64,
    len: usize,
    tau: f64,
    energy: f64,
    twist: usize,
    out: *mut *mut TrOrbit,
) -> TrStatus {
    guard(|| {
        let s = &deref(system, "system")?.inner;
        let x0 = input(x0, len, s.dim())?;
        if !(tau > 0.0) {
            return Err(fail(TrStatus::InvalidParameter, "tau must be positive"));
        }
        let cfg = ShootingConfig::new(energy, twist, (0.5 * tau, 2.0 * tau));
        store(out, TrOrbit { inner: newton_refine(s, &cfg, x0, tau)? })
    })
}

/// Quasi-random multi-start search for twisted orbits with period in `[tau_min, tau_max]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_search(
    system: *const TrSystem,
    energy: f64,
    twist: usize,
    tau_min: f64,
    tau_max: f64,
    seeds: usize,
    seed: u64,
    out: *mut *mut TrOrbitList,
) -> TrStatus {
    guard(|| {
        let s = &deref(system, "system")?.inner;
        let mut cfg = ShootingConfig::new(energy, twist, (tau_min, tau_max));
        cfg.seeds = SeedStrategy::QuasiRandom { count: seeds, seed };
        store(out, TrOrbitList { items: seed_sweep(s, &cfg)?.orbits })
    })
}

/// # Safety
/// `list` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_list_len(list: *const TrOrbitList) -> usize {
    list.as_ref().map_or(0, |l| l.items.len())
}

/// Copies entry `index` into a new orbit handle.
///
/// # Safety
/// `list` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_list_get(list: *const TrOrbitList, index: usize, out: *mut *mut TrOrbit) -> TrStatus {
    guard(|| {
        let l = deref(list, "list")?;
        let orbit = l
            .items
            .get(index)
            .ok_or_else(|| fail(TrStatus::IndexOutOfRange, format!("index {index} of {}", l.items.len())))?;
        store(out, TrOrbit { inner: orbit.clone() })
    })
}

/// # Safety
/// `list` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_list_free(list: *mut TrOrbitList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// # Safety
/// `orbit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_info(orbit: *const TrOrbit, out: *mut TrOrbitInfo) -> TrStatus {
    guard(|| {
        let o = &deref(orbit, "orbit")?.inner;
        if out.is_null() {
            return Err(fail(TrStatus::NullPointer, "output is null"));
        }
        *out = TrOrbitInfo {
            tau: o.tau,
            energy: o.energy,
            residual: o.residual,
            twist: o.twist,
            order: o.order,
            closing_factor: o.closing_factor(),
            dim: o.x0.len(),
        };
        Ok(())
    })
}

/// Initial point of the orbit.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_point(orbit: *const TrOrbit, out: *mut f64, len: usize) -> TrStatus {
    guard(|| {
        let o = &deref(orbit, "orbit")?.inner;
        output(out, len, o.x0.len())?.copy_from_slice(&o.x0);
        Ok(())
    })
}

/// Action of the orbit, normalized per twisted segment.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_action(system: *const TrSystem, orbit: *const TrOrbit, out: *mut f64) -> TrStatus {
    guard(|| {
        let s = &deref(system, "system")?.inner;
        let o = &deref(orbit, "orbit")?.inner;
        put(out, orbit_action(o, s, &FlowOptions::default())?)
    })
}

/// Reduced Floquet multipliers, interleaved as `re0, im0, re1, im1, ...`.
/// `count` receives the number of multipliers; `len` is the buffer length in doubles.
///
/// # Safety
/// Handles must be live; `re_im` must hold `len` values; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_floquet(
    system: *const TrSystem,
    orbit: *const TrOrbit,
    re_im: *mut f64,
    len: usize,
    count: *mut usize,
) -> TrStatus {
    guard(|| {
        let s = &deref(system, "system")?.inner;
        let o = &deref(orbit, "orbit")?.inner;
        if count.is_null() {
            return Err(fail(TrStatus::NullPointer, "count is null"));
        }
        let report = floquet_analysis(o, s, &FloquetOptions::default(), &FlowOptions::default())?;
        *count = report.multipliers.len();
        let buf = output(re_im, len, 2 * report.multipliers.len())?;
        for (chunk, m) in buf.chunks_exact_mut(2).zip(&report.multipliers) {
            chunk.copy_from_slice(m);
        }
        Ok(())
    })
}

/// # Safety
/// `orbit` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn tr_orbit_free(orbit: *mut TrOrbit) {
    if !orbit.is_null() {
        drop(Box::from_raw(orbit));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_are_stable() {
        assert_eq!(TrStatus::Ok as i32, 0);
        assert_eq!(TrStatus::Panic as i32, 13);
        assert_eq!(TrStatus::from(&Error::RankDeficient { kernel_dim: 1 }), TrStatus::RankDeficient);
    }

    #[test]
    fn guard_records_panics() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, TrStatus::Panic);
        let mut buf = [0 as c_char; 16];
        let need = unsafe { tr_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(need, 5);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }
}
