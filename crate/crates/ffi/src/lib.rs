//! C ABI for the twofluid solver.
//!
//! Every function returns a [`TfStatus`]; on failure a description is
//! available from [`tf_last_error_message`] on the same thread. Simulations
//! are opaque handles created by `tf_simulation_new*` and released with
//! [`tf_simulation_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use twofluid::closure::{solve_closure, ClosureTolerances, GammaLaw};
use twofluid::diagnostics::{Recorder, DEFAULT_EPSILON};
use twofluid::equilibrium::{solve_equilibrium, SteadyState};
use twofluid::harness::Scenario;
use twofluid::solver::{compute_dt, init_state, run, step, Cadence, Grid, InitialData, LagrangianState, SchemeConfig};
use twofluid::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    /// Null pointer, bad length or malformed string.
    InvalidArgument = 1,
    /// Input outside the mathematical domain (non-positive density, γ ≤ 1, ...).
    Domain = 2,
    NonConvergence = 3,
    PositivityLoss = 4,
    DimensionMismatch = 5,
    /// Any other numerical failure.
    Numerical = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

/// Closure solution at one material point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TfClosureResult {
    pub z: f64,
    pub alpha: f64,
    pub p: f64,
    pub residual: f64,
    pub iterations: u32,
}

/// Selected diagnostics of the current state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TfDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub lyapunov_g: f64,
    pub lyapunov_full: f64,
    pub min_tau: f64,
    pub max_tau: f64,
    pub dist_tau: f64,
    pub dist_u: f64,
}

/// Opaque simulation handle.
pub struct TfSimulation {
    grid: Grid,
    scheme: SchemeConfig,
    steady: SteadyState,
    recorder: Recorder,
    state: LagrangianState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TfStatus {
    match e {
        Error::Domain(_) | Error::Validation { .. } | Error::Config(_) => TfStatus::Domain,
        Error::NonConvergence { .. } | Error::BracketFailure { .. } => TfStatus::NonConvergence,
        Error::PositivityLoss { .. } => TfStatus::PositivityLoss,
        Error::DimensionMismatch { .. } => TfStatus::DimensionMismatch,
        _ => TfStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TfStatus>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside twofluid".into());
            TfStatus::Panic
        }
    }
}

fn fail(e: Error) -> TfStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn invalid(msg: &str) -> TfStatus {
    set_error(msg.into());
    TfStatus::InvalidArgument
}

/// Message for the most recent failure on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Solves the pressure closure for partial densities `(r, q)`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `TfClosureResult`.
#[no_mangle]
pub unsafe extern "C" fn tf_closure_solve(
    r: f64,
    q: f64,
    gamma_plus: f64,
    gamma_minus: f64,
    out: *mut TfClosureResult,
) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let law = GammaLaw::new(gamma_plus, gamma_minus).map_err(fail)?;
        let c = solve_closure(r, q, &law, &ClosureTolerances::default()).map_err(fail)?;
        *out = TfClosureResult {
            z: c.z,
            alpha: c.alpha,
            p: c.p,
            residual: c.residual,
            iterations: c.iterations as u32,
        };
        Ok(())
    })
}

fn build(data: InitialData, gamma_plus: f64, gamma_minus: f64, mu: f64, cfl: f64) -> Result<TfSimulation, Error> {
    let grid = Grid::new(data.n_cells())?;
    let law = GammaLaw::new(gamma_plus, gamma_minus)?;
    let scheme = SchemeConfig::new(law, mu)?.with_cfl(cfl)?;
    let steady = solve_equilibrium(data.r0(), data.q0(), data.tau0(), &law, 1e-12)?;
    let recorder = Recorder::new(&steady, &data, grid, law, scheme.closure, DEFAULT_EPSILON)?;
    let state = init_state(&data, &grid, &scheme)?;
    Ok(TfSimulation {
        grid,
        scheme,
        steady,
        recorder,
        state,
    })
}

unsafe fn install(out: *mut *mut TfSimulation, sim: TfSimulation) {
    *out = Box::into_raw(Box::new(sim));
}

/// Creates a simulation of a registered scenario (`"uniform"`,
/// `"smooth-bump"`, `"two-zone"`, `"near-vacuum-fraction"`).
///
/// # Safety
/// `scenario` must be a NUL-terminated string; `out` must point to writable
/// memory for one pointer. On failure `*out` is set to null.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_new(
    scenario: *const c_char,
    n_cells: usize,
    gamma_plus: f64,
    gamma_minus: f64,
    mu: f64,
    cfl: f64,
    out: *mut *mut TfSimulation,
) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        if scenario.is_null() {
            return Err(invalid("scenario is null"));
        }
        let name = CStr::from_ptr(scenario).to_str().map_err(|_| invalid("scenario is not UTF-8"))?;
        let sc: Scenario = name.parse().map_err(fail)?;
        let grid = Grid::new(n_cells).map_err(fail)?;
        let data = sc.generate(&grid).map_err(fail)?;
        install(out, build(data, gamma_plus, gamma_minus, mu, cfl).map_err(fail)?);
        Ok(())
    })
}

/// Creates a simulation from explicit data: `r0`, `q0` of length `n_cells`
/// and `u0` of length `n_cells + 1` with zero endpoints.
///
/// # Safety
/// The arrays must be readable for the stated lengths; `out` as in
/// [`tf_simulation_new`].
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_new_from_data(
    r0: *const f64,
    q0: *const f64,
    u0: *const f64,
    n_cells: usize,
    gamma_plus: f64,
    gamma_minus: f64,
    mu: f64,
    cfl: f64,
    out: *mut *mut TfSimulation,
) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        if r0.is_null() || q0.is_null() || u0.is_null() {
            return Err(invalid("data pointer is null"));
        }
        let r = std::slice::from_raw_parts(r0, n_cells).to_vec();
        let q = std::slice::from_raw_parts(q0, n_cells).to_vec();
        let u = std::slice::from_raw_parts(u0, n_cells + 1).to_vec();
        let data = InitialData::new(r, q, u).map_err(fail)?;
        install(out, build(data, gamma_plus, gamma_minus, mu, cfl).map_err(fail)?);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from `tf_simulation_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_free(sim: *mut TfSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

unsafe fn handle<'a>(sim: *mut TfSimulation) -> Result<&'a mut TfSimulation, TfStatus> {
    sim.as_mut().ok_or_else(|| invalid("simulation handle is null"))
}

/// Takes one step of the stable size; writes it to `dt_out` if non-null.
/// The state is left unchanged on failure.
///
/// # Safety
/// `sim` must be a live handle; `dt_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_step(sim: *mut TfSimulation, dt_out: *mut f64) -> TfStatus {
    guard(|| {
        let s = handle(sim)?;
        let dt = compute_dt(&s.state, &s.grid, &s.scheme).map_err(fail)?;
        s.state = step(&s.state, &s.grid, &s.scheme, dt).map_err(fail)?;
        if !dt_out.is_null() {
            *dt_out = dt;
        }
        Ok(())
    })
}

/// Integrates until time `t_end`, landing on it exactly.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_advance(sim: *mut TfSimulation, t_end: f64) -> TfStatus {
    guard(|| {
        let s = handle(sim)?;
        let mut ignore = |_: &LagrangianState| -> twofluid::Result<()> { Ok(()) };
        let next = run(s.state.clone(), &s.grid, &s.scheme, t_end, Cadence::EveryStep, &mut ignore).map_err(fail)?;
        s.state = next;
        Ok(())
    })
}

/// Current time, or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_time(sim: *const TfSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.state.t())
}

/// Number of cells, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_n_cells(sim: *const TfSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.grid.n_cells())
}

/// Number of steps taken so far, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_step_count(sim: *const TfSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.state.step_count())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), TfStatus> {
    if buf.is_null() {
        return Err(invalid("buffer is null"));
    }
    if len != src.len() {
        return Err(fail(Error::DimensionMismatch {
            what: "output buffer",
            got: len,
            expected: src.len(),
        }));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    Ok(())
}

/// Copies the specific volume (`n_cells` values).
///
/// # Safety
/// `sim` must be a live handle; `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_copy_tau(sim: *const TfSimulation, buf: *mut f64, len: usize) -> TfStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| invalid("simulation handle is null"))?;
        copy_out(s.state.tau(), buf, len)
    })
}

/// Copies the nodal velocity (`n_cells + 1` values).
///
/// # Safety
/// As [`tf_simulation_copy_tau`].
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_copy_u(sim: *const TfSimulation, buf: *mut f64, len: usize) -> TfStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| invalid("simulation handle is null"))?;
        copy_out(s.state.u(), buf, len)
    })
}

/// Evaluates diagnostics of the current state.
///
/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_diagnostics(sim: *const TfSimulation, out: *mut TfDiagnostics) -> TfStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| invalid("simulation handle is null"))?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let r = s.recorder.evaluate(&s.state).map_err(fail)?;
        *out = TfDiagnostics {
            t: r.t,
            mass: r.mass,
            energy: r.energy,
            lyapunov_g: r.lyapunov_g,
            lyapunov_full: r.lyapunov_full,
            min_tau: r.min_tau,
            max_tau: r.max_tau,
            dist_tau: r.dist_tau,
            dist_u: r.dist_u,
        };
        Ok(())
    })
}

/// Steady-state dominant density `Z∞`, or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_simulation_steady_z(sim: *const TfSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.steady.z_inf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Domain("x".into())), TfStatus::Domain);
        assert_eq!(
            status_of(&Error::PositivityLoss { cell: 0, tau: -1.0, t: 0.0 }),
            TfStatus::PositivityLoss
        );
        assert_eq!(status_of(&Error::Assertion("x".into())), TfStatus::Numerical);
    }

    #[test]
    fn error_message_is_thread_local() {
        set_error("here".into());
        let msg = unsafe { CStr::from_ptr(tf_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "here");
        std::thread::spawn(|| {
            let msg = unsafe { CStr::from_ptr(tf_last_error_message()) };
            assert!(msg.to_bytes().is_empty());
        })
        .join()
        .unwrap();
    }
}
