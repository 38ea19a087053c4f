//! Zero-velocity steady state.
//!
//! At equilibrium the pressure is spatially constant, `Z∞^{γ₊} = C⋆`. Each
//! material point keeps its composition (`R∞τ∞ = R₀τ₀`, `Q∞τ∞ = Q₀τ₀`), and
//! substituting into the closure with `Z = Z∞` gives the explicit profile
//!
//! ```text
//! τ∞ = τ₀ (Q₀ Z∞^{−γ} + R₀ Z∞^{−1}).
//! ```
//!
//! `Z∞` is then fixed by requiring `∫τ∞ dy = ∫τ₀ dy`.

use serde::Serialize;

use crate::closure::GammaLaw;
use crate::error::{Error, Result};

const SEARCH_MIN: f64 = 1e-8;
const SEARCH_MAX: f64 = 1e8;
const WIDTH_REL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub z_inf: f64,
    /// `Z∞^{γ₊}`.
    pub c_star: f64,
    pub tau_inf: Vec<f64>,
    pub r_inf: Vec<f64>,
    pub q_inf: Vec<f64>,
    /// `|Σ τ∞ dy − Σ τ₀ dy|`.
    pub mass_residual: f64,
}

/// Equilibrium specific volume for a trial value of `Z∞`.
pub fn tau_inf_profile(z: f64, r0: &[f64], q0: &[f64], tau0: &[f64], law: &GammaLaw) -> Vec<f64> {
    let zmg = z.powf(-law.gamma());
    let zinv = 1.0 / z;
    r0.iter()
        .zip(q0)
        .zip(tau0)
        .map(|((&r, &q), &t)| t * (q * zmg + r * zinv))
        .collect()
}

fn discrete_mass(z: f64, r0: &[f64], q0: &[f64], tau0: &[f64], law: &GammaLaw, dy: f64) -> f64 {
    let zmg = z.powf(-law.gamma());
    let zinv = 1.0 / z;
    r0.iter()
        .zip(q0)
        .zip(tau0)
        .map(|((&r, &q), &t)| t * (q * zmg + r * zinv) * dy)
        .sum()
}

/// Finds the root of a strictly decreasing `excess(Z)` by bracketing outward
/// from `Z = 1` and bisecting to relative width `1e-14`.
///
/// Returns `(Z, |excess(Z)|)`.
pub fn solve_mass_constraint(mut excess: impl FnMut(f64) -> f64) -> Result<(f64, f64)> {
    let mut lo = 1.0;
    let mut hi = 1.0;
    let mut g_lo = excess(lo);
    let mut g_hi = g_lo;
    if g_lo == 0.0 {
        return Ok((1.0, 0.0));
    }
    if g_lo > 0.0 {
        while g_hi > 0.0 {
            lo = hi;
            g_lo = g_hi;
            hi *= 2.0;
            if hi > SEARCH_MAX {
                return Err(Error::BracketFailure {
                    lo: SEARCH_MIN,
                    hi: SEARCH_MAX,
                });
            }
            g_hi = excess(hi);
        }
    } else {
        while g_lo < 0.0 {
            hi = lo;
            g_hi = g_lo;
            lo *= 0.5;
            if lo < SEARCH_MIN {
                return Err(Error::BracketFailure {
                    lo: SEARCH_MIN,
                    hi: SEARCH_MAX,
                });
            }
            g_lo = excess(lo);
        }
    }
    if !(g_lo.is_finite() && g_hi.is_finite()) {
        return Err(Error::BracketFailure { lo, hi });
    }

    while hi - lo > WIDTH_REL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = excess(mid);
        if g == 0.0 {
            return Ok((mid, 0.0));
        }
        if g > 0.0 {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
            g_hi = g;
        }
    }
    Ok(if g_lo.abs() <= g_hi.abs() {
        (lo, g_lo.abs())
    } else {
        (hi, g_hi.abs())
    })
}

/// Discrete steady state for the cell data `(R₀, Q₀, τ₀)` on a uniform grid
/// of `r0.len()` cells, using the same midpoint mass as the solver.
pub fn solve_equilibrium(
    r0: &[f64],
    q0: &[f64],
    tau0: &[f64],
    law: &GammaLaw,
    mass_tol: f64,
) -> Result<SteadyState> {
    let n = r0.len();
    if n == 0 {
        return Err(Error::Domain("empty cell arrays".into()));
    }
    for (what, len) in [("Q0", q0.len()), ("tau0", tau0.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                got: len,
                expected: n,
            });
        }
    }
    if r0.iter().chain(q0).chain(tau0).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain("initial data must be positive and finite".into()));
    }
    if !(mass_tol > 0.0) {
        return Err(Error::Domain(format!("mass_tol must be positive, got {mass_tol}")));
    }

    let dy = 1.0 / n as f64;
    let target: f64 = tau0.iter().map(|&t| t * dy).sum();
    let (z_inf, mass_residual) =
        solve_mass_constraint(|z| discrete_mass(z, r0, q0, tau0, law, dy) - target)?;
    if mass_residual > mass_tol {
        return Err(Error::Assertion(format!(
            "steady-state mass residual {mass_residual:e} exceeds tolerance {mass_tol:e}"
        )));
    }

    let tau_inf = tau_inf_profile(z_inf, r0, q0, tau0, law);
    let r_inf = r0.iter().zip(tau0).zip(&tau_inf).map(|((r, t0), t)| r * t0 / t).collect();
    let q_inf = q0.iter().zip(tau0).zip(&tau_inf).map(|((q, t0), t)| q * t0 / t).collect();
    Ok(SteadyState {
        z_inf,
        c_star: z_inf.powf(law.gamma_plus()),
        tau_inf,
        r_inf,
        q_inf,
        mass_residual,
    })
}
