//! Algebraic pressure closure.
//!
//! Given the partial densities `R = α₊ϱ₊` and `Q = α₋ϱ₋` at a material point,
//! the common pressure condition `ϱ₊^{γ₊} = ϱ₋^{γ₋}` determines the dominant
//! density `Z = ϱ₊` as the unique root of
//!
//! ```text
//! f(Z) = Z^{γ-1} (Z - R) - Q = 0,   Z ≥ R,   γ = γ₊ / γ₋,
//! ```
//!
//! and the pressure is `p = Z^{γ₊}`. This module solves for `Z` and provides
//! the analytic derivatives of `Z` with respect to the Lagrangian variables.

use crate::error::{Error, Result};

/// Adiabatic exponents of the two fluids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaLaw {
    gamma_plus: f64,
    gamma_minus: f64,
    gamma: f64,
}

impl GammaLaw {
    pub fn new(gamma_plus: f64, gamma_minus: f64) -> Result<Self> {
        if !(gamma_plus > 1.0 && gamma_plus.is_finite()) {
            return Err(Error::Domain(format!(
                "gamma_plus must exceed 1, got {gamma_plus}"
            )));
        }
        if !(gamma_minus > 1.0 && gamma_minus.is_finite()) {
            return Err(Error::Domain(format!(
                "gamma_minus must exceed 1, got {gamma_minus}"
            )));
        }
        Ok(Self {
            gamma_plus,
            gamma_minus,
            gamma: gamma_plus / gamma_minus,
        })
    }

    #[inline]
    pub fn gamma_plus(&self) -> f64 {
        self.gamma_plus
    }

    #[inline]
    pub fn gamma_minus(&self) -> f64 {
        self.gamma_minus
    }

    /// Ratio `γ₊ / γ₋`.
    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureTolerances {
    /// Absolute tolerance on `|Z^γ − R·Z^{γ−1} − Q|`.
    pub residual_tol: f64,
    pub max_iterations: usize,
}

impl Default for ClosureTolerances {
    fn default() -> Self {
        Self {
            residual_tol: 1e-12,
            max_iterations: 64,
        }
    }
}

impl ClosureTolerances {
    pub fn new(residual_tol: f64, max_iterations: usize) -> Result<Self> {
        if !(residual_tol > 0.0 && residual_tol.is_finite()) {
            return Err(Error::Domain(format!(
                "residual_tol must be positive, got {residual_tol}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        Ok(Self {
            residual_tol,
            max_iterations,
        })
    }
}

/// Closure solution at one material point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureResult {
    /// Dominant-fluid density `ϱ₊`.
    pub z: f64,
    /// Volume fraction `α₊ = R / Z`.
    pub alpha: f64,
    /// Common pressure `Z^{γ₊}`.
    pub p: f64,
    /// Final `|f(Z)|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Closure residual `f(Z) = Z^{γ−1}(Z − R) − Q`, factored so that `Z ≈ R`
/// does not cancel.
#[inline]
pub fn residual(z: f64, r: f64, q: f64, law: &GammaLaw) -> f64 {
    z.powf(law.gamma - 1.0) * (z - r) - q
}

/// `f'(Z) = Z^{γ−2}(γZ − (γ−1)R)`.
#[inline]
pub fn residual_derivative(z: f64, r: f64, law: &GammaLaw) -> f64 {
    let g = law.gamma;
    z.powf(g - 2.0) * (g * z - (g - 1.0) * r)
}

/// Interval `[lo, hi]` guaranteed to contain the closure root.
///
/// The upper end is the a-priori bound `max(2R, (2Q)^{1/γ})`; the lower end
/// uses `R ≤ Z` together with `Q = (1 − R/Z) Z^γ ≤ Z^γ`.
pub fn closure_bracket(r: f64, q: f64, law: &GammaLaw) -> (f64, f64) {
    let inv_gamma = 1.0 / law.gamma;
    let lo = r.max(q.powf(inv_gamma));
    let hi = (2.0 * r).max((2.0 * q).powf(inv_gamma));
    (lo, hi)
}

fn check_densities(r: f64, q: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("R must be positive and finite, got {r}")));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Domain(format!("Q must be positive and finite, got {q}")));
    }
    Ok(())
}

/// Solves the closure for `Z` starting from the bracket end on which Newton's
/// method converges monotonically (`f` is convex for `γ > 1`, concave for `γ < 1`).
pub fn solve_closure(r: f64, q: f64, law: &GammaLaw, tol: &ClosureTolerances) -> Result<ClosureResult> {
    solve_closure_from(r, q, law, tol, None)
}

/// Like [`solve_closure`], but starts Newton from `guess` (clamped into the
/// bracket) when one is given. The solver uses the previous step's root here.
pub fn solve_closure_from(
    r: f64,
    q: f64,
    law: &GammaLaw,
    tol: &ClosureTolerances,
    guess: Option<f64>,
) -> Result<ClosureResult> {
    check_densities(r, q)?;
    let (mut lo, mut hi) = closure_bracket(r, q, law);
    let mut z = match guess {
        Some(g) if g.is_finite() => g.clamp(lo, hi),
        _ if law.gamma >= 1.0 => hi,
        _ => lo,
    };

    let mut iterations = 0;
    loop {
        let f = residual(z, r, q, law);
        if f.abs() <= tol.residual_tol.max(roundoff_floor(z, q, law)) {
            // One extra Newton step takes the root to round-off level.
            let z_polished = z - f / residual_derivative(z, r, law);
            let mut best = (z, f.abs());
            if z_polished >= lo && z_polished <= hi {
                let f_polished = residual(z_polished, r, q, law).abs();
                if f_polished <= best.1 {
                    best = (z_polished, f_polished);
                }
            }
            return Ok(finish(r, best.0, best.1, iterations, law));
        }
        if iterations >= tol.max_iterations {
            return Err(Error::NonConvergence {
                r,
                q,
                residual: f.abs(),
                iterations,
            });
        }

        if f < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let newton = z - f / residual_derivative(z, r, law);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        iterations += 1;
        if next == z {
            // Bracket collapsed to adjacent floats without meeting the tolerance.
            return Err(Error::NonConvergence {
                r,
                q,
                residual: f.abs(),
                iterations,
            });
        }
        z = next;
    }
}

/// Smallest residual resolvable in double precision near `Z`: a few ulps of
/// the largest term `Z^γ`. Only exceeds `1e-12` once `Z^γ` is of order `10³`.
pub fn roundoff_floor(z: f64, q: f64, law: &GammaLaw) -> f64 {
    4.0 * f64::EPSILON * (z.powf(law.gamma) + q)
}

fn finish(r: f64, z: f64, residual: f64, iterations: usize, law: &GammaLaw) -> ClosureResult {
    ClosureResult {
        z,
        alpha: r / z,
        p: z.powf(law.gamma_plus),
        residual,
        iterations,
    }
}

/// Positive denominator shared by all four partial derivatives of `Z`:
/// `γZ^{γ−1} − (R₀τ₀/τ)(γ−1)Z^{γ−2}`.
fn partials_denominator(r0tau0: f64, tau: f64, z: f64, law: &GammaLaw) -> Result<f64> {
    let g = law.gamma;
    let den = g * z.powf(g - 1.0) - (r0tau0 / tau) * (g - 1.0) * z.powf(g - 2.0);
    if den > 0.0 && den.is_finite() {
        Ok(den)
    } else {
        Err(Error::Domain(format!(
            "non-positive closure derivative denominator {den:e} (Z={z} is not a valid root)"
        )))
    }
}

/// `∂Z/∂τ` at fixed material composition, where `R = R₀τ₀/τ`, `Q = Q₀τ₀/τ`.
pub fn dz_dtau(r0tau0: f64, q0tau0: f64, tau: f64, z: f64, law: &GammaLaw) -> Result<f64> {
    let den = partials_denominator(r0tau0, tau, z, law)?;
    let tau2 = tau * tau;
    let num = q0tau0 / tau2 + r0tau0 / tau2 * z.powf(law.gamma - 1.0);
    Ok(-num / den)
}

/// `∂p/∂τ = γ₊ Z^{γ₊−1} ∂Z/∂τ`; always negative.
pub fn dp_dtau(r0tau0: f64, q0tau0: f64, tau: f64, z: f64, law: &GammaLaw) -> Result<f64> {
    let dz = dz_dtau(r0tau0, q0tau0, tau, z, law)?;
    Ok(law.gamma_plus * z.powf(law.gamma_plus - 1.0) * dz)
}

/// Sensitivities of `Z(Q₀, R₀, τ₀, τ)` to the initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZPartials {
    pub dz_dq0: f64,
    pub dz_dr0: f64,
    pub dz_dtau0: f64,
}

pub fn dz_partials(q0: f64, r0: f64, tau0: f64, tau: f64, z: f64, law: &GammaLaw) -> Result<ZPartials> {
    let den = partials_denominator(r0 * tau0, tau, z, law)?;
    let zg1 = z.powf(law.gamma - 1.0);
    let ratio = tau0 / tau;
    Ok(ZPartials {
        dz_dq0: ratio / den,
        dz_dr0: ratio * zg1 / den,
        dz_dtau0: (q0 / tau + r0 / tau * zg1) / den,
    })
}

/// Splits the pressure as `α(R/α)^{γ₊} + (1−α)(Q/(1−α))^{γ₋}`.
///
/// The two parts sum to `Z^{γ₊}` because both phase pressures coincide.
pub fn pressure_decomposition(r: f64, q: f64, result: &ClosureResult, law: &GammaLaw) -> (f64, f64) {
    let z = result.z;
    let alpha = result.alpha;
    // 1 − α computed from Z − R directly.
    let one_minus_alpha = (z - r) / z;
    let rho_plus = r / alpha;
    let rho_minus = q / one_minus_alpha;
    (
        alpha * rho_plus.powf(law.gamma_plus),
        one_minus_alpha * rho_minus.powf(law.gamma_minus),
    )
}
