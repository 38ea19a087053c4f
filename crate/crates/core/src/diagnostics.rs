//! Functionals evaluated on discrete states: mass, energy, Lyapunov
//! functionals, distances to equilibrium, decay fits, the exponential
//! representation of `τ`, and Lipschitz-stability ratios.
//!
//! Cell quantities are integrated with the midpoint rule. Nodal `L²` norms use
//! the average of squares of the two nodes bounding each cell, which reduces
//! to `Σⱼ Δy uⱼ²` because the boundary nodes vanish.

use serde::{Deserialize, Serialize};

use crate::closure::{solve_closure, ClosureTolerances, GammaLaw};
use crate::equilibrium::SteadyState;
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::solver::{Grid, InitialData, LagrangianState, Observer};

/// Default weight of the cross term in [`lyapunov_full`].
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Default Gauss–Legendre order for [`lyapunov_g`].
pub const DEFAULT_QUAD_ORDER: usize = 16;
/// Values below this are dropped by [`fit_decay`].
pub const DEFAULT_DECAY_FLOOR: f64 = 1e-10;

const ENERGY_FORM_TOL: f64 = 1e-12;

/// One row of the time-series output. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    #[serde(rename = "lyapunov_G")]
    pub lyapunov_g: f64,
    pub lyapunov_full: f64,
    pub min_tau: f64,
    pub max_tau: f64,
    #[serde(rename = "min_R")]
    pub min_r: f64,
    #[serde(rename = "max_R")]
    pub max_r: f64,
    #[serde(rename = "min_Q")]
    pub min_q: f64,
    #[serde(rename = "max_Q")]
    pub max_q: f64,
    #[serde(rename = "min_Z")]
    pub min_z: f64,
    #[serde(rename = "max_Z")]
    pub max_z: f64,
    pub dist_tau: f64,
    pub dist_u: f64,
    #[serde(rename = "dist_R")]
    pub dist_r: f64,
    #[serde(rename = "dist_Q")]
    pub dist_q: f64,
}

/// CSV header matching [`DiagnosticsRecord`].
pub const CSV_COLUMNS: [&str; 17] = [
    "t",
    "mass",
    "energy",
    "lyapunov_G",
    "lyapunov_full",
    "min_tau",
    "max_tau",
    "min_R",
    "max_R",
    "min_Q",
    "max_Q",
    "min_Z",
    "max_Z",
    "dist_tau",
    "dist_u",
    "dist_R",
    "dist_Q",
];

impl DiagnosticsRecord {
    /// `‖u‖ + ‖τ − τ∞‖`, the quantity whose exponential decay is fitted.
    pub fn decay_norm(&self) -> f64 {
        self.dist_u + self.dist_tau
    }
}

/// `Σ τᵢ Δy`.
pub fn total_mass(state: &LagrangianState, grid: &Grid) -> f64 {
    state.tau().iter().sum::<f64>() * grid.dy()
}

/// `½‖u‖²` with the average-of-squares node-to-cell transfer.
pub fn kinetic_energy(state: &LagrangianState, grid: &Grid) -> f64 {
    0.5 * state
        .u()
        .windows(2)
        .map(|w| 0.5 * (w[0] * w[0] + w[1] * w[1]))
        .sum::<f64>()
        * grid.dy()
}

/// Internal energy, evaluated in two algebraically equivalent forms that must
/// agree to `1e-12` relative.
pub fn potential_energy(state: &LagrangianState, grid: &Grid, law: &GammaLaw) -> Result<f64> {
    let gp = law.gamma_plus();
    let gm = law.gamma_minus();
    let g = law.gamma();
    let mut by_fraction = 0.0;
    let mut by_density = 0.0;
    for i in 0..state.n_cells() {
        let rt = state.r0_tau0()[i];
        let qt = state.q0_tau0()[i];
        let tau = state.tau()[i];
        let z = state.z()[i];
        let alpha = state.r()[i] / z;
        // 1 − α written as (Z − R)/Z to keep small minority fractions accurate.
        let alpha_minus = (z - state.r()[i]) / z;
        by_fraction += rt.powf(gp) / (gp - 1.0) * (alpha * tau).powf(1.0 - gp)
            + qt.powf(gm) / (gm - 1.0) * (alpha_minus * tau).powf(1.0 - gm);
        by_density += rt * z.powf(gp - 1.0) / (gp - 1.0) + qt * z.powf(gp - g) / (gm - 1.0);
    }
    let dy = grid.dy();
    let (a, b) = (by_fraction * dy, by_density * dy);
    if (a - b).abs() > ENERGY_FORM_TOL * a.abs().max(b.abs()) {
        return Err(Error::Assertion(format!(
            "potential energy forms disagree: {a:e} vs {b:e}"
        )));
    }
    Ok(b)
}

/// Total energy `∫ ½u² + internal energy`.
pub fn energy(state: &LagrangianState, grid: &Grid, law: &GammaLaw) -> Result<f64> {
    Ok(kinetic_energy(state, grid) + potential_energy(state, grid, law)?)
}

/// `‖u‖_{L²}` over nodes.
pub fn velocity_norm(u: &[f64], grid: &Grid) -> f64 {
    (u.iter().map(|v| v * v).sum::<f64>() * grid.dy()).sqrt()
}

/// `‖a − b‖_{L²}` over cells.
pub fn cell_distance(a: &[f64], b: &[f64], grid: &Grid) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * grid.dy()).sqrt()
}

/// `∫ τ p dy`, which stays between fixed positive bounds along a run.
pub fn pressure_volume_integral(state: &LagrangianState, grid: &Grid) -> f64 {
    state.tau().iter().zip(state.p()).map(|(t, p)| t * p).sum::<f64>() * grid.dy()
}

/// Evaluates the relative-entropy integrand `G(y, τ, τ∞)` cell by cell.
#[derive(Debug, Clone)]
pub struct LyapunovEvaluator {
    law: GammaLaw,
    tol: ClosureTolerances,
    rule: GaussLegendre,
    tau_inf: Vec<f64>,
    p_inf: Vec<f64>,
}

impl LyapunovEvaluator {
    /// `r0_tau0`, `q0_tau0` are the conserved composition products of the
    /// simulated material.
    pub fn new(
        steady: &SteadyState,
        r0_tau0: &[f64],
        q0_tau0: &[f64],
        law: GammaLaw,
        tol: ClosureTolerances,
        quad_order: usize,
    ) -> Result<Self> {
        let n = steady.tau_inf.len();
        for (what, len) in [("R0τ0", r0_tau0.len()), ("Q0τ0", q0_tau0.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    got: len,
                    expected: n,
                });
            }
        }
        if quad_order == 0 {
            return Err(Error::Domain("quadrature order must be at least 1".into()));
        }
        let p_inf = (0..n)
            .map(|i| {
                let t = steady.tau_inf[i];
                solve_closure(r0_tau0[i] / t, q0_tau0[i] / t, &law, &tol).map(|c| c.p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            law,
            tol,
            rule: GaussLegendre::new(quad_order),
            tau_inf: steady.tau_inf.clone(),
            p_inf,
        })
    }

    pub fn tau_inf(&self) -> &[f64] {
        &self.tau_inf
    }

    /// `G` for cell `i` of `state`; clamped at zero against round-off.
    pub fn cell_g(&self, state: &LagrangianState, i: usize) -> Result<f64> {
        let t_inf = self.tau_inf[i];
        let tau = state.tau()[i];
        if tau == t_inf {
            return Ok(0.0);
        }
        let rt = state.r0_tau0()[i];
        let qt = state.q0_tau0()[i];
        let p_ref = self.p_inf[i];
        let g = self.rule.try_integrate(t_inf, tau, |xi| {
            solve_closure(rt / xi, qt / xi, &self.law, &self.tol).map(|c| p_ref - c.p)
        })?;
        Ok(g.max(0.0))
    }

    /// `∫ G dy`.
    pub fn lyapunov_g(&self, state: &LagrangianState, grid: &Grid) -> Result<f64> {
        self.check(state)?;
        let mut acc = 0.0;
        for i in 0..state.n_cells() {
            acc += self.cell_g(state, i)?;
        }
        Ok(acc * grid.dy())
    }

    /// `∫ (½u² + G + ε u K) dy` with `K(y) = ∫₀ʸ (τ − τ∞)` at the nodes.
    pub fn lyapunov_full(&self, state: &LagrangianState, grid: &Grid, epsilon: f64) -> Result<f64> {
        let parts = self.lyapunov_parts(state, grid)?;
        Ok(parts.kinetic + parts.g + epsilon * parts.cross)
    }

    pub fn lyapunov_parts(&self, state: &LagrangianState, grid: &Grid) -> Result<LyapunovParts> {
        let g = self.lyapunov_g(state, grid)?;
        Ok(LyapunovParts {
            kinetic: kinetic_energy(state, grid),
            g,
            cross: cross_term(state.u(), state.tau(), &self.tau_inf, grid),
        })
    }

    fn check(&self, state: &LagrangianState) -> Result<()> {
        if state.n_cells() != self.tau_inf.len() {
            return Err(Error::DimensionMismatch {
                what: "state",
                got: state.n_cells(),
                expected: self.tau_inf.len(),
            });
        }
        Ok(())
    }
}

/// The three pieces of the full Lyapunov functional, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParts {
    pub kinetic: f64,
    pub g: f64,
    /// `∫ u K dy`.
    pub cross: f64,
}

fn cross_term(u: &[f64], tau: &[f64], tau_inf: &[f64], grid: &Grid) -> f64 {
    let dy = grid.dy();
    let mut k = 0.0;
    let mut acc = 0.0;
    for j in 1..tau.len() {
        k += (tau[j - 1] - tau_inf[j - 1]) * dy;
        acc += u[j] * k;
    }
    acc * dy
}

/// `∫ G dy` with default closure tolerances.
pub fn lyapunov_g(
    state: &LagrangianState,
    steady: &SteadyState,
    grid: &Grid,
    law: &GammaLaw,
    quad_order: usize,
) -> Result<f64> {
    LyapunovEvaluator::new(
        steady,
        state.r0_tau0(),
        state.q0_tau0(),
        *law,
        ClosureTolerances::default(),
        quad_order,
    )?
    .lyapunov_g(state, grid)
}

/// `∫ (½u² + G + ε u K) dy` with default closure tolerances and quadrature.
pub fn lyapunov_full(
    state: &LagrangianState,
    steady: &SteadyState,
    grid: &Grid,
    law: &GammaLaw,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    LyapunovEvaluator::new(
        steady,
        state.r0_tau0(),
        state.q0_tau0(),
        *law,
        ClosureTolerances::default(),
        DEFAULT_QUAD_ORDER,
    )?
    .lyapunov_full(state, grid, epsilon)
}

/// Builds [`DiagnosticsRecord`]s against a fixed steady state.
#[derive(Debug, Clone)]
pub struct Recorder {
    grid: Grid,
    law: GammaLaw,
    epsilon: f64,
    lyapunov: LyapunovEvaluator,
    r_inf: Vec<f64>,
    q_inf: Vec<f64>,
    records: Vec<DiagnosticsRecord>,
}

impl Recorder {
    pub fn new(
        steady: &SteadyState,
        data: &InitialData,
        grid: Grid,
        law: GammaLaw,
        tol: ClosureTolerances,
        epsilon: f64,
    ) -> Result<Self> {
        let r0_tau0: Vec<f64> = data.r0().iter().zip(data.tau0()).map(|(r, t)| r * t).collect();
        let q0_tau0: Vec<f64> = data.q0().iter().zip(data.tau0()).map(|(q, t)| q * t).collect();
        let lyapunov = LyapunovEvaluator::new(steady, &r0_tau0, &q0_tau0, law, tol, DEFAULT_QUAD_ORDER)?;
        Ok(Self {
            grid,
            law,
            epsilon,
            lyapunov,
            r_inf: steady.r_inf.clone(),
            q_inf: steady.q_inf.clone(),
            records: Vec::new(),
        })
    }

    pub fn evaluate(&self, state: &LagrangianState) -> Result<DiagnosticsRecord> {
        let grid = &self.grid;
        let parts = self.lyapunov.lyapunov_parts(state, grid)?;
        let (min_tau, max_tau) = extrema(state.tau());
        let (min_r, max_r) = extrema(state.r());
        let (min_q, max_q) = extrema(state.q());
        let (min_z, max_z) = extrema(state.z());
        Ok(DiagnosticsRecord {
            t: state.t(),
            mass: total_mass(state, grid),
            energy: parts.kinetic + potential_energy(state, grid, &self.law)?,
            lyapunov_g: parts.g,
            lyapunov_full: parts.kinetic + parts.g + self.epsilon * parts.cross,
            min_tau,
            max_tau,
            min_r,
            max_r,
            min_q,
            max_q,
            min_z,
            max_z,
            dist_tau: cell_distance(state.tau(), self.lyapunov.tau_inf(), grid),
            dist_u: velocity_norm(state.u(), grid),
            dist_r: cell_distance(state.r(), &self.r_inf, grid),
            dist_q: cell_distance(state.q(), &self.q_inf, grid),
        })
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<DiagnosticsRecord> {
        self.records
    }
}

impl Observer for Recorder {
    fn observe(&mut self, state: &LagrangianState) -> Result<()> {
        let rec = self.evaluate(state)?;
        self.records.push(rec);
        Ok(())
    }
}

fn extrema(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Running extrema of the density fields over a record stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityBounds {
    pub min_tau: f64,
    pub max_tau: f64,
    pub min_r: f64,
    pub max_r: f64,
    pub min_q: f64,
    pub max_q: f64,
    pub min_z: f64,
    pub max_z: f64,
    /// Every infimum stayed strictly positive.
    pub all_positive: bool,
}

pub fn density_bounds(records: &[DiagnosticsRecord]) -> Result<DensityBounds> {
    if records.is_empty() {
        return Err(Error::InsufficientData("density bounds need at least one record".into()));
    }
    let inf = f64::INFINITY;
    let mut b = DensityBounds {
        min_tau: inf,
        max_tau: -inf,
        min_r: inf,
        max_r: -inf,
        min_q: inf,
        max_q: -inf,
        min_z: inf,
        max_z: -inf,
        all_positive: false,
    };
    for r in records {
        b.min_tau = b.min_tau.min(r.min_tau);
        b.max_tau = b.max_tau.max(r.max_tau);
        b.min_r = b.min_r.min(r.min_r);
        b.max_r = b.max_r.max(r.max_r);
        b.min_q = b.min_q.min(r.min_q);
        b.max_q = b.max_q.max(r.max_q);
        b.min_z = b.min_z.min(r.min_z);
        b.max_z = b.max_z.max(r.max_z);
    }
    b.all_positive = b.min_tau > 0.0 && b.min_r > 0.0 && b.min_q > 0.0 && b.min_z > 0.0;
    Ok(b)
}

/// Log-linear least-squares fit `v ≈ C₁ e^{−C₂ t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// `C₂`.
    pub rate: f64,
    /// `log C₁`.
    pub log_intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Fits `log v` against `t` over `window`, ignoring values below `floor`.
pub fn fit_decay(series: &[(f64, f64)], window: (f64, f64), floor: f64) -> Result<DecayFit> {
    let (t_lo, t_hi) = window;
    if !(t_lo < t_hi) {
        return Err(Error::Domain(format!("empty fit window [{t_lo}, {t_hi}]")));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| *t >= t_lo && *t <= t_hi && *v >= floor && *v > 0.0 && v.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "{n} usable points in [{t_lo}, {t_hi}] above floor {floor:e}, need 3"
        )));
    }
    let nf = n as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    if stt == 0.0 {
        return Err(Error::InsufficientData("all samples share one time".into()));
    }
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let syy: f64 = pts.iter().map(|p| (p.1 - y_mean).powi(2)).sum();
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        rate: if slope == 0.0 { 0.0 } else { -slope },
        log_intercept: intercept,
        r_squared,
        window,
        n_points: n,
    })
}

/// Checks the exponential representation of the specific volume,
///
/// ```text
/// τ = D (τ₀ + μ⁻¹ ∫₀ᵗ τ p / D ds),   D = exp(μ⁻¹ ∫₀ᵗ σ ds),   σ = μ u_y/τ − p,
/// ```
///
/// where `∫₀ᵗ σ ds` is rebuilt from the velocity as `𝓘(u − u₀) + ∫₀ᵗ⟨σ⟩ds`
/// with `𝓘` the mean-free antiderivative in `y` and `⟨·⟩` the spatial mean.
/// Feed it every time sample in order; time integrals use the trapezoid rule.
#[derive(Debug, Clone)]
pub struct RepresentationTracker {
    dy: f64,
    mu: f64,
    u0: Vec<f64>,
    tau0: Vec<f64>,
    prev: Option<RepSample>,
    mean_sigma_integral: f64,
    inner: Vec<f64>,
    max_residual: f64,
    n_samples: usize,
}

#[derive(Debug, Clone)]
struct RepSample {
    t: f64,
    mean_sigma: f64,
    /// `e^{−S/μ} τ p` per cell.
    integrand: Vec<f64>,
}

impl RepresentationTracker {
    pub fn new(data: &InitialData, grid: &Grid, mu: f64) -> Result<Self> {
        if data.n_cells() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "initial data",
                got: data.n_cells(),
                expected: grid.n_cells(),
            });
        }
        if !(mu > 0.0) {
            return Err(Error::Domain(format!("mu must be positive, got {mu}")));
        }
        Ok(Self {
            dy: grid.dy(),
            mu,
            u0: data.u0().to_vec(),
            tau0: data.tau0().to_vec(),
            prev: None,
            mean_sigma_integral: 0.0,
            inner: vec![0.0; data.n_cells()],
            max_residual: 0.0,
            n_samples: 0,
        })
    }

    /// Incorporates one time sample and returns the residual at that sample.
    pub fn push(&mut self, state: &LagrangianState) -> Result<f64> {
        let n = self.tau0.len();
        if state.n_cells() != n {
            return Err(Error::DimensionMismatch {
                what: "state",
                got: state.n_cells(),
                expected: n,
            });
        }
        let dy = self.dy;
        let mu = self.mu;
        let (u, tau, p) = (state.u(), state.tau(), state.p());

        let mean_sigma = (0..n)
            .map(|i| mu * (u[i + 1] - u[i]) / (dy * tau[i]) - p[i])
            .sum::<f64>()
            * dy;
        let dt = match &self.prev {
            Some(prev) => {
                let dt = state.t() - prev.t;
                if !(dt > 0.0) {
                    return Err(Error::Domain(format!(
                        "samples must be strictly increasing in time ({} after {})",
                        state.t(),
                        prev.t
                    )));
                }
                self.mean_sigma_integral += 0.5 * dt * (prev.mean_sigma + mean_sigma);
                dt
            }
            None => 0.0,
        };

        // Mean-free antiderivative of u − u₀ at cell centers.
        let mut anti = Vec::with_capacity(n);
        let mut acc = 0.0;
        for (i, (ui, u0i)) in u.iter().zip(self.u0.iter()).take(n).enumerate() {
            if i > 0 {
                acc += (ui - u0i) * dy;
            }
            anti.push(acc);
        }
        let anti_mean = anti.iter().sum::<f64>() * dy;

        let mut integrand = Vec::with_capacity(n);
        let mut residual: f64 = 0.0;
        for i in 0..n {
            let s = anti[i] - anti_mean + self.mean_sigma_integral;
            let w = (-s / mu).exp() * tau[i] * p[i];
            if let Some(prev) = &self.prev {
                self.inner[i] += 0.5 * dt * (prev.integrand[i] + w);
            }
            integrand.push(w);
            let rhs = (s / mu).exp() * (self.tau0[i] + self.inner[i] / mu);
            residual = residual.max((tau[i] - rhs).abs());
        }
        self.prev = Some(RepSample {
            t: state.t(),
            mean_sigma,
            integrand,
        });
        self.max_residual = self.max_residual.max(residual);
        self.n_samples += 1;
        Ok(residual)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Maximum residual over all samples so far.
    pub fn residual(&self) -> Result<f64> {
        if self.n_samples < 3 {
            return Err(Error::InsufficientSampling {
                needed: 3,
                got: self.n_samples,
            });
        }
        Ok(self.max_residual)
    }
}

impl Observer for RepresentationTracker {
    fn observe(&mut self, state: &LagrangianState) -> Result<()> {
        self.push(state).map(|_| ())
    }
}

/// Representation residual over an already sampled trajectory.
pub fn representation_residual(
    trajectory: &[LagrangianState],
    data: &InitialData,
    grid: &Grid,
    mu: f64,
) -> Result<f64> {
    let mut tracker = RepresentationTracker::new(data, grid, mu)?;
    for s in trajectory {
        tracker.push(s)?;
    }
    tracker.residual()
}

/// Fields of one run at one sample time, as needed for stability ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySample {
    pub t: f64,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
}

impl From<&LagrangianState> for StabilitySample {
    fn from(s: &LagrangianState) -> Self {
        Self {
            t: s.t(),
            r: s.r().to_vec(),
            q: s.q().to_vec(),
            u: s.u().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `‖ΔR₀‖_∞ + ‖ΔQ₀‖_∞ + ‖Δu₀‖_{L²}`.
    pub input_delta: f64,
    /// `sup_t (‖ΔR‖_∞ + ‖ΔQ‖_∞ + ‖Δu‖_{L²}) + ‖∂_yΔu‖_{L²(0,T;L²)}`.
    pub output_delta: f64,
    pub ratio: f64,
    /// Set when both deltas vanish and `ratio` is reported as 0.
    pub degenerate: bool,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Size of a data perturbation in the norm of the stability estimate.
pub fn input_delta(base: &InitialData, perturbed: &InitialData, grid: &Grid) -> Result<f64> {
    if base.n_cells() != perturbed.n_cells() || base.n_cells() != grid.n_cells() {
        return Err(Error::ConfigMismatch("initial data on different grids".into()));
    }
    let du: Vec<f64> = base.u0().iter().zip(perturbed.u0()).map(|(a, b)| a - b).collect();
    Ok(sup_diff(base.r0(), perturbed.r0()) + sup_diff(base.q0(), perturbed.q0()) + velocity_norm(&du, grid))
}

/// Compares two runs sampled at identical times.
pub fn stability_ratio(
    base: &[StabilitySample],
    perturbed: &[StabilitySample],
    input_delta: f64,
    grid: &Grid,
) -> Result<StabilityReport> {
    if base.len() != perturbed.len() {
        return Err(Error::ConfigMismatch(format!(
            "runs have {} and {} samples",
            base.len(),
            perturbed.len()
        )));
    }
    if base.is_empty() {
        return Err(Error::InsufficientSampling { needed: 1, got: 0 });
    }
    if !(input_delta >= 0.0) {
        return Err(Error::Domain(format!("input delta must be non-negative, got {input_delta}")));
    }
    let n = grid.n_cells();
    let dy = grid.dy();
    let mut sup: f64 = 0.0;
    let mut grad_integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (a, b) in base.iter().zip(perturbed) {
        if a.t != b.t {
            return Err(Error::ConfigMismatch(format!("sample times differ: {} vs {}", a.t, b.t)));
        }
        if a.r.len() != n || b.r.len() != n || a.q.len() != n || b.q.len() != n || a.u.len() != n + 1 || b.u.len() != n + 1
        {
            return Err(Error::ConfigMismatch("runs use different grids".into()));
        }
        let du: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
        sup = sup.max(sup_diff(&a.r, &b.r) + sup_diff(&a.q, &b.q) + velocity_norm(&du, grid));
        let grad2 = du.windows(2).map(|w| ((w[1] - w[0]) / dy).powi(2)).sum::<f64>() * dy;
        if let Some((t_prev, g_prev)) = prev {
            grad_integral += 0.5 * (a.t - t_prev) * (g_prev + grad2);
        }
        prev = Some((a.t, grad2));
    }
    let output_delta = sup + grad_integral.sqrt();
    let (ratio, degenerate) = if input_delta > 0.0 {
        (output_delta / input_delta, false)
    } else if output_delta == 0.0 {
        (0.0, true)
    } else {
        (f64::INFINITY, false)
    };
    Ok(StabilityReport {
        input_delta,
        output_delta,
        ratio,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::dp_dtau;
    use crate::equilibrium::solve_equilibrium;
    use crate::solver::{compute_dt, init_state, run, step, Cadence, SchemeConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn law(gp: f64, gm: f64) -> GammaLaw {
        GammaLaw::new(gp, gm).unwrap()
    }

    fn bump(grid: &Grid) -> InitialData {
        InitialData::sample(
            grid,
            |y| 1.0 + 0.3 * (2.0 * PI * y).sin(),
            |y| 1.0 + 0.3 * (2.0 * PI * y).cos() * (PI * y).sin(),
            |y| 0.1 * (PI * y).sin(),
        )
        .unwrap()
    }

    fn uniform_state(n: usize, l: GammaLaw) -> (Grid, InitialData, LagrangianState) {
        let grid = Grid::new(n).unwrap();
        let data = InitialData::sample(&grid, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let cfg = SchemeConfig::new(l, 1.0).unwrap();
        let s = init_state(&data, &grid, &cfg).unwrap();
        (grid, data, s)
    }

    #[test]
    fn mass_of_constant_volume() {
        let grid = Grid::new(100).unwrap();
        let data = InitialData::sample(&grid, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let cfg = SchemeConfig::new(law(2.0, 1.5), 1.0).unwrap();
        let s = init_state(&data, &grid, &cfg).unwrap();
        assert_relative_eq!(total_mass(&s, &grid), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn mass_of_two_zone_volume() {
        let grid = Grid::new(10).unwrap();
        let data = InitialData::sample(&grid, |y| if y < 0.5 { 1.0 } else { 2.0 }, |_| 2.0, |_| 0.0).unwrap();
        let cfg = SchemeConfig::new(law(2.0, 1.5), 1.0).unwrap();
        let s = init_state(&data, &grid, &cfg).unwrap();
        assert_relative_eq!(total_mass(&s, &grid), (1.0 / 3.0 + 0.25) / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn energy_of_uniform_unit_gamma_state() {
        let (grid, _, s) = uniform_state(8, law(2.0, 2.0));
        assert_eq!(kinetic_energy(&s, &grid), 0.0);
        assert_relative_eq!(energy(&s, &grid, &law(2.0, 2.0)).unwrap(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn kinetic_energy_matches_nodal_sum() {
        let grid = Grid::new(40).unwrap();
        let cfg = SchemeConfig::new(law(2.0, 1.5), 1.0).unwrap();
        let s = init_state(&bump(&grid), &grid, &cfg).unwrap();
        let nodal: f64 = s.u().iter().map(|u| 0.5 * u * u * grid.dy()).sum();
        assert_relative_eq!(kinetic_energy(&s, &grid), nodal, max_relative = 1e-14);
    }

    fn bump_setup(n: usize) -> (Grid, InitialData, SchemeConfig, SteadyState) {
        let grid = Grid::new(n).unwrap();
        let data = bump(&grid);
        let cfg = SchemeConfig::new(law(2.0, 1.5), 1.0).unwrap();
        let steady = solve_equilibrium(data.r0(), data.q0(), data.tau0(), &cfg.law, 1e-12).unwrap();
        (grid, data, cfg, steady)
    }

    #[test]
    fn lyapunov_vanishes_at_steady_state() {
        let (grid, data, cfg, steady) = bump_setup(30);
        let s = LagrangianState::from_fields(&data, &cfg, 0.0, steady.tau_inf.clone(), vec![0.0; 31]).unwrap();
        assert!(lyapunov_g(&s, &steady, &grid, &cfg.law, 16).unwrap() < 1e-20);
        assert!(lyapunov_full(&s, &steady, &grid, &cfg.law, 0.01).unwrap() < 1e-20);
    }

    #[test]
    fn lyapunov_g_quadratic_sandwich() {
        let (grid, data, cfg, steady) = bump_setup(30);
        let s = init_state(&data, &grid, &cfg).unwrap();
        let ev = LyapunovEvaluator::new(&steady, s.r0_tau0(), s.q0_tau0(), cfg.law, cfg.closure, 16).unwrap();
        for i in 0..30 {
            let g = ev.cell_g(&s, i).unwrap();
            let (a, b) = (s.tau()[i], steady.tau_inf[i]);
            let (lo, hi) = (a.min(b), a.max(b));
            let mut cmin = f64::INFINITY;
            let mut cmax: f64 = 0.0;
            for k in 0..=200 {
                let xi = lo + (hi - lo) * k as f64 / 200.0;
                let (rt, qt) = (s.r0_tau0()[i], s.q0_tau0()[i]);
                let z = solve_closure(rt / xi, qt / xi, &cfg.law, &cfg.closure).unwrap().z;
                let c = -dp_dtau(rt, qt, xi, z, &cfg.law).unwrap();
                cmin = cmin.min(c);
                cmax = cmax.max(c);
            }
            let d2 = (a - b).powi(2);
            assert!(g >= 0.5 * cmin * d2 * (1.0 - 1e-6), "cell {i}");
            assert!(g <= 0.5 * cmax * d2 * (1.0 + 1e-6), "cell {i}");
        }
    }

    #[test]
    fn cross_term_cauchy_schwarz() {
        let (grid, data, cfg, steady) = bump_setup(40);
        let mut s = init_state(&data, &grid, &cfg).unwrap();
        let ev = LyapunovEvaluator::new(&steady, s.r0_tau0(), s.q0_tau0(), cfg.law, cfg.closure, 16).unwrap();
        for _ in 0..50 {
            let parts = ev.lyapunov_parts(&s, &grid).unwrap();
            let du = velocity_norm(s.u(), &grid);
            let dt = cell_distance(s.tau(), &steady.tau_inf, &grid);
            let eps = 0.01;
            assert!((eps * parts.cross).abs() <= 0.5 * eps * (du * du + dt * dt) * (1.0 + 1e-12));
            let h = compute_dt(&s, &grid, &cfg).unwrap();
            s = step(&s, &grid, &cfg, h).unwrap();
        }
    }

    #[test]
    fn recorder_tracks_decay() {
        let (grid, data, cfg, steady) = bump_setup(40);
        let s = init_state(&data, &grid, &cfg).unwrap();
        let mut rec = Recorder::new(&steady, &data, grid, cfg.law, cfg.closure, DEFAULT_EPSILON).unwrap();
        run(s, &grid, &cfg, 1.0, Cadence::Interval(0.1), &mut rec).unwrap();
        let r = rec.records();
        assert_eq!(r.len(), 11);
        assert!(r.iter().all(|x| x.lyapunov_g >= 0.0 && x.energy > 0.0 && x.mass > 0.0));
        assert!(r[10].decay_norm() < r[0].decay_norm());
        assert!(r[10].lyapunov_full < r[0].lyapunov_full);
        let b = density_bounds(r).unwrap();
        assert!(b.all_positive);
        assert!(b.min_z > 0.0 && b.min_tau <= r[0].min_tau);
    }

    #[test]
    fn density_bounds_of_uniform_run() {
        let l = law(2.0, 1.5);
        let (grid, data, s) = uniform_state(10, l);
        let steady = solve_equilibrium(data.r0(), data.q0(), data.tau0(), &l, 1e-12).unwrap();
        let cfg = SchemeConfig::new(l, 1.0).unwrap();
        let mut rec = Recorder::new(&steady, &data, grid, l, cfg.closure, DEFAULT_EPSILON).unwrap();
        run(s.clone(), &grid, &cfg, 0.5, Cadence::Interval(0.1), &mut rec).unwrap();
        let b = density_bounds(rec.records()).unwrap();
        assert_eq!(b.min_tau, 0.5);
        assert_eq!(b.max_tau, 0.5);
        assert_eq!(b.min_r, 1.0);
        assert_eq!(b.max_q, 1.0);
        assert_eq!(b.min_z, s.z()[0]);
        assert!(density_bounds(&[]).is_err());
    }

    #[test]
    fn fit_exact_exponential() {
        let series: Vec<(f64, f64)> = (0..=10).map(|k| {
            let t = 0.5 * k as f64;
            (t, 3.0 * (-2.0 * t).exp())
        }).collect();
        let fit = fit_decay(&series, (0.0, 5.0), DEFAULT_DECAY_FLOOR).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-12);
        assert!((fit.log_intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.n_points, 11);
    }

    #[test]
    fn fit_constant_series() {
        let series: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 0.7)).collect();
        let fit = fit_decay(&series, (0.0, 10.0), DEFAULT_DECAY_FLOOR).unwrap();
        assert_eq!(fit.rate, 0.0);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn fit_needs_three_points_above_floor() {
        let series = [(0.0, 1.0), (1.0, 0.1), (2.0, 1e-12), (3.0, 1e-13)];
        assert!(matches!(
            fit_decay(&series, (0.0, 3.0), 1e-10),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_decay(&series, (1.0, 1.0), 1e-10).is_err());
    }

    #[test]
    fn representation_residual_starts_at_zero() {
        let (grid, data, cfg, _) = bump_setup(40);
        let s = init_state(&data, &grid, &cfg).unwrap();
        let mut tr = RepresentationTracker::new(&data, &grid, cfg.mu).unwrap();
        assert_eq!(tr.push(&s).unwrap(), 0.0);
        assert!(matches!(tr.residual(), Err(Error::InsufficientSampling { .. })));
    }

    #[test]
    fn representation_residual_uniform_steady() {
        let l = law(2.0, 1.5);
        let (grid, data, s0) = uniform_state(20, l);
        let cfg = SchemeConfig::new(l, 1.0).unwrap();
        let mut traj = vec![s0.clone()];
        let mut s = s0;
        for _ in 0..5 {
            let h = compute_dt(&s, &grid, &cfg).unwrap();
            s = step(&s, &grid, &cfg, h).unwrap();
            traj.push(s.clone());
        }
        // σ ≡ −p is constant, so only the trapezoid error on τp·e^{pt/μ} remains:
        // |err| ≤ D/μ · T h²/12 · τp (p/μ)² e^{pT/μ} with D = e^{−pT/μ}.
        let (tau, p) = (s.tau()[0], s.p()[0]);
        let h = traj[1].t() - traj[0].t();
        let t_end = s.t();
        let bound = t_end * h * h / 12.0 * tau * p * p * p;
        let res = representation_residual(&traj, &data, &grid, 1.0).unwrap();
        assert!(res > 0.0 && res <= bound * (1.0 + 1e-9), "{res:e} vs {bound:e}");
    }

    #[test]
    fn representation_residual_is_small_and_first_order() {
        let (grid, data, cfg, _) = bump_setup(50);
        let mut errs = Vec::new();
        for cfl in [0.4, 0.2] {
            let c = cfg.with_cfl(cfl).unwrap();
            let s = init_state(&data, &grid, &c).unwrap();
            let mut tr = RepresentationTracker::new(&data, &grid, c.mu).unwrap();
            run(s, &grid, &c, 0.3, Cadence::EveryStep, &mut tr).unwrap();
            errs.push(tr.residual().unwrap());
        }
        assert!(errs[0] < 1e-2);
        assert!(errs[0] / errs[1] > 1.5, "{errs:?}");
    }

    #[test]
    fn stability_of_identical_runs_is_degenerate() {
        let (grid, data, cfg, _) = bump_setup(20);
        let s = init_state(&data, &grid, &cfg).unwrap();
        let samples = vec![StabilitySample::from(&s); 3];
        let rep = stability_ratio(&samples, &samples, 0.0, &grid).unwrap();
        assert_eq!(rep.ratio, 0.0);
        assert!(rep.degenerate);
        assert_eq!(input_delta(&data, &data, &grid).unwrap(), 0.0);
    }

    #[test]
    fn stability_rejects_mismatched_runs() {
        let (grid, data, cfg, _) = bump_setup(20);
        let s = init_state(&data, &grid, &cfg).unwrap();
        let a = vec![StabilitySample::from(&s); 3];
        let b = vec![StabilitySample::from(&s); 2];
        assert!(matches!(stability_ratio(&a, &b, 1.0, &grid), Err(Error::ConfigMismatch(_))));
        let mut c = a.clone();
        c[1].t = 1.0;
        assert!(matches!(stability_ratio(&a, &c, 1.0, &grid), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn stability_delta_of_static_offset() {
        let grid = Grid::new(4).unwrap();
        let a = StabilitySample { t: 0.0, r: vec![1.0; 4], q: vec![1.0; 4], u: vec![0.0; 5] };
        let mut b = a.clone();
        b.r[2] = 1.5;
        b.q[0] = 0.75;
        let rep = stability_ratio(&[a], &[b], 0.5, &grid).unwrap();
        assert_relative_eq!(rep.output_delta, 0.75, max_relative = 1e-15);
        assert_relative_eq!(rep.ratio, 1.5, max_relative = 1e-15);
    }

    #[test]
    fn csv_columns_match_record_fields() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(DiagnosticsRecord {
            t: 0.0, mass: 0.0, energy: 0.0, lyapunov_g: 0.0, lyapunov_full: 0.0, min_tau: 0.0,
            max_tau: 0.0, min_r: 0.0, max_r: 0.0, min_q: 0.0, max_q: 0.0, min_z: 0.0, max_z: 0.0,
            dist_tau: 0.0, dist_u: 0.0, dist_r: 0.0, dist_q: 0.0,
        })
        .unwrap();
        let out = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(out.lines().next().unwrap(), CSV_COLUMNS.join(","));
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous_and_subadditive(
            a in proptest::collection::vec(-5.0f64..5.0, 8),
            b in proptest::collection::vec(-5.0f64..5.0, 8),
            c in -3.0f64..3.0,
        ) {
            let grid = Grid::new(8).unwrap();
            let zero = vec![0.0; 8];
            let na = cell_distance(&a, &zero, &grid);
            let nb = cell_distance(&b, &zero, &grid);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            prop_assert!(cell_distance(&sum, &zero, &grid) <= na + nb + 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            prop_assert!((cell_distance(&scaled, &zero, &grid) - c.abs() * na).abs() <= 1e-12 * (1.0 + na));
            prop_assert!((velocity_norm(&scaled, &grid) - c.abs() * velocity_norm(&a, &grid)).abs() <= 1e-12 * (1.0 + na));
        }
    }
}
