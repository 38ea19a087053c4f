//! Staggered Lagrangian scheme.
//!
//! Cells carry `τ, R, Q, Z, p`; nodes carry `u`. Cell `i` (0-based) sits
//! between nodes `i` and `i + 1`, and the two boundary nodes are pinned to
//! zero velocity. One step is
//!
//! 1. `τᵢ ← τᵢ + Δt (u_{i+1} − u_i)/Δy` with the old velocity,
//! 2. closure re-solve for `Z, p` from `(R₀τ₀/τ, Q₀τ₀/τ)`,
//! 3. one tridiagonal solve for the new velocity, viscosity implicit and the
//!    pressure gradient evaluated at the new `τ`.
//!
//! Partial densities are never evolved: `R = R₀τ₀/τ` and `Q = Q₀τ₀/τ` hold by
//! construction.

use std::sync::Arc;

use crate::closure::{dp_dtau, solve_closure_from, ClosureTolerances, GammaLaw};
use crate::error::{Error, Result};
use crate::interp::{invert_sum, MonotoneCubic};
use crate::tridiag;

/// Uniform grid on the unit mass interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n_cells: usize,
    dy: f64,
}

impl Grid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 cells, got {n_cells}")));
        }
        Ok(Self {
            n_cells,
            dy: 1.0 / n_cells as f64,
        })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dy
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }
}

/// Initial partial densities on cells and velocity on nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    r0: Vec<f64>,
    q0: Vec<f64>,
    u0: Vec<f64>,
    tau0: Vec<f64>,
}

impl InitialData {
    /// Validates positivity and the no-slip endpoints; `τ₀ = 1/(R₀+Q₀)`.
    pub fn new(r0: Vec<f64>, q0: Vec<f64>, u0: Vec<f64>) -> Result<Self> {
        let n = r0.len();
        if n < 2 {
            return Err(Error::Domain(format!("need at least 2 cells, got {n}")));
        }
        if q0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "Q0",
                got: q0.len(),
                expected: n,
            });
        }
        if u0.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                what: "u0",
                got: u0.len(),
                expected: n + 1,
            });
        }
        if let Some(i) = r0.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("R0[{i}] = {} is not positive", r0[i])));
        }
        if let Some(i) = q0.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("Q0[{i}] = {} is not positive", q0[i])));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("u0 must be finite".into()));
        }
        if u0[0] != 0.0 || u0[n] != 0.0 {
            return Err(Error::Domain("u0 must vanish at both boundary nodes".into()));
        }
        let tau0 = r0.iter().zip(&q0).map(|(r, q)| 1.0 / (r + q)).collect();
        Ok(Self { r0, q0, u0, tau0 })
    }

    /// Samples `R₀, Q₀` at cell centers and `u₀` at nodes; boundary velocities
    /// are set to exactly zero.
    pub fn sample(
        grid: &Grid,
        r0: impl Fn(f64) -> f64,
        q0: impl Fn(f64) -> f64,
        u0: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let n = grid.n_cells();
        let r = (0..n).map(|i| r0(grid.cell_center(i))).collect();
        let q = (0..n).map(|i| q0(grid.cell_center(i))).collect();
        let mut u: Vec<f64> = (0..=n).map(|j| u0(grid.node(j))).collect();
        u[0] = 0.0;
        u[n] = 0.0;
        Self::new(r, q, u)
    }

    pub fn n_cells(&self) -> usize {
        self.r0.len()
    }

    pub fn r0(&self) -> &[f64] {
        &self.r0
    }

    pub fn q0(&self) -> &[f64] {
        &self.q0
    }

    pub fn u0(&self) -> &[f64] {
        &self.u0
    }

    pub fn tau0(&self) -> &[f64] {
        &self.tau0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub law: GammaLaw,
    /// Viscosity coefficient.
    pub mu: f64,
    /// Acoustic safety factor.
    pub cfl: f64,
    /// Largest allowed fractional change of `τ` in one step.
    pub positivity_factor: f64,
    pub closure: ClosureTolerances,
}

impl SchemeConfig {
    pub fn new(law: GammaLaw, mu: f64) -> Result<Self> {
        let cfg = Self {
            law,
            mu,
            cfl: 0.4,
            positivity_factor: 0.5,
            closure: ClosureTolerances::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cfl(mut self, cfl: f64) -> Result<Self> {
        self.cfl = cfl;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Domain(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::Domain(format!("cfl must lie in (0, 1), got {}", self.cfl)));
        }
        if !(self.positivity_factor > 0.0 && self.positivity_factor < 1.0) {
            return Err(Error::Domain(format!(
                "positivity_factor must lie in (0, 1), got {}",
                self.positivity_factor
            )));
        }
        Ok(())
    }
}

/// Solution at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    t: f64,
    step_count: usize,
    tau: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    q: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    r0_tau0: Arc<[f64]>,
    q0_tau0: Arc<[f64]>,
}

impl LagrangianState {
    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn n_cells(&self) -> usize {
        self.tau.len()
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Nodal velocity, boundary nodes included.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Conserved `R₀τ₀` per cell.
    pub fn r0_tau0(&self) -> &[f64] {
        &self.r0_tau0
    }

    /// Conserved `Q₀τ₀` per cell.
    pub fn q0_tau0(&self) -> &[f64] {
        &self.q0_tau0
    }

    /// Builds a state at time `t` from arbitrary `τ > 0` and `u` with zero
    /// endpoints, for the material composition of `data`.
    pub fn from_fields(
        data: &InitialData,
        cfg: &SchemeConfig,
        t: f64,
        tau: Vec<f64>,
        u: Vec<f64>,
    ) -> Result<Self> {
        let n = data.n_cells();
        if tau.len() != n {
            return Err(Error::DimensionMismatch {
                what: "tau",
                got: tau.len(),
                expected: n,
            });
        }
        if u.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                what: "u",
                got: u.len(),
                expected: n + 1,
            });
        }
        if u[0] != 0.0 || u[n] != 0.0 {
            return Err(Error::Domain("velocity must vanish at both boundary nodes".into()));
        }
        if let Some(cell) = tau.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::PositivityLoss {
                cell,
                tau: tau[cell],
                t,
            });
        }
        let r0_tau0: Arc<[f64]> = data.r0.iter().zip(&data.tau0).map(|(r, t)| r * t).collect();
        let q0_tau0: Arc<[f64]> = data.q0.iter().zip(&data.tau0).map(|(q, t)| q * t).collect();
        let mut state = Self {
            t,
            step_count: 0,
            tau,
            u,
            r: Vec::new(),
            q: Vec::new(),
            z: Vec::new(),
            p: Vec::new(),
            r0_tau0,
            q0_tau0,
        };
        let (r, q, z, p) = state.closure_fields(&state.tau, None, cfg)?;
        state.r = r;
        state.q = q;
        state.z = z;
        state.p = p;
        Ok(state)
    }

    #[allow(clippy::type_complexity)]
    fn closure_fields(
        &self,
        tau: &[f64],
        guess: Option<&[f64]>,
        cfg: &SchemeConfig,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = tau.len();
        let mut r = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        for i in 0..n {
            let ri = self.r0_tau0[i] / tau[i];
            let qi = self.q0_tau0[i] / tau[i];
            let res = solve_closure_from(ri, qi, &cfg.law, &cfg.closure, guess.map(|g| g[i]))?;
            r.push(ri);
            q.push(qi);
            z.push(res.z);
            p.push(res.p);
        }
        Ok((r, q, z, p))
    }
}

/// State at `t = 0` with `τ = τ₀`, `u = u₀`.
pub fn init_state(data: &InitialData, grid: &Grid, cfg: &SchemeConfig) -> Result<LagrangianState> {
    if data.n_cells() != grid.n_cells() {
        return Err(Error::DimensionMismatch {
            what: "initial data",
            got: data.n_cells(),
            expected: grid.n_cells(),
        });
    }
    cfg.validate()?;
    LagrangianState::from_fields(data, cfg, 0.0, data.tau0.clone(), data.u0.clone())
}

/// Stable step size: acoustic CFL bound from `√(−∂p/∂τ)` combined with a cap
/// on the fractional change of `τ`.
pub fn compute_dt(state: &LagrangianState, grid: &Grid, cfg: &SchemeConfig) -> Result<f64> {
    let dy = grid.dy();
    let mut dt = f64::INFINITY;
    for i in 0..state.n_cells() {
        let dpdt = dp_dtau(state.r0_tau0[i], state.q0_tau0[i], state.tau[i], state.z[i], &cfg.law)?;
        let c2 = (-dpdt).max(f64::MIN_POSITIVE);
        dt = dt.min(cfg.cfl * dy / c2.sqrt());
        let du = (state.u[i + 1] - state.u[i]).abs();
        if du > 0.0 {
            dt = dt.min(cfg.positivity_factor * state.tau[i] * dy / du);
        }
    }
    Ok(dt)
}

/// Advances `state` by one step of size `dt`.
pub fn step(state: &LagrangianState, grid: &Grid, cfg: &SchemeConfig, dt: f64) -> Result<LagrangianState> {
    let n = grid.n_cells();
    if state.n_cells() != n {
        return Err(Error::DimensionMismatch {
            what: "state",
            got: state.n_cells(),
            expected: n,
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let dy = grid.dy();
    let t_new = state.t + dt;

    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let ti = state.tau[i] + dt * (state.u[i + 1] - state.u[i]) / dy;
        if !(ti > 0.0) {
            return Err(Error::PositivityLoss {
                cell: i,
                tau: ti,
                t: t_new,
            });
        }
        tau.push(ti);
    }

    let (r, q, z, p) = state.closure_fields(&tau, Some(&state.z), cfg)?;

    // Interior nodes 1..n-1; unknown k corresponds to node k + 1.
    let m = n - 1;
    let coef: Vec<f64> = tau.iter().map(|t| cfg.mu * dt / (dy * dy * t)).collect();
    let mut diag = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for j in 1..n {
        diag.push(1.0 + coef[j - 1] + coef[j]);
        rhs.push(state.u[j] - dt * (p[j] - p[j - 1]) / dy);
    }
    let off: Vec<f64> = (1..m).map(|k| -coef[k]).collect();
    debug_assert!((0..m).all(|k| {
        let left = if k > 0 { off[k - 1].abs() } else { 0.0 };
        let right = if k + 1 < m { off[k].abs() } else { 0.0 };
        diag[k] > 0.0 && diag[k] > left + right
    }));
    tridiag::solve_symmetric(&mut diag, &off, &mut rhs)?;

    let mut u = Vec::with_capacity(n + 1);
    u.push(0.0);
    u.extend_from_slice(&rhs);
    u.push(0.0);

    Ok(LagrangianState {
        t: t_new,
        step_count: state.step_count + 1,
        tau,
        u,
        r,
        q,
        z,
        p,
        r0_tau0: Arc::clone(&state.r0_tau0),
        q0_tau0: Arc::clone(&state.q0_tau0),
    })
}

/// When the observer is invoked during [`run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cadence {
    /// At the start and after every step.
    EveryStep,
    /// At `t₀ + kΔ` and at `t_end`; steps are clipped to land on these instants.
    Interval(f64),
}

pub trait Observer {
    /// Called at every sampling instant of the cadence.
    fn observe(&mut self, state: &LagrangianState) -> Result<()>;

    /// Called after every step, sampled or not.
    fn after_step(&mut self, _state: &LagrangianState) -> Result<()> {
        Ok(())
    }
}

impl<F> Observer for F
where
    F: FnMut(&LagrangianState) -> Result<()>,
{
    fn observe(&mut self, state: &LagrangianState) -> Result<()> {
        self(state)
    }
}

/// Integrates up to `t_end`, landing on it exactly.
pub fn run(
    state: LagrangianState,
    grid: &Grid,
    cfg: &SchemeConfig,
    t_end: f64,
    cadence: Cadence,
    observer: &mut dyn Observer,
) -> Result<LagrangianState> {
    if t_end == state.t {
        return Ok(state);
    }
    if !(t_end > state.t) {
        return Err(Error::Domain(format!(
            "t_end = {t_end} precedes the current time {}",
            state.t
        )));
    }
    if let Cadence::Interval(dt_obs) = cadence {
        if !(dt_obs > 0.0 && dt_obs.is_finite()) {
            return Err(Error::Domain(format!("observer cadence must be positive, got {dt_obs}")));
        }
    }

    let t0 = state.t;
    let snap = 1e-12 * t_end.abs().max(1.0);
    let mut state = state;
    let mut k = 1usize;
    let next_sample = |k: usize| match cadence {
        Cadence::EveryStep => t_end,
        Cadence::Interval(dt_obs) => {
            let ts = t0 + k as f64 * dt_obs;
            if ts > t_end - snap {
                t_end
            } else {
                ts
            }
        }
    };
    let mut target = next_sample(k);
    observer.observe(&state)?;
    loop {
        let dt_stable = compute_dt(&state, grid, cfg)?;
        let remaining = target - state.t;
        let landing = dt_stable >= remaining - snap;
        let dt = if landing { remaining } else { dt_stable };
        state = step(&state, grid, cfg, dt)?;
        if landing {
            state.t = target;
        }
        observer.after_step(&state)?;
        let at_sample = matches!(cadence, Cadence::EveryStep) || landing;
        if at_sample {
            observer.observe(&state)?;
        }
        if landing {
            if target == t_end {
                return Ok(state);
            }
            k += 1;
            target = next_sample(k);
        }
    }
}

/// Takes exactly `n_steps` CFL-limited steps, observing the initial state and
/// every step.
pub fn run_steps(
    state: LagrangianState,
    grid: &Grid,
    cfg: &SchemeConfig,
    n_steps: usize,
    observer: &mut dyn Observer,
) -> Result<LagrangianState> {
    let mut state = state;
    observer.observe(&state)?;
    for _ in 0..n_steps {
        let dt = compute_dt(&state, grid, cfg)?;
        state = step(&state, grid, cfg, dt)?;
        observer.after_step(&state)?;
        observer.observe(&state)?;
    }
    Ok(state)
}

/// Lagrangian data produced from Eulerian samples, with the mass scale that
/// was divided out.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedData {
    pub data: InitialData,
    /// Total mass `M = ∫(R+Q)dx` of the input; densities were divided by it.
    pub mass_scale: f64,
}

/// Converts cell-centered Eulerian samples on a uniform `x`-grid over `[0, 1]`
/// (velocity on the `x`-nodes) to `n_cells` Lagrangian cells of equal mass.
///
/// The cumulative `R`- and `Q`-masses are known at the `x`-nodes. Each is
/// interpolated with a monotone cubic, so the cumulative mass `y(x)` is
/// strictly increasing and can be inverted at the uniform mass nodes. Each
/// output cell receives the conservative averages of `R` and `Q` over its
/// `x`-extent, and `u` is linearly interpolated at the mapped node positions.
pub fn eulerian_to_lagrangian(r: &[f64], q: &[f64], u: &[f64], n_cells: usize) -> Result<NormalizedData> {
    let nx = r.len();
    if nx == 0 || q.len() != nx {
        return Err(Error::DimensionMismatch {
            what: "Eulerian Q",
            got: q.len(),
            expected: nx,
        });
    }
    if u.len() != nx + 1 {
        return Err(Error::DimensionMismatch {
            what: "Eulerian u",
            got: u.len(),
            expected: nx + 1,
        });
    }
    if r.iter().chain(q).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain("Eulerian densities must be positive".into()));
    }
    let grid = Grid::new(n_cells)?;
    let dx = 1.0 / nx as f64;
    let mass: f64 = r.iter().zip(q).map(|(a, b)| (a + b) * dx).sum();

    let xs: Vec<f64> = (0..=nx).map(|m| m as f64 * dx).collect();
    let mut cum_r = vec![0.0; nx + 1];
    let mut cum_q = vec![0.0; nx + 1];
    for m in 0..nx {
        cum_r[m + 1] = cum_r[m] + r[m] * dx / mass;
        cum_q[m + 1] = cum_q[m] + q[m] * dx / mass;
    }
    let scale = cum_r[nx] + cum_q[nx];
    for v in cum_r.iter_mut().chain(cum_q.iter_mut()) {
        *v /= scale;
    }
    let cr = MonotoneCubic::new(xs.clone(), cum_r);
    let cq = MonotoneCubic::new(xs, cum_q);

    let x_nodes: Vec<f64> = (0..=n_cells)
        .map(|j| match j {
            0 => 0.0,
            j if j == n_cells => 1.0,
            j => invert_sum(&cr, &cq, grid.node(j)),
        })
        .collect();

    let mut r_out = Vec::with_capacity(n_cells);
    let mut q_out = Vec::with_capacity(n_cells);
    for i in 0..n_cells {
        let (xa, xb) = (x_nodes[i], x_nodes[i + 1]);
        let len = xb - xa;
        r_out.push((cr.eval(xb) - cr.eval(xa)) / len);
        q_out.push((cq.eval(xb) - cq.eval(xa)) / len);
    }

    let interp_u = |x: f64| -> f64 {
        let s = (x / dx).clamp(0.0, nx as f64);
        let k = (s.floor() as usize).min(nx - 1);
        let w = s - k as f64;
        u[k] * (1.0 - w) + u[k + 1] * w
    };
    let mut u_out: Vec<f64> = x_nodes.iter().map(|&x| interp_u(x)).collect();
    u_out[0] = 0.0;
    u_out[n_cells] = 0.0;

    Ok(NormalizedData {
        data: InitialData::new(r_out, q_out, u_out)?,
        mass_scale: mass,
    })
}

/// Physical-space view of a Lagrangian state.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianProfile {
    /// `x(y_j) = Σ_{i<j} τᵢ Δy`.
    pub x_nodes: Vec<f64>,
    pub x_centers: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn lagrangian_to_eulerian(state: &LagrangianState, grid: &Grid) -> EulerianProfile {
    let dy = grid.dy();
    let mut x_nodes = Vec::with_capacity(state.n_cells() + 1);
    let mut x = 0.0;
    x_nodes.push(x);
    for &t in state.tau() {
        x += t * dy;
        x_nodes.push(x);
    }
    let x_centers = x_nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    EulerianProfile {
        x_nodes,
        x_centers,
        r: state.r.clone(),
        q: state.q.clone(),
        u: state.u.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::solve_closure;
    use crate::equilibrium::solve_equilibrium;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cfg(gp: f64, gm: f64) -> SchemeConfig {
        SchemeConfig::new(GammaLaw::new(gp, gm).unwrap(), 1.0).unwrap()
    }

    fn bump_data(grid: &Grid) -> InitialData {
        InitialData::sample(
            grid,
            |y| 1.0 + 0.3 * (2.0 * PI * y).sin(),
            |y| 1.0 + 0.3 * (2.0 * PI * y).cos() * (PI * y).sin(),
            |y| 0.1 * (PI * y).sin(),
        )
        .unwrap()
    }

    #[test]
    fn grid_spacing() {
        let g = Grid::new(4).unwrap();
        assert_eq!(g.dy() * 4.0, 1.0);
        assert_eq!(g.cell_center(0), 0.125);
        assert!(Grid::new(1).is_err());
    }

    #[test]
    fn initial_data_invariants() {
        assert!(InitialData::new(vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0; 3]).is_err());
        assert!(InitialData::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![0.1, 0.0, 0.0]).is_err());
        assert!(matches!(
            InitialData::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0; 2]),
            Err(Error::DimensionMismatch { .. })
        ));
        let d = InitialData::new(vec![1.0, 3.0], vec![1.0, 1.0], vec![0.0, 0.2, 0.0]).unwrap();
        assert_eq!(d.tau0(), &[0.5, 0.25]);
    }

    #[test]
    fn init_uniform_unit_gamma() {
        let grid = Grid::new(10).unwrap();
        let c = cfg(2.0, 2.0);
        let data = InitialData::sample(&grid, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let s = init_state(&data, &grid, &c).unwrap();
        assert!(s.z().iter().all(|&z| z == 2.0));
        assert!(s.p().iter().all(|&p| p == 4.0));
    }

    #[test]
    fn init_golden_ratio() {
        let grid = Grid::new(10).unwrap();
        let c = cfg(4.0, 2.0);
        let data = InitialData::sample(&grid, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let s = init_state(&data, &grid, &c).unwrap();
        let phi = 0.5 * (1.0 + 5f64.sqrt());
        for &z in s.z() {
            assert_relative_eq!(z, phi, max_relative = 1e-14);
        }
    }

    #[test]
    fn init_density_sum_is_inverse_volume() {
        let grid = Grid::new(37).unwrap();
        let s = init_state(&bump_data(&grid), &grid, &cfg(2.0, 1.5)).unwrap();
        for i in 0..37 {
            assert_relative_eq!(s.r()[i] + s.q()[i], 1.0 / s.tau()[i], max_relative = 1e-15);
        }
    }

    #[test]
    fn init_rejects_grid_mismatch() {
        let data = bump_data(&Grid::new(8).unwrap());
        assert!(matches!(
            init_state(&data, &Grid::new(9).unwrap(), &cfg(2.0, 1.5)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dt_for_stationary_uniform_state() {
        let grid = Grid::new(20).unwrap();
        let c = cfg(2.0, 1.5);
        let data = InitialData::sample(&grid, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let s = init_state(&data, &grid, &c).unwrap();
        let dt = compute_dt(&s, &grid, &c).unwrap();
        let dpdt = dp_dtau(0.5, 0.5, 0.5, s.z()[0], &c.law).unwrap();
        assert_relative_eq!(dt, c.cfl * grid.dy() / (-dpdt).sqrt(), max_relative = 1e-14);

        let fine = Grid::new(40).unwrap();
        let data = InitialData::sample(&fine, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let s2 = init_state(&data, &fine, &c).unwrap();
        assert_relative_eq!(compute_dt(&s2, &fine, &c).unwrap(), 0.5 * dt, max_relative = 1e-14);
    }

    #[test]
    fn dt_respects_positivity_cap() {
        let grid = Grid::new(200).unwrap();
        let c = cfg(2.0, 1.5);
        let data = bump_data(&grid);
        let s = init_state(&data, &grid, &c).unwrap();
        let dt = compute_dt(&s, &grid, &c).unwrap();
        assert!(dt > 0.0);
        let max_du = s.u().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let min_tau = s.tau().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(dt * max_du / grid.dy() <= c.positivity_factor * min_tau);

        // A violent velocity field activates the cap.
        let mut u = vec![0.0; 201];
        u[100] = 50.0;
        let s = LagrangianState::from_fields(&data, &c, 0.0, data.tau0().to_vec(), u).unwrap();
        let dt = compute_dt(&s, &grid, &c).unwrap();
        let tau_min = s.tau()[99].min(s.tau()[100]);
        assert_relative_eq!(dt, c.positivity_factor * tau_min * grid.dy() / 50.0, max_relative = 1e-12);
    }

    #[test]
    fn uniform_steady_data_is_a_fixed_point() {
        let grid = Grid::new(16).unwrap();
        let c = cfg(2.0, 1.5);
        let data = InitialData::sample(&grid, |_| 1.0, |_| 1.0, |_| 0.0).unwrap();
        let s0 = init_state(&data, &grid, &c).unwrap();
        let mut s = s0.clone();
        for _ in 0..20 {
            let dt = compute_dt(&s, &grid, &c).unwrap();
            s = step(&s, &grid, &c, dt).unwrap();
        }
        assert_eq!(s.tau(), s0.tau());
        assert!(s.u().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn discrete_steady_state_is_a_fixed_point() {
        let grid = Grid::new(40).unwrap();
        let c = cfg(2.0, 1.5);
        let data = bump_data(&grid);
        let steady = solve_equilibrium(data.r0(), data.q0(), data.tau0(), &c.law, 1e-12).unwrap();
        let s0 = LagrangianState::from_fields(&data, &c, 0.0, steady.tau_inf.clone(), vec![0.0; 41]).unwrap();
        let mut s = s0.clone();
        for _ in 0..50 {
            let dt = compute_dt(&s, &grid, &c).unwrap();
            s = step(&s, &grid, &c, dt).unwrap();
        }
        for i in 0..40 {
            assert!((s.tau()[i] - s0.tau()[i]).abs() < 1e-13);
        }
        assert!(s.u().iter().all(|u| u.abs() < 1e-12));
    }

    #[test]
    fn step_preserves_invariants() {
        let grid = Grid::new(50).unwrap();
        let c = cfg(2.0, 1.5);
        let data = bump_data(&grid);
        let s0 = init_state(&data, &grid, &c).unwrap();
        let m0: f64 = s0.tau().iter().map(|t| t * grid.dy()).sum();
        let mut s = s0.clone();
        for _ in 0..200 {
            let dt = compute_dt(&s, &grid, &c).unwrap();
            s = step(&s, &grid, &c, dt).unwrap();
            assert_eq!(s.u()[0], 0.0);
            assert_eq!(s.u()[50], 0.0);
            let m: f64 = s.tau().iter().map(|t| t * grid.dy()).sum();
            assert!(((m - m0) / m0).abs() < 1e-14);
            for i in 0..50 {
                assert_relative_eq!(s.r()[i] * s.tau()[i], s.r0_tau0()[i], max_relative = 1e-15);
                assert_relative_eq!(s.q()[i] * s.tau()[i], s.q0_tau0()[i], max_relative = 1e-15);
                assert!(s.r()[i] < s.z()[i]);
                let res = solve_closure(s.r()[i], s.q()[i], &c.law, &c.closure).unwrap();
                assert_relative_eq!(res.z, s.z()[i], max_relative = 1e-12);
            }
        }
        assert_eq!(s.step_count(), 200);
    }

    #[test]
    fn oversized_step_reports_positivity_loss() {
        let grid = Grid::new(10).unwrap();
        let c = cfg(2.0, 1.5);
        let data = bump_data(&grid);
        let mut u = vec![0.0; 11];
        u[5] = -10.0;
        let s = LagrangianState::from_fields(&data, &c, 0.0, data.tau0().to_vec(), u).unwrap();
        assert!(matches!(step(&s, &grid, &c, 1.0), Err(Error::PositivityLoss { .. })));
    }

    #[test]
    fn run_to_current_time_is_a_no_op() {
        let grid = Grid::new(10).unwrap();
        let c = cfg(2.0, 1.5);
        let s = init_state(&bump_data(&grid), &grid, &c).unwrap();
        let mut count = 0;
        let mut obs = |_: &LagrangianState| -> Result<()> {
            count += 1;
            Ok(())
        };
        let out = run(s.clone(), &grid, &c, 0.0, Cadence::Interval(0.1), &mut obs).unwrap();
        assert_eq!(out, s);
        assert_eq!(count, 0);
    }

    #[test]
    fn run_observes_on_cadence() {
        let grid = Grid::new(20).unwrap();
        let c = cfg(2.0, 1.5);
        let s = init_state(&bump_data(&grid), &grid, &c).unwrap();
        let mut times = Vec::new();
        let mut obs = |st: &LagrangianState| -> Result<()> {
            times.push(st.t());
            Ok(())
        };
        let out = run(s, &grid, &c, 1.0, Cadence::Interval(0.1), &mut obs).unwrap();
        assert_eq!(times.len(), 11);
        for (k, t) in times.iter().enumerate() {
            assert!((t - 0.1 * k as f64).abs() < 1e-12, "sample {k} at {t}");
        }
        assert_eq!(out.t(), 1.0);
    }

    #[test]
    fn run_rejects_backwards_time() {
        let grid = Grid::new(10).unwrap();
        let c = cfg(2.0, 1.5);
        let s = init_state(&bump_data(&grid), &grid, &c).unwrap();
        let mut obs = |_: &LagrangianState| -> Result<()> { Ok(()) };
        assert!(run(s, &grid, &c, -1.0, Cadence::EveryStep, &mut obs).is_err());
    }

    #[test]
    fn eulerian_uniform_input() {
        let nx = 64;
        let out = eulerian_to_lagrangian(&vec![1.0; nx], &vec![1.0; nx], &vec![0.0; nx + 1], 32).unwrap();
        assert_relative_eq!(out.mass_scale, 2.0, max_relative = 1e-15);
        for i in 0..32 {
            assert_relative_eq!(out.data.r0()[i], 0.5, max_relative = 1e-12);
            assert_relative_eq!(out.data.q0()[i], 0.5, max_relative = 1e-12);
            assert_relative_eq!(out.data.tau0()[i], 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn eulerian_two_zone_cells_hold_equal_mass() {
        let nx = 100;
        let r: Vec<f64> = (0..nx).map(|m| if m < 50 { 1.0 } else { 2.0 }).collect();
        let q: Vec<f64> = (0..nx).map(|m| if m < 50 { 2.0 } else { 0.5 }).collect();
        let n = 40;
        let out = eulerian_to_lagrangian(&r, &q, &vec![0.0; nx + 1], n).unwrap();
        let dy = 1.0 / n as f64;
        let total = out.mass_scale;
        let mut xa = 0.0;
        for i in 0..n {
            let len = out.data.tau0()[i] * dy;
            let xb = xa + len;
            let (ri, qi) = (out.data.r0()[i], out.data.q0()[i]);
            assert!(((ri + qi) * len - dy).abs() < 1e-13, "cell {i}");
            // Away from the interface the cumulative masses are linear.
            if xb < 0.47 {
                assert_relative_eq!(ri * total, 1.0, max_relative = 1e-10);
                assert_relative_eq!(qi * total, 2.0, max_relative = 1e-10);
            } else if xa > 0.53 {
                assert_relative_eq!(ri * total, 2.0, max_relative = 1e-10);
                assert_relative_eq!(qi * total, 0.5, max_relative = 1e-10);
            }
            xa = xb;
        }
        assert!((xa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eulerian_round_trip_is_second_order() {
        let rf = |x: f64| 1.0 + 0.3 * (2.0 * PI * x).sin();
        let qf = |x: f64| 0.8 + 0.2 * (2.0 * PI * x).cos();
        let err = |n: usize| {
            let nx = n;
            let xc = |m: usize| (m as f64 + 0.5) / nx as f64;
            let r: Vec<f64> = (0..nx).map(|m| rf(xc(m))).collect();
            let q: Vec<f64> = (0..nx).map(|m| qf(xc(m))).collect();
            let out = eulerian_to_lagrangian(&r, &q, &vec![0.0; nx + 1], n).unwrap();
            let grid = Grid::new(n).unwrap();
            let cfg = SchemeConfig::new(GammaLaw::new(1.4, 1.4).unwrap(), 1.0).unwrap();
            let s = init_state(&out.data, &grid, &cfg).unwrap();
            let e = lagrangian_to_eulerian(&s, &grid);
            (0..n)
                .map(|i| {
                    let dxi = e.x_nodes[i + 1] - e.x_nodes[i];
                    let x = e.x_centers[i];
                    let dr = e.r[i] * out.mass_scale - rf(x);
                    let dq = e.q[i] * out.mass_scale - qf(x);
                    (dr * dr + dq * dq) * dxi
                })
                .sum::<f64>()
                .sqrt()
        };
        let errs: Vec<f64> = [25, 50, 100, 200].iter().map(|&n| err(n)).collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn eulerian_rejects_non_positive() {
        assert!(eulerian_to_lagrangian(&[1.0, 0.0], &[1.0, 1.0], &[0.0; 3], 4).is_err());
    }

    #[test]
    fn lagrangian_positions_for_constant_volume() {
        let grid = Grid::new(8).unwrap();
        let c = cfg(2.0, 1.5);
        let data = InitialData::sample(&grid, |_| 1.5, |_| 2.5, |_| 0.0).unwrap();
        let s = init_state(&data, &grid, &c).unwrap();
        let e = lagrangian_to_eulerian(&s, &grid);
        assert_relative_eq!(e.x_nodes[8], 0.25, max_relative = 1e-15);
        for j in 0..8 {
            assert_relative_eq!(e.x_nodes[j + 1] - e.x_nodes[j], 0.25 / 8.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn lagrangian_positions_increase() {
        let grid = Grid::new(64).unwrap();
        let c = cfg(2.0, 1.5);
        let s = init_state(&bump_data(&grid), &grid, &c).unwrap();
        let e = lagrangian_to_eulerian(&s, &grid);
        assert!(e.x_nodes.windows(2).all(|w| w[1] > w[0]));
    }
}
