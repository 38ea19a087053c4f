//! Experiment drivers behind the CLI subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::oracle::Barotropic;
use super::scenario::Scenario;
use crate::closure::{ClosureTolerances, GammaLaw};
use crate::diagnostics::{
    self, density_bounds, fit_decay, stability_ratio, DecayFit, DensityBounds, DiagnosticsRecord,
    Recorder, StabilityReport, StabilitySample, DEFAULT_DECAY_FLOOR, DEFAULT_EPSILON,
};
use crate::equilibrium::{solve_equilibrium, solve_mass_constraint, SteadyState};
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::solver::{
    compute_dt, init_state, run, step, Cadence, Grid, InitialData, LagrangianState, Observer, SchemeConfig,
};

const STEADY_MASS_TOL: f64 = 1e-12;
const CONTINUUM_PANELS: usize = 64;

/// Decay-fit window used for the summary: the middle half of the run.
pub fn default_fit_window(t_end: f64) -> (f64, f64) {
    (0.25 * t_end, 0.75 * t_end)
}

/// Continuum counterpart of the discrete steady state, from the preset's exact
/// profiles integrated by composite Gauss–Legendre quadrature.
pub fn continuum_steady(scenario: Scenario, law: &GammaLaw) -> Result<(f64, f64)> {
    let rule = GaussLegendre::new(16);
    let mut cuts = vec![0.0];
    cuts.extend_from_slice(scenario.breakpoints());
    cuts.push(1.0);
    let integrate = |f: &dyn Fn(f64) -> f64| -> f64 {
        let mut acc = 0.0;
        for w in cuts.windows(2) {
            let h = (w[1] - w[0]) / CONTINUUM_PANELS as f64;
            for k in 0..CONTINUUM_PANELS {
                let a = w[0] + k as f64 * h;
                acc += rule.integrate(a, a + h, f);
            }
        }
        acc
    };
    let tau0 = |y: f64| 1.0 / (scenario.r0(y) + scenario.q0(y));
    let target = integrate(&tau0);
    let g = law.gamma();
    let (z, _) = solve_mass_constraint(|z| {
        let zmg = z.powf(-g);
        integrate(&|y: f64| tau0(y) * (scenario.q0(y) * zmg + scenario.r0(y) / z)) - target
    })?;
    Ok((z, z.powf(law.gamma_plus())))
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyReport {
    pub scenario: Scenario,
    pub n_cells: usize,
    /// Discrete equilibrium of the midpoint mass constraint.
    pub z_inf: f64,
    pub c_star: f64,
    pub mass_residual: f64,
    pub z_inf_continuum: f64,
    pub c_star_continuum: f64,
    pub min_tau_inf: f64,
    pub max_tau_inf: f64,
}

fn steady_for(data: &InitialData, law: &GammaLaw) -> Result<SteadyState> {
    solve_equilibrium(data.r0(), data.q0(), data.tau0(), law, STEADY_MASS_TOL)
}

pub fn run_steady(cfg: &RunConfig) -> Result<SteadyReport> {
    let law = cfg.law()?;
    let grid = cfg.grid()?;
    let data = cfg.scenario.generate(&grid)?;
    let steady = steady_for(&data, &law)?;
    let (zc, cc) = continuum_steady(cfg.scenario, &law)?;
    Ok(SteadyReport {
        scenario: cfg.scenario,
        n_cells: cfg.n_cells,
        z_inf: steady.z_inf,
        c_star: steady.c_star,
        mass_residual: steady.mass_residual,
        z_inf_continuum: zc,
        c_star_continuum: cc,
        min_tau_inf: steady.tau_inf.iter().cloned().fold(f64::INFINITY, f64::min),
        max_tau_inf: steady.tau_inf.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalNorms {
    pub dist_tau: f64,
    pub dist_u: f64,
    #[serde(rename = "dist_R")]
    pub dist_r: f64,
    #[serde(rename = "dist_Q")]
    pub dist_q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_cells: usize,
    pub t_end: f64,
    pub steps: usize,
    #[serde(rename = "final")]
    pub final_norms: FinalNorms,
    pub decay_fit: Option<DecayFit>,
    /// Why `decay_fit` is absent, when it is.
    pub decay_fit_error: Option<String>,
    pub density_bounds: DensityBounds,
    pub mass_initial: f64,
    pub mass_final: f64,
    /// Relative change of `∫τ dy` over the run.
    pub mass_drift: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// `(E(T) − E(0)) / E(0)`.
    pub energy_drift: f64,
    /// Largest single-step energy increase, relative to `E(0)`.
    pub max_energy_increase: f64,
    pub z_inf: f64,
    pub c_star: f64,
    pub steady_mass_residual: f64,
    pub z_inf_continuum: f64,
    pub c_star_continuum: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub steady: SteadyState,
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: LagrangianState,
    pub summary: Summary,
}

struct RunObserver {
    recorder: Recorder,
    grid: Grid,
    law: GammaLaw,
    last_energy: f64,
    energy0: f64,
    max_increase: f64,
}

impl Observer for RunObserver {
    fn observe(&mut self, state: &LagrangianState) -> Result<()> {
        self.recorder.observe(state)
    }

    fn after_step(&mut self, state: &LagrangianState) -> Result<()> {
        let e = diagnostics::energy(state, &self.grid, &self.law)?;
        self.max_increase = self.max_increase.max(e - self.last_energy);
        self.last_energy = e;
        Ok(())
    }
}

/// Runs the configured scenario without touching the file system.
pub fn simulate(cfg: &RunConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scheme = cfg.scheme()?;
    let data = cfg.scenario.generate(&grid)?;
    simulate_data(cfg, &grid, &scheme, &data)
}

fn simulate_data(cfg: &RunConfig, grid: &Grid, scheme: &SchemeConfig, data: &InitialData) -> Result<SimulationOutput> {
    let law = scheme.law;
    let steady = steady_for(data, &law)?;
    let (z_c, c_c) = continuum_steady(cfg.scenario, &law)?;
    let state0 = init_state(data, grid, scheme)?;
    let energy0 = diagnostics::energy(&state0, grid, &law)?;
    let mass0 = diagnostics::total_mass(&state0, grid);
    let mut obs = RunObserver {
        recorder: Recorder::new(&steady, data, *grid, law, scheme.closure, DEFAULT_EPSILON)?,
        grid: *grid,
        law,
        last_energy: energy0,
        energy0,
        max_increase: f64::NEG_INFINITY,
    };
    let final_state = run(state0, grid, scheme, cfg.t_end, Cadence::Interval(cfg.cadence), &mut obs)?;
    let energy_final = diagnostics::energy(&final_state, grid, &law)?;
    let mass_final = diagnostics::total_mass(&final_state, grid);
    let max_increase = if obs.max_increase.is_finite() {
        obs.max_increase.max(0.0) / obs.energy0
    } else {
        0.0
    };
    let records = obs.recorder.into_records();

    let series: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.decay_norm())).collect();
    let (decay_fit, decay_fit_error) = match fit_decay(&series, default_fit_window(cfg.t_end), DEFAULT_DECAY_FLOOR) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let last = records.last().copied().ok_or_else(|| Error::InsufficientData("no records".into()))?;
    let summary = Summary {
        scenario: cfg.scenario,
        seed: cfg.seed,
        n_cells: cfg.n_cells,
        t_end: cfg.t_end,
        steps: final_state.step_count(),
        final_norms: FinalNorms {
            dist_tau: last.dist_tau,
            dist_u: last.dist_u,
            dist_r: last.dist_r,
            dist_q: last.dist_q,
        },
        decay_fit,
        decay_fit_error,
        density_bounds: density_bounds(&records)?,
        mass_initial: mass0,
        mass_final,
        mass_drift: (mass_final - mass0) / mass0,
        energy_initial: energy0,
        energy_final,
        energy_drift: (energy_final - energy0) / energy0,
        max_energy_increase: max_increase,
        z_inf: steady.z_inf,
        c_star: steady.c_star,
        steady_mass_residual: steady.mass_residual,
        z_inf_continuum: z_c,
        c_star_continuum: c_c,
    };
    Ok(SimulationOutput {
        steady,
        records,
        final_state,
        summary,
    })
}

/// Fails with an I/O error unless `dir` is an existing directory.
pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Serialize(format!("{other:?}")),
        }
    } else {
        Error::Serialize(e.to_string())
    }
}

pub fn write_timeseries(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if records.is_empty() {
        w.write_record(diagnostics::CSV_COLUMNS).map_err(|e| csv_error(path, e))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct FinalRow {
    y: f64,
    tau: f64,
    u: f64,
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "Q")]
    q: f64,
    #[serde(rename = "Z")]
    z: f64,
    p: f64,
}

/// One row per cell; `u` is the mean of the two bounding nodes.
pub fn write_final_state(path: &Path, state: &LagrangianState, grid: &Grid) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for i in 0..state.n_cells() {
        w.serialize(FinalRow {
            y: grid.cell_center(i),
            tau: state.tau()[i],
            u: 0.5 * (state.u()[i] + state.u()[i + 1]),
            r: state.r()[i],
            q: state.q()[i],
            z: state.z()[i],
            p: state.p()[i],
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Serialize(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths of the files written by [`run_simulation`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub timeseries: PathBuf,
    pub summary: PathBuf,
    pub state_final: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            timeseries: dir.join("timeseries.csv"),
            summary: dir.join("summary.json"),
            state_final: dir.join("state_final.csv"),
        }
    }
}

/// Simulates and writes `timeseries.csv`, `summary.json` and
/// `state_final.csv` into `cfg.out`.
pub fn run_simulation(cfg: &RunConfig) -> Result<Summary> {
    ensure_out_dir(&cfg.out)?;
    let out = simulate(cfg)?;
    let paths = OutputPaths::in_dir(&cfg.out);
    write_timeseries(&paths.timeseries, &out.records)?;
    write_json(&paths.summary, &out.summary)?;
    write_final_state(&paths.state_final, &out.final_state, &cfg.grid()?)?;
    Ok(out.summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub t_end: f64,
    /// All levels, finest last; the finest is the reference.
    pub levels: Vec<usize>,
    /// `‖τ_N − restrict(τ_ref)‖_{L²}` for every level except the reference.
    pub errors: Vec<f64>,
    /// `log₂(e_k / e_{k+1})`; `None` where an error vanishes.
    pub orders: Vec<Option<f64>>,
    /// Fitted decay rate per level (all levels), `None` where the fit failed.
    pub decay_rates: Vec<Option<f64>>,
    /// `(max − min)/max` over the available decay rates.
    pub decay_rate_spread: Option<f64>,
}

fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.len() < 3 {
        return Err(Error::LevelMismatch(format!("need at least 3 levels, got {}", levels.len())));
    }
    for w in levels.windows(2) {
        if w[0] < 2 || w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(Error::LevelMismatch(format!("level {} does not nest in {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// Cell averages of a fine-grid field on a grid `factor` times coarser.
pub fn restrict(fine: &[f64], factor: usize) -> Vec<f64> {
    fine.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect()
}

pub fn run_convergence(cfg: &RunConfig, levels: &[usize]) -> Result<ConvergenceReport> {
    check_levels(levels)?;
    let runs: Vec<SimulationOutput> = levels
        .par_iter()
        .map(|&n| {
            let c = RunConfig {
                n_cells: n,
                ..cfg.clone()
            };
            simulate(&c)
        })
        .collect::<Result<_>>()?;
    let reference = runs.last().expect("at least 3 levels");
    let n_ref = *levels.last().unwrap();
    let errors: Vec<f64> = levels[..levels.len() - 1]
        .iter()
        .zip(&runs)
        .map(|(&n, out)| {
            let coarse = restrict(reference.final_state.tau(), n_ref / n);
            diagnostics::cell_distance(out.final_state.tau(), &coarse, &Grid::new(n).unwrap())
        })
        .collect();
    let orders = errors
        .windows(2)
        .map(|w| {
            if w[0] > 0.0 && w[1] > 0.0 {
                Some((w[0] / w[1]).log2())
            } else {
                None
            }
        })
        .collect();
    let decay_rates: Vec<Option<f64>> = runs.iter().map(|r| r.summary.decay_fit.map(|f| f.rate)).collect();
    let avail: Vec<f64> = decay_rates.iter().flatten().copied().collect();
    let decay_rate_spread = if avail.len() >= 2 {
        let max = avail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = avail.iter().cloned().fold(f64::INFINITY, f64::min);
        Some((max - min) / max.abs())
    } else {
        None
    };
    Ok(ConvergenceReport {
        t_end: cfg.t_end,
        levels: levels.to_vec(),
        errors,
        orders,
        decay_rates,
        decay_rate_spread,
    })
}

/// Smooth perturbations used by [`run_stability`]: `δ sin(πy)` on both
/// densities and the odd bump `δ sin(2πy)` on the velocity.
pub fn perturb(data: &InitialData, grid: &Grid, delta: f64) -> Result<InitialData> {
    use std::f64::consts::PI;
    let n = grid.n_cells();
    let bump = |y: f64| delta * (PI * y).sin();
    let r = (0..n).map(|i| data.r0()[i] + bump(grid.cell_center(i))).collect();
    let q = (0..n).map(|i| data.q0()[i] + bump(grid.cell_center(i))).collect();
    let mut u: Vec<f64> = (0..=n).map(|j| data.u0()[j] + delta * (2.0 * PI * grid.node(j)).sin()).collect();
    u[0] = 0.0;
    u[n] = 0.0;
    InitialData::new(r, q, u)
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityEntry {
    pub delta: f64,
    #[serde(flatten)]
    pub report: StabilityReport,
}

fn sampled_trajectory(data: &InitialData, grid: &Grid, scheme: &SchemeConfig, cfg: &RunConfig) -> Result<Vec<StabilitySample>> {
    let mut samples = Vec::new();
    let mut obs = |s: &LagrangianState| -> Result<()> {
        samples.push(StabilitySample::from(s));
        Ok(())
    };
    let s0 = init_state(data, grid, scheme)?;
    run(s0, grid, scheme, cfg.t_end, Cadence::Interval(cfg.cadence), &mut obs)?;
    Ok(samples)
}

pub fn run_stability(cfg: &RunConfig, deltas: &[f64]) -> Result<Vec<StabilityEntry>> {
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::Domain(format!("perturbation size must be non-negative, got {d}")));
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scheme = cfg.scheme()?;
    let base_data = cfg.scenario.generate(&grid)?;
    let mut inputs = vec![base_data.clone()];
    for &d in deltas {
        inputs.push(perturb(&base_data, &grid, d)?);
    }
    let trajectories: Vec<Vec<StabilitySample>> = inputs
        .par_iter()
        .map(|d| sampled_trajectory(d, &grid, &scheme, cfg))
        .collect::<Result<_>>()?;
    deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let din = diagnostics::input_delta(&base_data, &inputs[k + 1], &grid)?;
            let report = stability_ratio(&trajectories[0], &trajectories[k + 1], din, &grid)?;
            Ok(StabilityEntry { delta, report })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionReport {
    pub steps: usize,
    pub residual_tol: f64,
    /// Max over steps of `max|Δτ| + max|Δu|` against the barotropic oracle.
    pub max_discrepancy: f64,
}

pub fn run_reduction_check(cfg: &RunConfig, n_steps: usize, closure: ClosureTolerances) -> Result<ReductionReport> {
    if cfg.gamma_plus != cfg.gamma_minus {
        return Err(Error::Config(format!(
            "reduction check needs gamma_plus == gamma_minus, got {} and {}",
            cfg.gamma_plus, cfg.gamma_minus
        )));
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let scheme = SchemeConfig {
        closure,
        ..cfg.scheme()?
    };
    let data = cfg.scenario.generate(&grid)?;
    let mut state = init_state(&data, &grid, &scheme)?;
    let mut oracle = Barotropic::new(cfg.gamma_plus, cfg.mu, data.tau0().to_vec(), data.u0().to_vec());
    let mut worst: f64 = 0.0;
    for _ in 0..n_steps {
        let dt = compute_dt(&state, &grid, &scheme)?;
        state = step(&state, &grid, &scheme, dt)?;
        oracle.advance(dt);
        let dtau = state.tau().iter().zip(&oracle.tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let du = state.u().iter().zip(&oracle.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dtau + du);
    }
    Ok(ReductionReport {
        steps: n_steps,
        residual_tol: closure.residual_tol,
        max_discrepancy: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scenario: Scenario, n: usize, t_end: f64) -> RunConfig {
        RunConfig {
            scenario,
            n_cells: n,
            t_end,
            ..RunConfig::default()
        }
    }

    #[test]
    fn uniform_run_stays_put() {
        let out = simulate(&cfg(Scenario::Uniform, 20, 0.5)).unwrap();
        assert!(out.summary.final_norms.dist_tau < 1e-14);
        assert!(out.summary.final_norms.dist_u < 1e-14);
        assert_eq!(out.records.len(), 11);
    }

    #[test]
    fn continuum_steady_of_uniform_data() {
        let law = GammaLaw::new(2.0, 2.0).unwrap();
        let (z, c) = continuum_steady(Scenario::Uniform, &law).unwrap();
        assert!((z - 2.0).abs() < 1e-12);
        assert!((c - 4.0).abs() < 1e-11);
    }

    #[test]
    fn continuum_two_zone_matches_closed_form() {
        // Same mass equation as the two-cell oracle: 3/Z² + 3/Z = 2 for γ = 2.
        let law = GammaLaw::new(4.0, 2.0).unwrap();
        let (z, _) = continuum_steady(Scenario::TwoZone, &law).unwrap();
        assert!((z - (3.0 + 33f64.sqrt()) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_and_continuum_steady_agree_to_second_order() {
        let mut errs = Vec::new();
        for n in [25, 50, 100] {
            let r = run_steady(&cfg(Scenario::SmoothBump, n, 1.0)).unwrap();
            errs.push((r.z_inf - r.z_inf_continuum).abs());
        }
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
    }

    #[test]
    fn levels_must_nest() {
        let c = cfg(Scenario::Uniform, 10, 0.1);
        for lv in [&[10, 20][..], &[10, 25, 50], &[10, 20, 20], &[40, 20, 10]] {
            assert!(matches!(run_convergence(&c, lv), Err(Error::LevelMismatch(_))));
        }
    }

    #[test]
    fn steady_convergence_has_no_orders() {
        let r = run_convergence(&cfg(Scenario::Uniform, 10, 0.2), &[4, 8, 16, 32]).unwrap();
        assert!(r.errors.iter().all(|&e| e == 0.0));
        assert!(r.orders.iter().all(|o| o.is_none()));
    }

    #[test]
    fn restriction_averages_blocks() {
        assert_eq!(restrict(&[1.0, 3.0, 5.0, 7.0], 2), vec![2.0, 6.0]);
    }

    #[test]
    fn zero_perturbation_is_degenerate() {
        let r = run_stability(&cfg(Scenario::SmoothBump, 20, 0.2), &[0.0]).unwrap();
        assert!(r[0].report.degenerate);
        assert_eq!(r[0].report.ratio, 0.0);
        assert!(run_stability(&cfg(Scenario::SmoothBump, 20, 0.2), &[-1.0]).is_err());
    }

    #[test]
    fn reduction_requires_equal_exponents() {
        let c = cfg(Scenario::SmoothBump, 20, 0.2);
        assert!(matches!(
            run_reduction_check(&c, 10, ClosureTolerances::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reduction_of_uniform_data_is_exact() {
        let c = RunConfig {
            gamma_plus: 1.5,
            gamma_minus: 1.5,
            ..cfg(Scenario::Uniform, 20, 1.0)
        };
        let r = run_reduction_check(&c, 50, ClosureTolerances::default()).unwrap();
        assert_eq!(r.max_discrepancy, 0.0);
    }

    #[test]
    fn missing_output_dir_is_an_io_error() {
        let c = RunConfig {
            out: PathBuf::from("/nonexistent/definitely/not/here"),
            ..cfg(Scenario::Uniform, 4, 0.1)
        };
        let e = run_simulation(&c).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
        assert_eq!(e.exit_code(), 2);
    }
}
