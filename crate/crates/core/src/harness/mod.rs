//! Configuration, scenario presets and experiment drivers.

pub mod config;
pub mod experiments;
pub mod oracle;
pub mod scenario;

pub use config::{parse_config, ConfigOverrides, RunConfig};
pub use experiments::{
    run_convergence, run_reduction_check, run_simulation, run_stability, run_steady, simulate,
    ConvergenceReport, ReductionReport, SimulationOutput, StabilityEntry, SteadyReport, Summary,
};
pub use scenario::Scenario;
