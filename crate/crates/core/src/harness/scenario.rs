//! Registered initial-data presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::solver::{Grid, InitialData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Uniform,
    SmoothBump,
    TwoZone,
    NearVacuumFraction,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Uniform,
        Scenario::SmoothBump,
        Scenario::TwoZone,
        Scenario::NearVacuumFraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Uniform => "uniform",
            Scenario::SmoothBump => "smooth-bump",
            Scenario::TwoZone => "two-zone",
            Scenario::NearVacuumFraction => "near-vacuum-fraction",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::Uniform => "R0 = Q0 = 1, u0 = 0; already at equilibrium",
            Scenario::SmoothBump => {
                "R0 = 1 + 0.3 sin(2πy), Q0 = 1 + 0.3 cos(2πy) sin(πy), u0 = 0.1 sin(πy)"
            }
            Scenario::TwoZone => "R0 = 1 | 2 and Q0 = 2 | 1 with a jump at y = 1/2, u0 = 0",
            Scenario::NearVacuumFraction => "R0 = 1, Q0 = 0.05, u0 = 0.1 sin(πy); small minority fraction",
        }
    }

    pub fn r0(self, y: f64) -> f64 {
        match self {
            Scenario::Uniform | Scenario::NearVacuumFraction => 1.0,
            Scenario::SmoothBump => 1.0 + 0.3 * (2.0 * PI * y).sin(),
            Scenario::TwoZone => {
                if y < 0.5 {
                    1.0
                } else {
                    2.0
                }
            }
        }
    }

    pub fn q0(self, y: f64) -> f64 {
        match self {
            Scenario::Uniform => 1.0,
            Scenario::SmoothBump => 1.0 + 0.3 * (2.0 * PI * y).cos() * (PI * y).sin(),
            Scenario::TwoZone => {
                if y < 0.5 {
                    2.0
                } else {
                    1.0
                }
            }
            Scenario::NearVacuumFraction => 0.05,
        }
    }

    pub fn u0(self, y: f64) -> f64 {
        match self {
            Scenario::Uniform | Scenario::TwoZone => 0.0,
            Scenario::SmoothBump | Scenario::NearVacuumFraction => 0.1 * (PI * y).sin(),
        }
    }

    /// Points in `(0, 1)` where the data is discontinuous.
    pub fn breakpoints(self) -> &'static [f64] {
        match self {
            Scenario::TwoZone => &[0.5],
            _ => &[],
        }
    }

    /// Densities at cell centers, velocity at nodes.
    pub fn generate(self, grid: &Grid) -> Result<InitialData> {
        InitialData::sample(grid, |y| self.r0(y), |y| self.q0(y), |y| self.u0(y))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Validation {
                    key: "scenario".into(),
                    message: format!("unknown scenario `{s}`, expected one of {}", names.join(", ")),
                }
            })
    }
}

impl Serialize for Scenario {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}
