//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! scenario = smooth-bump
//! n_cells = 200
//! t_end = 20
//! ```
//!
//! Recognised keys: `scenario`, `n_cells` (alias `N`), `t_end`, `cfl`, `mu`,
//! `gamma_plus`, `gamma_minus`, `cadence`, `out`, `seed`.

use std::path::PathBuf;

use serde::Serialize;

use super::scenario::Scenario;
use crate::closure::GammaLaw;
use crate::error::{Error, Result};
use crate::solver::{Grid, SchemeConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub n_cells: usize,
    pub t_end: f64,
    pub cfl: f64,
    pub mu: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    /// Observer sampling interval.
    pub cadence: f64,
    /// Output directory; must already exist.
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::SmoothBump,
            n_cells: 200,
            t_end: 20.0,
            cfl: 0.4,
            mu: 1.0,
            gamma_plus: 2.0,
            gamma_minus: 1.5,
            cadence: 0.05,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Partially specified configuration; `None` leaves the lower-precedence value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub scenario: Option<Scenario>,
    pub n_cells: Option<usize>,
    pub t_end: Option<f64>,
    pub cfl: Option<f64>,
    pub mu: Option<f64>,
    pub gamma_plus: Option<f64>,
    pub gamma_minus: Option<f64>,
    pub cadence: Option<f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        take!(scenario, n_cells, t_end, cfl, mu, gamma_plus, gamma_minus, cadence, out, seed);
    }

    /// Parses `key = value` text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut o = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Parse {
                line: line_no,
                message: format!("`{key}` expects {what}, got `{value}`"),
            };
            let num = || value.parse::<f64>().map_err(|_| bad("a number"));
            match key {
                "scenario" => o.scenario = Some(value.parse()?),
                "n_cells" | "N" => o.n_cells = Some(value.parse().map_err(|_| bad("a cell count"))?),
                "t_end" => o.t_end = Some(num()?),
                "cfl" => o.cfl = Some(num()?),
                "mu" => o.mu = Some(num()?),
                "gamma_plus" => o.gamma_plus = Some(num()?),
                "gamma_minus" => o.gamma_minus = Some(num()?),
                "cadence" => o.cadence = Some(num()?),
                "out" => o.out = Some(PathBuf::from(value)),
                "seed" => o.seed = Some(value.parse().map_err(|_| bad("an unsigned integer"))?),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        Ok(o)
    }
}

/// Defaults, then `file` contents, then `flags`; the result is validated.
pub fn parse_config(file: Option<&str>, flags: &ConfigOverrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file {
        ConfigOverrides::parse(text)?.apply(&mut cfg);
    }
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, message: String| {
            Err(Error::Validation {
                key: key.into(),
                message,
            })
        };
        if self.n_cells < 2 {
            return fail("n_cells", format!("must be at least 2, got {}", self.n_cells));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return fail("t_end", format!("must be positive, got {}", self.t_end));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return fail("cfl", format!("must lie in (0, 1), got {}", self.cfl));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return fail("mu", format!("must be positive, got {}", self.mu));
        }
        if !(self.gamma_plus > 1.0 && self.gamma_plus.is_finite()) {
            return fail("gamma_plus", format!("must exceed 1, got {}", self.gamma_plus));
        }
        if !(self.gamma_minus > 1.0 && self.gamma_minus.is_finite()) {
            return fail("gamma_minus", format!("must exceed 1, got {}", self.gamma_minus));
        }
        if !(self.cadence > 0.0 && self.cadence.is_finite()) {
            return fail("cadence", format!("must be positive, got {}", self.cadence));
        }
        Ok(())
    }

    pub fn law(&self) -> Result<GammaLaw> {
        GammaLaw::new(self.gamma_plus, self.gamma_minus)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_cells)
    }

    pub fn scheme(&self) -> Result<SchemeConfig> {
        SchemeConfig::new(self.law()?, self.mu)?.with_cfl(self.cfl)
    }

    /// Text form accepted by [`parse_config`]; floats use shortest round-trip
    /// formatting so parsing the output reproduces `self` exactly.
    pub fn to_config_string(&self) -> String {
        format!(
            "scenario = {}\nn_cells = {}\nt_end = {:?}\ncfl = {:?}\nmu = {:?}\ngamma_plus = {:?}\n\
             gamma_minus = {:?}\ncadence = {:?}\nout = {}\nseed = {}\n",
            self.scenario,
            self.n_cells,
            self.t_end,
            self.cfl,
            self.mu,
            self.gamma_plus,
            self.gamma_minus,
            self.cadence,
            self.out.display(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input_gives_defaults() {
        let cfg = parse_config(Some(""), &ConfigOverrides::default()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.cfl, 0.4);
        assert_eq!(cfg.mu, 1.0);
        assert_eq!(cfg.gamma_plus, 2.0);
        assert_eq!(cfg.gamma_minus, 1.5);
        assert_eq!(cfg.n_cells, 200);
        assert_eq!(cfg.t_end, 20.0);
        assert_eq!(cfg.cadence, 0.05);
    }

    #[test]
    fn gamma_below_one_names_the_key() {
        match parse_config(Some("gamma_plus = 0.9"), &ConfigOverrides::default()) {
            Err(Error::Validation { key, .. }) => assert_eq!(key, "gamma_plus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flags_override_file() {
        let flags = ConfigOverrides {
            n_cells: Some(400),
            ..Default::default()
        };
        let cfg = parse_config(Some("N = 100\n"), &flags).unwrap();
        assert_eq!(cfg.n_cells, 400);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# header\ncfl = 0.3\n\nmu 2\n";
        match parse_config(Some(text), &ConfigOverrides::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config(Some("t_end = soon"), &ConfigOverrides::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config(Some("colour = red"), &ConfigOverrides::default()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = parse_config(
            Some("  scenario=two-zone   # jump\nmu = 0.5#inline\n"),
            &ConfigOverrides::default(),
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::TwoZone);
        assert_eq!(cfg.mu, 0.5);
    }

    #[test]
    fn range_checks() {
        for (text, key) in [
            ("cfl = 1.0", "cfl"),
            ("mu = 0", "mu"),
            ("n_cells = 1", "n_cells"),
            ("t_end = -1", "t_end"),
            ("cadence = 0", "cadence"),
            ("gamma_minus = 1", "gamma_minus"),
            ("scenario = vortex", "scenario"),
        ] {
            match parse_config(Some(text), &ConfigOverrides::default()) {
                Err(Error::Validation { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    fn scenario() -> impl Strategy<Value = Scenario> {
        prop::sample::select(Scenario::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            sc in scenario(),
            n in 2usize..5000,
            t_end in 1e-3f64..100.0,
            cfl in 0.01f64..0.99,
            mu in 1e-3f64..10.0,
            gp in 1.001f64..5.0,
            gm in 1.001f64..5.0,
            cadence in 1e-3f64..1.0,
            seed in any::<u64>(),
        ) {
            let cfg = RunConfig {
                scenario: sc, n_cells: n, t_end, cfl, mu, gamma_plus: gp, gamma_minus: gm,
                cadence, out: PathBuf::from("runs/a b"), seed,
            };
            let text = cfg.to_config_string();
            let back = parse_config(Some(&text), &ConfigOverrides::default()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
