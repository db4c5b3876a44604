//! Flat JSON experiment configuration.
//!
//! Every key is optional; each experiment documents its own defaults and
//! reads only the keys it uses. Unknown keys are rejected at parse time.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::{Error, Result};

/// Experiment identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
    E8,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Self::E1,
        Self::E2,
        Self::E3,
        Self::E4,
        Self::E5,
        Self::E6,
        Self::E7,
        Self::E8,
    ];
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let ids: Vec<String> = Self::ALL.iter().map(|e| e.to_string()).collect();
                Error::Config(format!("unknown experiment '{s}'; valid ids: {}", ids.join(", ")))
            })
    }
}

/// Experiment parameters and acceptance thresholds.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Overridden by the command line when both are given.
    pub experiment: Option<String>,

    pub dim: Option<usize>,
    /// Cells per axis at the coarse resolution.
    pub cells: Option<usize>,
    pub half_width: Option<f64>,
    /// Resolutions compared by the stability check; defaults to
    /// `[cells, 2·cells]`.
    pub resolutions: Option<Vec<usize>>,

    /// `bessel`, `oscillatory` or `modulated`.
    pub symbol: Option<String>,
    pub m: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    /// Amplitude of the `modulated` preset.
    pub epsilon: Option<f64>,

    pub r: Option<f64>,
    pub s: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma: Option<f64>,
    /// Stopping-predicate factor of the nested construction.
    pub gamma: Option<f64>,
    /// Oscillation parameter of the Lerner–Nazarov step.
    pub lambda: Option<f64>,

    pub p_values: Option<Vec<f64>>,
    /// Power-weight exponents `β` in `(|x| + h)^β`.
    pub weight_exponents: Option<Vec<f64>>,
    pub t_values: Option<Vec<f64>>,
    pub j_values: Option<Vec<usize>>,
    pub radii: Option<Vec<f64>>,
    pub depths: Option<Vec<u32>>,
    pub band: Option<usize>,
    pub max_gap: Option<usize>,

    /// Random fields and bumps per suite.
    pub suite_size: Option<usize>,
    /// Highest frequency of the random band-limited fields.
    pub field_band: Option<f64>,
    pub families: Option<usize>,
    pub iterations: Option<usize>,

    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<String>,

    /// Largest accepted change of a sup ratio under grid doubling.
    pub stability_factor: Option<f64>,
    pub slope_tolerance: Option<f64>,
    pub band_tolerance: Option<f64>,
    pub lhs_slope_tolerance: Option<f64>,
    pub growth_factor: Option<f64>,
    pub divergence_fraction: Option<f64>,
    pub decay_slope_max: Option<f64>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(20240101)
    }

    pub fn stability_factor(&self) -> f64 {
        self.stability_factor.unwrap_or(2.0)
    }

    /// `resolutions`, or `[cells, 2·cells]` with `cells` defaulting to `n0`.
    pub fn resolutions(&self, n0: usize) -> Result<Vec<usize>> {
        let out = match &self.resolutions {
            Some(r) => r.clone(),
            None => {
                let n = self.cells.unwrap_or(n0);
                vec![n, 2 * n]
            }
        };
        if out.len() < 2 {
            return Err(Error::Config("resolutions needs at least two grids".into()));
        }
        Ok(out)
    }

    /// Rejects settings no experiment can use.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("half_width", self.half_width),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("stability_factor", self.stability_factor),
            ("field_band", self.field_band),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
                }
            }
        }
        if let Some(rho) = self.rho {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("rho must lie in [-1, 1], got {rho}")));
            }
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return Err(Error::Config("threads must be at least 1".into()));
            }
        }
        if let Some(e) = &self.experiment {
            e.parse::<Experiment>()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_documents() {
        let c = Config::from_json(r#"{"cells": 512, "p_values": [0.5, 2], "seed": 3}"#).unwrap();
        assert_eq!(c.cells, Some(512));
        assert_eq!(c.p_values, Some(vec![0.5, 2.0]));
        assert_eq!(c.resolutions(64).unwrap(), vec![512, 1024]);
    }

    #[test]
    fn rejects_unknown_keys_and_ids() {
        let err = Config::from_json(r#"{"cels": 512}"#).unwrap_err().to_string();
        assert!(err.contains("cels"), "{err}");
        let err = "E9".parse::<Experiment>().unwrap_err().to_string();
        assert!(err.contains("E1, E2, E3, E4, E5, E6, E7, E8"), "{err}");
        assert_eq!("e4".parse::<Experiment>().unwrap(), Experiment::E4);
        let bad = Config {
            rho: Some(2.0),
            ..Config::default()
        };
        assert!(bad.validate().is_err());
    }
}
