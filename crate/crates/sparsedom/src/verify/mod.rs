//! Numerical experiments E1–E8 behind the `verify` binary.
//!
//! Each experiment returns a [`Report`]: raw rows, rows carrying a pass/fail
//! decision, and plots. A boundedness claim passes when its sup ratio over
//! the suite changes by at most `stability_factor` (default 2) under one grid
//! doubling at fixed physical parameters. Slope claims pass when the fitted
//! exponent is within the configured tolerance of the predicted one. Runs are
//! deterministic for a fixed seed.

pub mod config;
mod dispersive;
mod domination;
mod offdiag;
pub mod report;
pub mod suite;
mod weighted;

use serde_json::{json, Value};

pub use config::{Config, Experiment};
pub use report::{linear_fit, slope_fit, Plot, Report, ReportRow};

use crate::operators::{Modulation, Symbol};
use crate::{Error, Result};

/// Runs one experiment; `config.experiment` is ignored.
pub fn run(experiment: Experiment, config: &Config) -> Result<Report> {
    config.validate()?;
    crate::par::with_threads(config.threads, || match experiment {
        Experiment::E1 => domination::e1(config),
        Experiment::E2 => domination::e2(config),
        Experiment::E3 => dispersive::e3(config),
        Experiment::E4 => dispersive::e4(config),
        Experiment::E5 => domination::e5(config),
        Experiment::E6 => weighted::e6(config),
        Experiment::E7 => weighted::e7(config),
        Experiment::E8 => offdiag::e8(config),
    })
}

/// The symbol preset named in the config, or `default`.
fn preset(config: &Config, default: &str, m: f64, rho: f64, half_width: f64) -> Result<(String, Symbol)> {
    let name = config.symbol.clone().unwrap_or_else(|| default.to_string());
    let delta = config.delta.unwrap_or(0.0);
    let symbol = match name.as_str() {
        "bessel" => Symbol::bessel(m).with_class(m, rho, delta),
        "oscillatory" => Symbol::oscillatory(m, rho),
        "modulated" => Symbol::modulated(
            m,
            Modulation {
                epsilon: config.epsilon.unwrap_or(0.5),
                half_width,
                harmonics: 8,
            },
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown symbol '{other}'; valid presets: bessel, oscillatory, modulated"
            )))
        }
    };
    Ok((name, symbol))
}

/// Sup ratios at consecutive resolutions, one decided row per doubling.
fn stability_rows(
    experiment: Experiment,
    label: &str,
    extra: Value,
    sups: &[(usize, f64)],
    factor: f64,
) -> Vec<ReportRow> {
    sups.windows(2)
        .map(|w| {
            let (n0, a) = w[0];
            let (n1, b) = w[1];
            let change = (b / a).max(a / b);
            let mut params = json!({"check": "stability", "suite": label, "cells": [n0, n1]});
            merge(&mut params, &extra);
            ReportRow::new(experiment, params, b, a).with_pass(a > 0.0 && b > 0.0 && change <= factor)
        })
        .collect()
}

fn merge(into: &mut Value, extra: &Value) {
    if let (Some(a), Some(b)) = (into.as_object_mut(), extra.as_object()) {
        for (k, v) in b {
            a.insert(k.clone(), v.clone());
        }
    }
}
