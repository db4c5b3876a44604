//! E8: off-diagonal decay of `φ_k ∗ a(x,D)(φ_j ∗ ·)` for a product symbol.

use serde_json::json;

use super::report::{linear_fit, Plot, Report, ReportRow};
use super::suite::noise;
use super::{Config, Experiment};
use crate::grid::{apply_multiplier, apply_real_multiplier, littlewood_paley_family, GridFunction, GridSpec, LPFamily};
use crate::operators::{Modulation, Symbol};
use crate::{Complex64, Error, Result};

/// `T = P_k σ b(D) P_j` and its adjoint for `a(x,ξ) = σ(x) b(ξ)`.
struct BandOperator<'a> {
    pj: &'a [f64],
    pk: &'a [f64],
    b: Vec<Complex64>,
    b_conj: Vec<Complex64>,
    sigma: Vec<f64>,
}

impl BandOperator<'_> {
    fn times_sigma(&self, f: &GridFunction) -> GridFunction {
        let mut g = f.clone();
        g.values_mut().iter_mut().zip(&self.sigma).for_each(|(v, s)| *v *= s);
        g
    }

    fn forward(&self, f: &GridFunction) -> GridFunction {
        let g = apply_multiplier(&apply_real_multiplier(f, self.pj), &self.b);
        apply_real_multiplier(&self.times_sigma(&g), self.pk)
    }

    fn adjoint(&self, f: &GridFunction) -> GridFunction {
        let g = self.times_sigma(&apply_real_multiplier(f, self.pk));
        apply_real_multiplier(&apply_multiplier(&g, &self.b_conj), self.pj)
    }
}

/// `‖P_k a(x,D) P_j‖_{L²→L²}` by power iteration on `T*T`.
pub fn band_norm(symbol: &Symbol, lp: &LPFamily, j: usize, k: usize, iterations: usize, seed: u64) -> Result<f64> {
    let spec = lp.spec();
    let b = symbol
        .frequency_samples(spec)
        .ok_or_else(|| Error::InvalidArgument("band_norm needs a product symbol".into()))?;
    let sigma = symbol.modulation_samples(spec).unwrap_or_else(|| vec![1.0; spec.len()]);
    let op = BandOperator {
        pj: lp.phi(j)?,
        pk: lp.phi(k)?,
        b_conj: b.iter().map(|v| v.conj()).collect(),
        b,
        sigma,
    };
    let mut v = noise(spec, seed);
    let mut est = 0.0;
    for _ in 0..iterations {
        let w = op.adjoint(&op.forward(&v));
        est = w.norm(2.0);
        if est == 0.0 {
            return Ok(0.0);
        }
        v = w.scale(Complex64::new(1.0 / est, 0.0));
    }
    Ok(est.sqrt())
}

/// Defaults: `n=1, L=16`, 4096 cells, `σ(x)⟨ξ⟩^m` with `m=0`, `ε=1/2` and
/// harmonics up to `N/2`, `j=0`, `k=0,…,5`, 60 iterations; passes when the
/// fitted slope of `log₂‖T_{j,k}‖` against `|j−k|` is at most −2.
pub fn e8(config: &Config) -> Result<Report> {
    let dim = config.dim.unwrap_or(1);
    let cells = config.cells.unwrap_or(4096);
    let half_width = config.half_width.unwrap_or(16.0);
    let spec = GridSpec::new(dim, cells, half_width)?;
    let lp = littlewood_paley_family(&spec, 4)?;
    let j = config.band.unwrap_or(0);
    let gap = config.max_gap.unwrap_or(5);
    if j + gap > lp.top() {
        return Err(Error::Config(format!("band {j} + gap {gap} exceeds the top band {}", lp.top())));
    }
    let m = config.m.unwrap_or(0.0);
    let symbol = Symbol::modulated(
        m,
        Modulation {
            epsilon: config.epsilon.unwrap_or(0.5),
            half_width,
            harmonics: cells / 2,
        },
    );
    let iterations = config.iterations.unwrap_or(60);
    let limit = config.decay_slope_max.unwrap_or(-2.0);
    let seed = config.seed();
    let ks: Vec<usize> = (j..=j + gap).collect();
    let norms = crate::par::map_slice(&ks, |&k| band_norm(&symbol, &lp, j, k, iterations, seed));
    let norms = norms.into_iter().collect::<Result<Vec<f64>>>()?;
    let e = Experiment::E8;
    let mut report = Report::new(e, seed);
    let mut pts = Vec::new();
    for (&k, &v) in ks.iter().zip(&norms) {
        let d = k - j;
        report.rows.push(ReportRow::new(e, json!({"j": j, "k": k, "gap": d, "cells": cells}), v, f64::NAN));
        pts.push((d as f64, v.log2()));
    }
    let fit = linear_fit(&pts)?;
    let params = json!({"check": "log2_decay_slope", "limit": limit, "max_gap": gap});
    report.rows.push(ReportRow::fit(e, params, fit).with_pass(fit.0 <= limit));
    report.plots.push(Plot {
        title: "E8 off-diagonal norms".into(),
        x_label: "|j-k|".into(),
        y_label: "log2 norm".into(),
        series: vec![("log2 ||T_jk||".into(), pts)],
        ..Plot::default()
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_band_norm_is_the_symbol_sup() {
        // x-independent: ‖P_k b(D) P_j‖ = max_ξ |φ̂_k b φ̂_j|.
        let spec = GridSpec::new(1, 512, 8.0).unwrap();
        let lp = littlewood_paley_family(&spec, 4).unwrap();
        let sym = Symbol::bessel(-0.5);
        let b = sym.frequency_samples(&spec).unwrap();
        for (j, k) in [(1, 1), (1, 2), (2, 4)] {
            let want = (0..spec.len())
                .map(|i| lp.phi(j).unwrap()[i] * lp.phi(k).unwrap()[i] * b[i].norm())
                .fold(0.0, f64::max);
            let got = band_norm(&sym, &lp, j, k, 300, 1).unwrap();
            assert!((got - want).abs() <= 1e-6 * (1.0 + want), "{j},{k}: {got} vs {want}");
        }
    }
}
