//! Periodic grids on `[-L, L)^n`, the spectral transform pair and the
//! Littlewood–Paley partition of unity.
//!
//! Conventions. Samples sit at `x_i = -L + i h` with `h = 2L/N`, stored
//! row-major with the last axis fastest. Frequencies are `k π / L` for signed
//! `k ∈ [-N/2, N/2)`, stored in FFT order. The transform is
//! `f̂(ξ) = Σ_x f(x) e^{-i x·ξ} h^n`, the inverse carries the dual measure
//! `(2π)^{-n} (π/L)^n = (2L)^{-n}`, and with these measures Plancherel is an
//! identity.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{par, Error, Result};

/// Shape of a periodic grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    cells: usize,
    half_width: f64,
}

impl GridSpec {
    /// `cells` per axis must be a power of two, at least 8.
    pub fn new(dim: usize, cells: usize, half_width: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        if cells < 8 || !cells.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "cells per axis must be a power of two >= 8, got {cells}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        let total = cells
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::InvalidGrid("grid too large".into()))?;
        if total > 1 << 28 {
            return Err(Error::InvalidGrid(format!("{total} cells is too many")));
        }
        Ok(Self {
            dim,
            cells,
            half_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis, `N`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// `log2 N`, the depth of the finest dyadic level.
    pub fn depth(&self) -> u32 {
        self.cells.trailing_zeros()
    }

    /// Cell spacing `h = 2L/N`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    /// `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Measure of the whole box, `(2L)^n`.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Frequency-side quadrature weight `(2π)^{-n} (π/L)^n`.
    pub fn dual_cell_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(-(self.dim as i32))
    }

    /// Total number of cells, `N^n`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Radius of the largest frequency ball inside the frequency box.
    pub fn nyquist_radius(&self) -> f64 {
        PI * self.cells as f64 / (2.0 * self.half_width)
    }

    /// Same box, twice the cells per axis.
    pub fn refined(&self) -> Self {
        Self {
            cells: self.cells * 2,
            ..*self
        }
    }

    /// Per-axis indices of a flat index.
    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = idx % self.cells;
            idx /= self.cells;
        }
    }

    pub fn ravel(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.cells + c)
    }

    /// Position of axis index `i`.
    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Sample point of a flat index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut c = vec![0; self.dim];
        self.unravel(idx, &mut c);
        c.into_iter().map(|i| self.coordinate(i)).collect()
    }

    /// Signed wavenumber of an FFT-ordered axis index.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.cells / 2 {
            i as i64
        } else {
            i as i64 - self.cells as i64
        }
    }

    /// Frequency of an FFT-ordered axis index.
    pub fn frequency(&self, i: usize) -> f64 {
        self.wavenumber(i) as f64 * PI / self.half_width
    }

    /// Frequency vector of a flat index.
    pub fn frequency_point(&self, idx: usize) -> Vec<f64> {
        let mut c = vec![0; self.dim];
        self.unravel(idx, &mut c);
        c.into_iter().map(|i| self.frequency(i)).collect()
    }

    /// `|ξ|` for every flat frequency index.
    pub fn frequency_norms(&self) -> Vec<f64> {
        par::map_range(self.len(), |idx| {
            self.frequency_point(idx)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
    }

    /// Samples a function of position.
    pub fn sample(&self, f: impl Fn(&[f64]) -> Complex64 + Sync + Send) -> GridFunction {
        let values = par::map_range(self.len(), |idx| f(&self.point(idx)));
        GridFunction::from_values(*self, Domain::Space, values)
    }

    /// Samples a real function of position.
    pub fn sample_real(&self, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> GridFunction {
        self.sample(|x| Complex64::new(f(x), 0.0))
    }

    /// Samples a function of frequency on the frequency grid.
    pub fn sample_frequency(
        &self,
        f: impl Fn(&[f64]) -> Complex64 + Sync + Send,
    ) -> GridFunction {
        let values = par::map_range(self.len(), |idx| f(&self.frequency_point(idx)));
        GridFunction::from_values(*self, Domain::Frequency, values)
    }
}

/// Which side of the transform a [`GridFunction`] lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Space,
    Frequency,
}

/// Complex samples on a grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    spec: GridSpec,
    domain: Domain,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn from_values(spec: GridSpec, domain: Domain, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), spec.len(), "sample count must be N^n");
        Self {
            spec,
            domain,
            values,
        }
    }

    pub fn from_real(spec: GridSpec, values: &[f64]) -> Self {
        Self::from_values(
            spec,
            Domain::Space,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::from_values(spec, Domain::Space, vec![Complex64::new(0.0, 0.0); spec.len()])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn abs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Quadrature weight of one sample on this function's side.
    pub fn measure(&self) -> f64 {
        match self.domain {
            Domain::Space => self.spec.cell_volume(),
            Domain::Frequency => self.spec.dual_cell_volume(),
        }
    }

    /// `(Σ |f|^p w)^{1/p}` with the side's quadrature weight; `p = ∞` is the
    /// maximum modulus. Values of `p` below one give the quasi-norm.
    pub fn norm(&self, p: f64) -> f64 {
        lp_norm(&self.abs(), p, self.measure())
    }

    /// Norm in `L^p(ω)`: `(Σ |f|^p ω h^n)^{1/p}`.
    pub fn weighted_norm(&self, p: f64, weight: &[f64]) -> f64 {
        assert_eq!(weight.len(), self.values.len());
        let h = self.measure();
        if p.is_infinite() {
            return self.abs().into_iter().fold(0.0, f64::max);
        }
        let s: f64 = self
            .values
            .iter()
            .zip(weight)
            .map(|(v, w)| v.norm().powf(p) * w)
            .sum();
        (s * h).powf(1.0 / p)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            ..self.clone()
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
            ..self.clone()
        }
    }

    /// Zeroes every cell where `keep` is false.
    pub fn masked(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.values.len());
        Self {
            values: self
                .values
                .iter()
                .zip(keep)
                .map(|(&v, &k)| if k { v } else { Complex64::new(0.0, 0.0) })
                .collect(),
            ..self.clone()
        }
    }

    /// `∫ f g` (bilinear, no conjugation) with the space measure.
    pub fn pairing(&self, other: &Self) -> Complex64 {
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        s * self.measure()
    }

    /// `∫ f ḡ` with the side's measure.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b.conj())
            .sum();
        s * self.measure()
    }

    /// Largest absolute sample difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Discrete `(Σ |v|^p w)^{1/p}`, or the maximum for `p = ∞`.
pub fn lp_norm(abs_values: &[f64], p: f64, weight: f64) -> f64 {
    if p.is_infinite() {
        return abs_values.iter().copied().fold(0.0, f64::max);
    }
    let s: f64 = abs_values.iter().map(|v| v.powf(p)).sum();
    (s * weight).powf(1.0 / p)
}

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);
type PlanCache = Mutex<(FftPlanner<f64>, HashMap<usize, PlanPair>)>;

fn plans(n: usize) -> PlanPair {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    if let Some(p) = map.get(&n) {
        return p.clone();
    }
    let pair = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    map.insert(n, pair.clone());
    pair
}

/// Unnormalized in-place `n`-dimensional FFT over row-major data.
fn fft_nd(spec: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = spec.cells();
    let (fwd, inv) = plans(n);
    let plan = if inverse { inv } else { fwd };
    let dim = spec.dim();
    let total = data.len();
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            par::for_each_chunk_mut(data, n, |_, line| plan.process(line));
            continue;
        }
        // Gather the strided lines into contiguous rows, transform, scatter.
        let lines = total / n;
        let block = stride * n;
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        {
            let src: &[Complex64] = data;
            par::for_each_chunk_mut(&mut buf, n, |l, row| {
                let outer = l / stride;
                let inner = l % stride;
                let base = outer * block + inner;
                for (k, slot) in row.iter_mut().enumerate() {
                    *slot = src[base + k * stride];
                }
                plan.process(row);
            });
        }
        for l in 0..lines {
            let outer = l / stride;
            let inner = l % stride;
            let base = outer * block + inner;
            for k in 0..n {
                data[base + k * stride] = buf[l * n + k];
            }
        }
    }
}

/// `(-1)^{Σ k_a}`; equals `e^{iπ Σ k_a}` for signed wavenumbers since `N` is even.
fn checker_sign(spec: &GridSpec, idx: usize) -> f64 {
    let mut c = vec![0; spec.dim()];
    spec.unravel(idx, &mut c);
    if c.iter().sum::<usize>() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `f̂(ξ) = Σ_x f(x) e^{-i x·ξ} h^n` on the frequency grid.
pub fn forward_transform(f: &GridFunction) -> GridFunction {
    assert_eq!(f.domain(), Domain::Space, "forward transform expects a space-side function");
    let spec = *f.spec();
    let mut data = f.values().to_vec();
    fft_nd(&spec, &mut data, false);
    let h = spec.cell_volume();
    for (idx, v) in data.iter_mut().enumerate() {
        *v *= h * checker_sign(&spec, idx);
    }
    GridFunction::from_values(spec, Domain::Frequency, data)
}

/// Inverse of [`forward_transform`].
pub fn inverse_transform(fh: &GridFunction) -> GridFunction {
    assert_eq!(fh.domain(), Domain::Frequency, "inverse transform expects a frequency-side function");
    let spec = *fh.spec();
    let mut data: Vec<Complex64> = fh
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * checker_sign(&spec, idx))
        .collect();
    fft_nd(&spec, &mut data, true);
    let w = spec.dual_cell_volume();
    for v in data.iter_mut() {
        *v *= w;
    }
    GridFunction::from_values(spec, Domain::Space, data)
}

/// Applies the Fourier multiplier `m` (FFT-ordered) to a space-side function.
pub fn apply_multiplier(f: &GridFunction, m: &[Complex64]) -> GridFunction {
    let spec = *f.spec();
    assert_eq!(m.len(), spec.len());
    let mut data = f.values().to_vec();
    fft_nd(&spec, &mut data, false);
    for (v, w) in data.iter_mut().zip(m) {
        *v *= w;
    }
    fft_nd(&spec, &mut data, true);
    let scale = 1.0 / spec.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
    GridFunction::from_values(spec, Domain::Space, data)
}

/// Real multiplier variant of [`apply_multiplier`].
pub fn apply_real_multiplier(f: &GridFunction, m: &[f64]) -> GridFunction {
    let spec = *f.spec();
    assert_eq!(m.len(), spec.len());
    let mut data = f.values().to_vec();
    fft_nd(&spec, &mut data, false);
    for (v, w) in data.iter_mut().zip(m) {
        *v *= *w;
    }
    fft_nd(&spec, &mut data, true);
    let scale = 1.0 / spec.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
    GridFunction::from_values(spec, Domain::Space, data)
}

/// Radial `C^k` plateau bump: one on `|ξ| ≤ 1`, zero on `|ξ| ≥ 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    smoothness: usize,
}

impl Bump {
    pub fn new(smoothness: usize) -> Self {
        Self { smoothness }
    }

    pub fn smoothness(&self) -> usize {
        self.smoothness
    }

    /// `C^k` step from 0 at `t ≤ 0` to 1 at `t ≥ 1`; its first `k`
    /// derivatives vanish at both ends.
    pub fn step(&self, t: f64) -> f64 {
        smooth_step(t, self.smoothness)
    }

    /// `ψ̂` as a function of `r = |ξ|`.
    pub fn psi_hat(&self, r: f64) -> f64 {
        1.0 - self.step(r - 1.0)
    }

    /// `ψ̂_j(ξ) = ψ̂(2^{-j}ξ) - ψ̂(2^{-j+1}ξ)`, supported in `2^{j-1} ≤ |ξ| ≤ 2^{j+1}`.
    pub fn psi_j(&self, r: f64, j: i32) -> f64 {
        self.psi_hat(r * 2f64.powi(-j)) - self.psi_hat(r * 2f64.powi(1 - j))
    }

    /// `φ̂_0 = ψ̂`, `φ̂_j = ψ̂_j` for `j ≥ 1`.
    pub fn phi_j(&self, r: f64, j: usize) -> f64 {
        if j == 0 {
            self.psi_hat(r)
        } else {
            self.psi_j(r, j as i32)
        }
    }
}

impl Default for Bump {
    fn default() -> Self {
        Self::new(4)
    }
}

/// `t^{k+1} Σ_{i≤k} C(k+i, i) (1-t)^i` clamped to `[0, 1]`.
pub fn smooth_step(t: f64, k: usize) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut binom = 1.0;
    for i in 0..=k {
        if i > 0 {
            binom = binom * (k + i) as f64 / i as f64;
        }
        sum += binom * (1.0 - t).powi(i as i32);
    }
    t.powi(k as i32 + 1) * sum
}

/// The Littlewood–Paley family sampled on a grid's frequencies.
#[derive(Clone, Debug)]
pub struct LPFamily {
    spec: GridSpec,
    bump: Bump,
    top: usize,
    base: Vec<f64>,
    phi: Vec<Vec<f64>>,
}

/// Builds `φ̂_0, …, φ̂_J` with `J` the largest band whose support fits inside
/// the Nyquist ball.
pub fn littlewood_paley_family(spec: &GridSpec, smoothness: usize) -> Result<LPFamily> {
    let nyq = spec.nyquist_radius();
    if nyq < 4.0 {
        return Err(Error::InvalidGrid(format!(
            "Nyquist radius {nyq:.3} < 4 leaves no room for a band"
        )));
    }
    // Largest j with 2^{j+1} ≤ nyq.
    let mut top = 1usize;
    while 2f64.powi(top as i32 + 2) <= nyq {
        top += 1;
    }
    let bump = Bump::new(smoothness);
    let radii = spec.frequency_norms();
    let base: Vec<f64> = radii.iter().map(|&r| bump.psi_hat(r)).collect();
    let phi = (0..=top)
        .map(|j| radii.iter().map(|&r| bump.phi_j(r, j)).collect())
        .collect();
    Ok(LPFamily {
        spec: *spec,
        bump,
        top,
        base,
        phi,
    })
}

impl LPFamily {
    /// Top band index `J`.
    pub fn top(&self) -> usize {
        self.top
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn bump(&self) -> Bump {
        self.bump
    }

    /// `ψ̂` on the frequency grid.
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `φ̂_j` on the frequency grid.
    pub fn phi(&self, j: usize) -> Result<&[f64]> {
        self.phi
            .get(j)
            .map(|v| v.as_slice())
            .ok_or(Error::BandOutOfRange {
                index: j,
                top: self.top,
            })
    }

    /// `ψ̂_j` for `1 ≤ j ≤ J`; it coincides with `φ̂_j`.
    pub fn psi(&self, j: usize) -> Result<&[f64]> {
        if j == 0 {
            return Err(Error::BandOutOfRange {
                index: 0,
                top: self.top,
            });
        }
        self.phi(j)
    }

    /// Radius `2^J` below which the bands sum to one.
    pub fn covered_radius(&self) -> f64 {
        2f64.powi(self.top as i32)
    }
}

/// `φ_j ∗ f`.
pub fn band_project(f: &GridFunction, lp: &LPFamily, j: usize) -> Result<GridFunction> {
    Ok(apply_real_multiplier(f, lp.phi(j)?))
}
