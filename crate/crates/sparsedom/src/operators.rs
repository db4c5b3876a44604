//! Symbols, pseudodifferential operators, the dispersive propagator and the
//! maximal operators over the shifted dyadic cube collection.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::dyadic::{local_mean, Lattices};
use crate::grid::{apply_multiplier, forward_transform, smooth_step, GridFunction, GridSpec, LPFamily};
use crate::{par, Error, Result};

/// A linear map on grid functions.
pub trait LinearOperator: Sync {
    fn apply(&self, f: &GridFunction) -> GridFunction;
}

impl<F: Fn(&GridFunction) -> GridFunction + Sync> LinearOperator for F {
    fn apply(&self, f: &GridFunction) -> GridFunction {
        self(f)
    }
}

/// The identity operator.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl LinearOperator for Identity {
    fn apply(&self, f: &GridFunction) -> GridFunction {
        f.clone()
    }
}

/// Fourier multiplier with values sampled on one grid's frequencies.
#[derive(Clone, Debug)]
pub struct Multiplier {
    pub values: Vec<Complex64>,
}

impl LinearOperator for Multiplier {
    fn apply(&self, f: &GridFunction) -> GridFunction {
        apply_multiplier(f, &self.values)
    }
}

type FreqFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;
type FullFn = Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync>;

/// How a symbol is evaluated.
#[derive(Clone)]
pub enum SymbolKind {
    /// `⟨ξ⟩^m = (1 + |ξ|²)^{m/2}`.
    Bessel,
    /// `e^{i|ξ|^{1−ρ}} χ(ξ) |ξ|^m`, with `χ` a smooth cutoff that vanishes on
    /// `|ξ| ≤ 1/2` and equals one on `|ξ| ≥ 1`.
    Oscillatory,
    /// `σ(x) ⟨ξ⟩^m` with the periodic modulation of [`Modulation`].
    Modulated(Modulation),
    /// An arbitrary `x`-independent symbol.
    Multiplier(FreqFn),
    /// An arbitrary symbol `a(x, ξ)`.
    General(FullFn),
}

impl fmt::Debug for SymbolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bessel => write!(f, "Bessel"),
            Self::Oscillatory => write!(f, "Oscillatory"),
            Self::Modulated(m) => write!(f, "Modulated({m:?})"),
            Self::Multiplier(_) => write!(f, "Multiplier(..)"),
            Self::General(_) => write!(f, "General(..)"),
        }
    }
}

/// `σ(x) = 1 + ε · mean_a Σ_q c_q cos(qπx_a/L) / Σ_q c_q` with
/// `c_q = (1+q²)^{−3}`, `1 ≤ q ≤ harmonics`. Periodic on the box, bounded
/// below by `1 − ε`, and `C^4` uniformly in the number of harmonics.
#[derive(Clone, Debug, PartialEq)]
pub struct Modulation {
    pub epsilon: f64,
    pub half_width: f64,
    pub harmonics: usize,
}

impl Modulation {
    fn weights(&self) -> (Vec<f64>, f64) {
        let c: Vec<f64> = (1..=self.harmonics)
            .map(|q| (1.0 + (q * q) as f64).powi(-3))
            .collect();
        let total = c.iter().sum();
        (c, total)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.derivative(x, &vec![0; x.len()])
    }

    /// `∂^β σ(x)`.
    pub fn derivative(&self, x: &[f64], beta: &[usize]) -> f64 {
        let (c, total) = self.weights();
        let k0 = PI / self.half_width;
        let order: usize = beta.iter().sum();
        let n = x.len() as f64;
        let axis_sum = |a: usize, d: usize| -> f64 {
            c.iter()
                .enumerate()
                .map(|(i, cq)| {
                    let k = (i + 1) as f64 * k0;
                    // d-th derivative of cos(k x).
                    let phase = k * x[a] + d as f64 * PI / 2.0;
                    cq * k.powi(d as i32) * phase.cos()
                })
                .sum::<f64>()
                / total
        };
        if order == 0 {
            return 1.0 + self.epsilon * (0..x.len()).map(|a| axis_sum(a, 0)).sum::<f64>() / n;
        }
        // A mixed derivative of a sum of single-axis terms vanishes.
        let axes: Vec<usize> = (0..beta.len()).filter(|&a| beta[a] > 0).collect();
        if axes.len() > 1 {
            return 0.0;
        }
        self.epsilon * axis_sum(axes[0], beta[axes[0]]) / n
    }
}

/// A symbol with its declared class `S^m_{ρ,δ}`.
#[derive(Clone, Debug)]
pub struct Symbol {
    pub m: f64,
    pub rho: f64,
    pub delta: f64,
    pub kind: SymbolKind,
}

/// Smooth radial cutoff: 0 on `r ≤ 1/2`, 1 on `r ≥ 1`.
pub fn low_cutoff(r: f64) -> f64 {
    smooth_step(2.0 * r - 1.0, 4)
}

impl Symbol {
    /// `⟨ξ⟩^m`, class `S^m_{1,0}`.
    pub fn bessel(m: f64) -> Self {
        Self {
            m,
            rho: 1.0,
            delta: 0.0,
            kind: SymbolKind::Bessel,
        }
    }

    /// `e^{i|ξ|^{1−ρ}} χ(ξ) |ξ|^m`, class `S^m_{ρ,0}`.
    pub fn oscillatory(m: f64, rho: f64) -> Self {
        Self {
            m,
            rho,
            delta: 0.0,
            kind: SymbolKind::Oscillatory,
        }
    }

    /// `σ(x)⟨ξ⟩^m`, class `S^m_{1,0}`.
    pub fn modulated(m: f64, modulation: Modulation) -> Self {
        Self {
            m,
            rho: 1.0,
            delta: 0.0,
            kind: SymbolKind::Modulated(modulation),
        }
    }

    pub fn multiplier(
        m: f64,
        rho: f64,
        f: impl Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            m,
            rho,
            delta: 0.0,
            kind: SymbolKind::Multiplier(Arc::new(f)),
        }
    }

    pub fn general(
        m: f64,
        rho: f64,
        delta: f64,
        f: impl Fn(&[f64], &[f64]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            m,
            rho,
            delta,
            kind: SymbolKind::General(Arc::new(f)),
        }
    }

    /// Same symbol, different declared class.
    pub fn with_class(mut self, m: f64, rho: f64, delta: f64) -> Self {
        self.m = m;
        self.rho = rho;
        self.delta = delta;
        self
    }

    pub fn is_x_independent(&self) -> bool {
        !matches!(self.kind, SymbolKind::Modulated(_) | SymbolKind::General(_))
    }

    /// Frequency factor `b(ξ)` of a product symbol `σ(x) b(ξ)`; the whole
    /// symbol when it is `x`-independent.
    fn frequency_factor(&self, xi: &[f64]) -> Option<Complex64> {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        match &self.kind {
            SymbolKind::Bessel | SymbolKind::Modulated(_) => {
                Some(Complex64::new((1.0 + r * r).powf(self.m / 2.0), 0.0))
            }
            SymbolKind::Oscillatory => {
                let chi = low_cutoff(r);
                if chi == 0.0 {
                    return Some(Complex64::new(0.0, 0.0));
                }
                Some(Complex64::from_polar(chi * r.powf(self.m), r.powf(1.0 - self.rho)))
            }
            SymbolKind::Multiplier(f) => Some(f(xi)),
            SymbolKind::General(_) => None,
        }
    }

    /// `a(x, ξ)`.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Complex64 {
        match &self.kind {
            SymbolKind::Modulated(m) => m.eval(x) * self.frequency_factor(xi).expect("product"),
            SymbolKind::General(f) => f(x, xi),
            _ => self.frequency_factor(xi).expect("x-independent"),
        }
    }

    /// `b(ξ)` sampled on the frequency grid, for symbols of the form `σ(x)b(ξ)`.
    pub fn frequency_samples(&self, spec: &GridSpec) -> Option<Vec<Complex64>> {
        if matches!(self.kind, SymbolKind::General(_)) {
            return None;
        }
        Some(par::map_range(spec.len(), |i| {
            self.frequency_factor(&spec.frequency_point(i)).expect("product")
        }))
    }

    /// `σ(x)` on the grid for modulated symbols.
    pub fn modulation_samples(&self, spec: &GridSpec) -> Option<Vec<f64>> {
        match &self.kind {
            SymbolKind::Modulated(m) => Some(par::map_range(spec.len(), |i| m.eval(&spec.point(i)))),
            _ => None,
        }
    }
}

/// `a(x,D)` precomputed for one grid.
#[derive(Clone, Debug)]
pub struct PdoOperator {
    symbol: Symbol,
    spec: GridSpec,
    band: Option<Vec<f64>>,
    freq: Option<Vec<Complex64>>,
    sigma: Option<Vec<f64>>,
}

impl PdoOperator {
    pub fn new(symbol: &Symbol, spec: &GridSpec) -> Self {
        Self::with_band(symbol, spec, None)
    }

    /// `a(x,ξ) φ̂(ξ)` for a real frequency profile `φ̂`.
    pub fn with_band(symbol: &Symbol, spec: &GridSpec, band: Option<&[f64]>) -> Self {
        let mut freq = symbol.frequency_samples(spec);
        if let (Some(fr), Some(b)) = (freq.as_mut(), band) {
            for (v, w) in fr.iter_mut().zip(b) {
                *v *= *w;
            }
        }
        Self {
            symbol: symbol.clone(),
            spec: *spec,
            band: band.map(|b| b.to_vec()),
            freq,
            sigma: symbol.modulation_samples(spec),
        }
    }

    pub fn symbol(&self) -> &Symbol {
        &self.symbol
    }
}

impl LinearOperator for PdoOperator {
    fn apply(&self, f: &GridFunction) -> GridFunction {
        assert_eq!(f.spec(), &self.spec, "operator built for another grid");
        match (&self.freq, &self.sigma) {
            (Some(m), None) => apply_multiplier(f, m),
            (Some(m), Some(sigma)) => {
                let mut u = apply_multiplier(f, m);
                for (v, s) in u.values_mut().iter_mut().zip(sigma) {
                    *v *= *s;
                }
                u
            }
            _ => quadrature(&self.symbol, f, self.band.as_deref()),
        }
    }
}

/// `a(x,D)f(x) = (2π)^{−n} ∫ e^{ix·ξ} a(x,ξ) f̂(ξ) dξ` on the grid. Product
/// and `x`-independent symbols go through the FFT; general symbols use
/// [`apply_pdo_quadrature`].
pub fn apply_pdo(a: &Symbol, f: &GridFunction) -> GridFunction {
    PdoOperator::new(a, f.spec()).apply(f)
}

/// Direct `O(N^{2n})` quadrature of the defining integral, valid for every
/// symbol.
pub fn apply_pdo_quadrature(a: &Symbol, f: &GridFunction) -> GridFunction {
    quadrature(a, f, None)
}

fn quadrature(a: &Symbol, f: &GridFunction, band: Option<&[f64]>) -> GridFunction {
    let spec = *f.spec();
    let fh = forward_transform(f);
    let w = spec.dual_cell_volume();
    let dim = spec.dim();
    let freqs: Vec<Vec<f64>> = (0..spec.len()).map(|i| spec.frequency_point(i)).collect();
    let active: Vec<usize> = (0..spec.len())
        .filter(|&i| fh.values()[i].norm() != 0.0 && band.is_none_or(|b| b[i] != 0.0))
        .collect();
    let values = par::map_range(spec.len(), |ix| {
        let x = spec.point(ix);
        let mut acc = Complex64::new(0.0, 0.0);
        for &k in &active {
            let xi = &freqs[k];
            let phase: f64 = (0..dim).map(|d| x[d] * xi[d]).sum();
            let mut term = a.eval(&x, xi) * fh.values()[k] * Complex64::from_polar(1.0, phase);
            if let Some(b) = band {
                term *= b[k];
            }
            acc += term;
        }
        acc * w
    });
    GridFunction::from_values(spec, crate::grid::Domain::Space, values)
}

/// `a_j(x,D)f` with `a_j = a φ̂_j`.
pub fn dyadic_piece(a: &Symbol, lp: &LPFamily, j: usize, f: &GridFunction) -> Result<GridFunction> {
    let band = lp.phi(j)?;
    Ok(PdoOperator::with_band(a, f.spec(), Some(band)).apply(f))
}

/// `U_ρ(t)`: the multiplier `e^{it|ξ|^{1−ρ}}`.
#[derive(Clone, Debug)]
pub struct Propagator {
    multiplier: Vec<Complex64>,
}

impl Propagator {
    pub fn new(spec: &GridSpec, rho: f64, t: f64) -> Self {
        let radii = spec.frequency_norms();
        Self {
            multiplier: radii
                .iter()
                .map(|&r| Complex64::from_polar(1.0, t * r.powf(1.0 - rho)))
                .collect(),
        }
    }
}

impl LinearOperator for Propagator {
    fn apply(&self, f: &GridFunction) -> GridFunction {
        apply_multiplier(f, &self.multiplier)
    }
}

pub fn propagator(rho: f64, t: f64, f: &GridFunction) -> GridFunction {
    Propagator::new(f.spec(), rho, t).apply(f)
}

/// Free evolution of `e^{−x²/2}` under `e^{it|ξ|²}`:
/// `(1 − 2it)^{−1/2} e^{−x²/(2(1−2it))}`.
pub fn evolved_gaussian(x: f64, t: f64) -> Complex64 {
    let z = Complex64::new(1.0, -2.0 * t);
    z.powf(-0.5) * (-(x * x) / (2.0 * z)).exp()
}

fn per_cube_means(lat: &Lattices, abs_pow: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let mut sums = lat.level_sums(abs_pow);
    for levels in sums.iter_mut() {
        for (k, l) in levels.iter_mut().enumerate() {
            let size = lat.cell_count(&lat.root(0)) >> (k * lat.spec().dim());
            for v in l.iter_mut() {
                *v /= size as f64;
            }
        }
    }
    sums
}

/// `M_r f(x) = sup_{Q∋x} ⟨f⟩_{r,Q}`.
pub fn maximal(lat: &Lattices, f: &[f64], r: f64) -> Vec<f64> {
    assert!(r >= 1.0);
    if r.is_infinite() {
        let mut per = vec![vec![Vec::new(); lat.depth() as usize + 1]; lat.count()];
        for (t, levels) in per.iter_mut().enumerate() {
            for (k, l) in levels.iter_mut().enumerate() {
                let mut m = vec![0.0f64; lat.cubes_at(k as u32)];
                for (x, v) in f.iter().enumerate() {
                    let i = lat.level_index(t, k as u32, x);
                    m[i] = m[i].max(v.abs());
                }
                *l = m;
            }
        }
        return lat.sup_over_cubes(&per);
    }
    let p: Vec<f64> = f.iter().map(|v| v.abs().powf(r)).collect();
    let mut means = per_cube_means(lat, &p);
    for v in means.iter_mut().flatten().flatten() {
        *v = v.powf(1.0 / r);
    }
    lat.sup_over_cubes(&means)
}

/// `M^γ h(x) = sup_{Q∋x} |Q|^γ ⟨h⟩_{1,Q}` with `|Q|` in volume units.
pub fn fractional_maximal(lat: &Lattices, h: &[f64], gamma: f64) -> Vec<f64> {
    let abs: Vec<f64> = h.iter().map(|v| v.abs()).collect();
    let mut means = per_cube_means(lat, &abs);
    let vol = lat.spec().cell_volume();
    for levels in means.iter_mut() {
        for (k, l) in levels.iter_mut().enumerate() {
            let size = (lat.side_cells(k as u32) as f64).powi(lat.spec().dim() as i32) * vol;
            let scale = size.powf(gamma);
            for v in l.iter_mut() {
                *v *= scale;
            }
        }
    }
    lat.sup_over_cubes(&means)
}

/// Fefferman–Stein `g^♯(x) = sup_{Q∋x} ⟨|g − ⟨g⟩_Q|⟩_{1,Q}`.
pub fn sharp_maximal(lat: &Lattices, g: &[Complex64]) -> Vec<f64> {
    let re: Vec<f64> = g.iter().map(|v| v.re).collect();
    let im: Vec<f64> = g.iter().map(|v| v.im).collect();
    let mre = per_cube_means(lat, &re);
    let mim = per_cube_means(lat, &im);
    let depth = lat.depth();
    let per: Vec<Vec<Vec<f64>>> = par::map_range(lat.count(), |t| {
        (0..=depth)
            .map(|k| {
                let mut acc = vec![0.0; lat.cubes_at(k)];
                for (x, v) in g.iter().enumerate() {
                    let i = lat.level_index(t, k, x);
                    let mean = Complex64::new(mre[t][k as usize][i], mim[t][k as usize][i]);
                    acc[i] += (v - mean).norm();
                }
                let size = lat.side_cells(k).pow(lat.spec().dim() as u32) as f64;
                acc.iter_mut().for_each(|v| *v /= size);
                acc
            })
            .collect()
    });
    lat.sup_over_cubes(&per)
}

/// Which base points a grand maximal evaluation visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    All,
    /// Cells whose every coordinate is a multiple of the stride.
    Every(usize),
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Every(4)
    }
}

impl Sampling {
    pub fn points(&self, spec: &GridSpec) -> Vec<usize> {
        match *self {
            Sampling::All => (0..spec.len()).collect(),
            Sampling::Every(k) => {
                let k = k.max(1);
                let mut c = vec![0; spec.dim()];
                (0..spec.len())
                    .filter(|&i| {
                        spec.unravel(i, &mut c);
                        c.iter().all(|v| v % k == 0)
                    })
                    .collect()
            }
        }
    }
}

/// `M_{T,s}f` at sampled base points.
#[derive(Clone, Debug)]
pub struct GrandMaximal {
    pub points: Vec<usize>,
    pub values: Vec<f64>,
}

/// `M_{T,s} f(x) = sup_{Q∋x} ⟨T(f 1_{(3Q)^c})⟩_{s,Q}`. One application of `T`
/// per cube that holds a base point; cubes whose triple is the whole box
/// contribute zero and are skipped.
pub fn grand_maximal(
    lat: &Lattices,
    t: &dyn LinearOperator,
    f: &GridFunction,
    s: f64,
    sampling: Sampling,
) -> GrandMaximal {
    let spec = *lat.spec();
    let points = sampling.points(&spec);
    let mut is_point = vec![usize::MAX; spec.len()];
    for (i, &p) in points.iter().enumerate() {
        is_point[p] = i;
    }
    let mut cubes = Vec::new();
    for lattice in 0..lat.count() {
        for k in 0..=lat.depth() {
            let mut has = vec![false; lat.cubes_at(k)];
            for &p in &points {
                has[lat.level_index(lattice, k, p)] = true;
            }
            for (flat, h) in has.into_iter().enumerate() {
                if h {
                    let q = lat.cube_at(lattice, k, flat);
                    if !lat.dilate_cube(&q, 3.0).is_full(spec.cells()) {
                        cubes.push(q);
                    }
                }
            }
        }
    }
    let per = par::map_slice(&cubes, |q| {
        let near = lat.dilate_cube(q, 3.0).mask(&spec);
        let keep: Vec<bool> = near.iter().map(|b| !b).collect();
        let tf = t.apply(&f.masked(&keep)).abs();
        let cells = lat.cells(q);
        (local_mean(&tf, &cells, s), cells)
    });
    let mut values = vec![0.0f64; points.len()];
    for (v, cells) in per {
        for x in cells {
            let i = is_point[x];
            if i != usize::MAX {
                values[i] = values[i].max(v);
            }
        }
    }
    GrandMaximal { points, values }
}

/// Finite-difference weights for the `k`-th derivative on the centred
/// stencil `{k/2 − i : i = 0..=k}` with unit step.
fn stencil(k: usize) -> Vec<(f64, f64)> {
    let mut binom = 1.0;
    (0..=k)
        .map(|i| {
            if i > 0 {
                binom = binom * (k + 1 - i) as f64 / i as f64;
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            (k as f64 / 2.0 - i as f64, sign * binom)
        })
        .collect()
}

/// Sample points used by [`symbol_seminorm`]: radial frequencies along each
/// axis and the diagonal, geometric from 1/4 to the Nyquist radius, and 16
/// positions along the box diagonal.
pub fn seminorm_samples(spec: &GridSpec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let dim = spec.dim();
    let nyq = spec.nyquist_radius();
    let radii: Vec<f64> = (0..48)
        .map(|i| 0.25 * (nyq / 0.25).powf(i as f64 / 47.0))
        .collect();
    let mut dirs: Vec<Vec<f64>> = (0..dim)
        .map(|a| (0..dim).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect();
    if dim > 1 {
        dirs.push(vec![1.0 / (dim as f64).sqrt(); dim]);
    }
    let xis = dirs
        .iter()
        .flat_map(|d| radii.iter().map(move |r| d.iter().map(|c| c * r).collect()))
        .collect();
    let l = spec.half_width();
    let xs = (0..16)
        .map(|i| vec![-l + (i as f64 + 0.5) * 2.0 * l / 16.0; dim])
        .collect();
    (xis, xs)
}

/// Estimated `sup_{x,ξ} (1+|ξ|)^{−m+ρ|α|−δ|β|} |∂^β_x ∂^α_ξ a(x,ξ)|` by
/// centred tensor differences with steps `h_ξ = 0.02(1+|ξ|)^{1/2}` and
/// `h_x = h/4`, over [`seminorm_samples`].
pub fn symbol_seminorm(a: &Symbol, alpha: &[usize], beta: &[usize], spec: &GridSpec) -> Result<f64> {
    let dim = spec.dim();
    if alpha.len() != dim || beta.len() != dim {
        return Err(Error::InvalidArgument("multi-index length must equal n".into()));
    }
    let na: usize = alpha.iter().sum();
    let nb: usize = beta.iter().sum();
    if na + nb > 4 {
        return Err(Error::InvalidArgument(format!(
            "order {} exceeds the stencil limit 4",
            na + nb
        )));
    }
    let (xis, xs) = seminorm_samples(spec);
    let hx = spec.spacing() / 4.0;
    let mut offsets: Vec<(Vec<f64>, Vec<f64>, f64)> = vec![(vec![0.0; dim], vec![0.0; dim], 1.0)];
    for (axis, &k) in alpha.iter().enumerate() {
        let st = stencil(k);
        offsets = offsets
            .into_iter()
            .flat_map(|(dx, dxi, w)| {
                st.iter().map(move |&(o, c)| {
                    let mut dxi = dxi.clone();
                    dxi[axis] += o;
                    (dx.clone(), dxi, w * c)
                })
            })
            .collect();
    }
    for (axis, &k) in beta.iter().enumerate() {
        let st = stencil(k);
        offsets = offsets
            .into_iter()
            .flat_map(|(dx, dxi, w)| {
                st.iter().map(move |&(o, c)| {
                    let mut dx = dx.clone();
                    dx[axis] += o;
                    (dx, dxi.clone(), w * c)
                })
            })
            .collect();
    }
    let sup = par::map_slice(&xis, |xi| {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let hxi = 0.02 * (1.0 + r).sqrt();
        let scale = (1.0 + r).powf(-a.m + a.rho * na as f64 - a.delta * nb as f64)
            / (hxi.powi(na as i32) * hx.powi(nb as i32));
        xs.iter()
            .map(|x| {
                let d: Complex64 = offsets
                    .iter()
                    .map(|(dx, dxi, w)| {
                        let xx: Vec<f64> = x.iter().zip(dx).map(|(v, o)| v + o * hx).collect();
                        let yy: Vec<f64> = xi.iter().zip(dxi).map(|(v, o)| v + o * hxi).collect();
                        a.eval(&xx, &yy) * *w
                    })
                    .sum();
                d.norm() * scale
            })
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::littlewood_paley_family;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(spec: GridSpec, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        GridFunction::from_real(spec, &v)
    }

    #[test]
    fn identity_and_shift() {
        let spec = GridSpec::new(1, 64, 2.0).unwrap();
        let f = random(spec, 1);
        let one = Symbol::multiplier(0.0, 1.0, |_| Complex64::new(1.0, 0.0));
        assert!(apply_pdo(&one, &f).max_abs_diff(&f) < 1e-14);
        let v = 5.0 * spec.spacing();
        let shift = Symbol::multiplier(0.0, 1.0, move |xi| Complex64::from_polar(1.0, v * xi[0]));
        let u = apply_pdo(&shift, &f);
        // e^{ivξ} translates by −v: u(x) = f(x + v).
        for i in 0..64 {
            assert!((u.values()[i] - f.values()[(i + 5) % 64]).norm() < 1e-12);
        }
    }

    #[test]
    fn bessel_eigenvalue_on_a_mode() {
        let spec = GridSpec::new(1, 64, 2.0).unwrap();
        let xi0 = 7.0 * PI / 2.0;
        let f = spec.sample(|x| Complex64::from_polar(1.0, xi0 * x[0]));
        let u = apply_pdo(&Symbol::bessel(-1.0), &f);
        let expect = f.scale(Complex64::new((1.0 + xi0 * xi0).powf(-0.5), 0.0));
        assert!(u.max_abs_diff(&expect) < 1e-13);
    }

    #[test]
    fn quadrature_matches_multiplier() {
        let spec = GridSpec::new(1, 64, 3.0).unwrap();
        let f = random(spec, 2);
        for a in [Symbol::bessel(-0.5), Symbol::oscillatory(-0.25, 0.5)] {
            let fast = apply_pdo(&a, &f);
            let slow = apply_pdo_quadrature(&a, &f);
            assert!(fast.max_abs_diff(&slow) < 1e-10);
        }
        let spec2 = GridSpec::new(2, 16, 3.0).unwrap();
        let f2 = random(spec2, 3);
        let m = Symbol::modulated(
            -1.0,
            Modulation {
                epsilon: 0.5,
                half_width: 3.0,
                harmonics: 8,
            },
        );
        assert!(apply_pdo(&m, &f2).max_abs_diff(&apply_pdo_quadrature(&m, &f2)) < 1e-10);
    }

    #[test]
    fn dyadic_pieces_reconstruct() {
        let spec = GridSpec::new(1, 256, 8.0).unwrap();
        let lp = littlewood_paley_family(&spec, 4).unwrap();
        let limit = lp.covered_radius();
        let raw = random(spec, 4);
        let mask: Vec<f64> = spec
            .frequency_norms()
            .iter()
            .map(|&r| if r <= limit { 1.0 } else { 0.0 })
            .collect();
        let f = crate::grid::apply_real_multiplier(&raw, &mask);
        let a = Symbol::bessel(-0.5);
        let mut sum = GridFunction::zeros(spec);
        for j in 0..=lp.top() {
            sum = sum.add(&dyadic_piece(&a, &lp, j, &f).unwrap());
        }
        assert!(sum.max_abs_diff(&apply_pdo(&a, &f)) < 1e-9);
        assert!(dyadic_piece(&a, &lp, lp.top() + 1, &f).is_err());
    }

    #[test]
    fn propagator_unitary_group_and_gaussian() {
        let spec = GridSpec::new(1, 2048, 64.0).unwrap();
        let f = spec.sample_real(|x| (-x[0] * x[0] / 2.0).exp());
        let u1 = propagator(-1.0, 0.7, &f);
        assert!((u1.norm(2.0) - f.norm(2.0)).abs() < 1e-10 * f.norm(2.0));
        let u2 = propagator(-1.0, 0.5, &propagator(-1.0, 0.2, &f));
        assert!(u1.max_abs_diff(&u2) < 1e-10);
        assert!(propagator(-1.0, 0.0, &f).max_abs_diff(&f) < 1e-14);
        let t = 1.5;
        let u = propagator(-1.0, t, &f);
        let exact = spec.sample(|x| evolved_gaussian(x[0], t));
        let err = u.sub(&exact).norm(2.0) / exact.norm(2.0);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // x doubles as the cell index.
    fn maximal_examples() {
        let spec = GridSpec::new(1, 64, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let m = maximal(&lat, &vec![2.5; 64], 1.0);
        assert!(m.iter().all(|v| (v - 2.5).abs() < 1e-14));
        let mut spike = vec![0.0; 64];
        spike[20] = 1.0;
        let m1 = maximal(&lat, &spike, 1.0);
        // Brute force over every cube of every lattice.
        for x in 0..64 {
            let mut best: f64 = 0.0;
            for t in 0..3 {
                for k in 0..=6 {
                    let q = lat.cube_containing(t, k, x);
                    let cells = lat.cells(&q);
                    if cells.contains(&20) {
                        best = best.max(1.0 / cells.len() as f64);
                    }
                }
            }
            assert!((m1[x] - best).abs() < 1e-15);
        }
        let f: Vec<f64> = random(spec, 5).re();
        let a = maximal(&lat, &f, 1.0);
        let b = maximal(&lat, &f, 2.0);
        for x in 0..64 {
            assert!(b[x] >= a[x] - 1e-12 && a[x] >= f[x].abs() - 1e-12);
        }
    }

    #[test]
    fn fractional_maximal_examples() {
        let spec = GridSpec::new(1, 64, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let f: Vec<f64> = random(spec, 6).re();
        let g0 = fractional_maximal(&lat, &f, 0.0);
        let m1 = maximal(&lat, &f, 1.0);
        assert!(g0.iter().zip(&m1).all(|(a, b)| (a - b).abs() < 1e-14));
        let ones = fractional_maximal(&lat, &vec![1.0; 64], 0.5);
        assert!(ones.iter().all(|v| (v - 2f64.sqrt()).abs() < 1e-14));
    }

    #[test]
    fn sharp_examples() {
        let spec = GridSpec::new(1, 64, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let c = vec![Complex64::new(1.0, 2.0); 64];
        assert!(sharp_maximal(&lat, &c).iter().all(|v| v.abs() < 1e-14));
        let half: Vec<Complex64> = (0..64).map(|i| Complex64::new((i < 32) as u8 as f64, 0.0)).collect();
        let s = sharp_maximal(&lat, &half);
        let m = maximal(&lat, &half.iter().map(|v| v.re).collect::<Vec<_>>(), 1.0);
        // The root is split evenly, so its mean oscillation is 1/2.
        assert!(s.iter().all(|&v| v >= 0.5 - 1e-14));
        assert!(s.iter().zip(&m).all(|(a, b)| *a <= 2.0 * b + 1e-14));
    }

    #[test]
    fn grand_maximal_identity_vanishes_at_infinity_norm() {
        let spec = GridSpec::new(1, 64, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let f = random(spec, 7);
        let g = grand_maximal(&lat, &Identity, &f, f64::INFINITY, Sampling::All);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seminorm_examples() {
        let spec = GridSpec::new(1, 256, 8.0).unwrap();
        let one = Symbol::multiplier(0.0, 1.0, |_| Complex64::new(1.0, 0.0));
        assert!(symbol_seminorm(&one, &[1], &[0], &spec).unwrap() < 1e-9);
        let m = -1.0;
        let a = Symbol::bessel(m);
        let est = symbol_seminorm(&a, &[1], &[0], &spec).unwrap();
        let (xis, _) = seminorm_samples(&spec);
        let exact = xis
            .iter()
            .map(|xi| {
                let r = xi[0].abs();
                (1.0 + r).powf(1.0 - m) * m.abs() * r * (1.0 + r * r).powf(m / 2.0 - 1.0)
            })
            .fold(0.0, f64::max);
        assert!((est - exact).abs() < 0.05 * exact, "{est} vs {exact}");
        assert!(symbol_seminorm(&a, &[5], &[0], &spec).is_err());
    }
}
