//! Weight characteristics over the shifted dyadic cube collection.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::dyadic::Lattices;
use crate::grid::GridSpec;
use crate::sparse::dual_exponent;
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Class {
    Ap,
    Rh,
    AInf,
    SharpRh,
}

/// A strictly positive weight with memoized characteristics.
#[derive(Debug)]
pub struct Weight {
    values: Vec<f64>,
    cache: Mutex<HashMap<(Class, u64, usize), f64>>,
}

impl Clone for Weight {
    fn clone(&self) -> Self {
        Self {
            values: self.values.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

/// Upper end of the sharp reverse Hölder search.
pub const SHARP_RH_CAP: f64 = 32.0;

impl Weight {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!("weight value {v} is not positive")));
        }
        Ok(Self {
            values,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn constant(spec: &GridSpec, c: f64) -> Result<Self> {
        Self::new(vec![c; spec.len()])
    }

    /// `(|x| + h)^s`; the shift by one cell keeps the origin cell finite.
    pub fn power(spec: &GridSpec, s: f64) -> Self {
        let h = spec.spacing();
        let values = (0..spec.len())
            .map(|i| {
                let r = spec.point(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                (r + h).powf(s)
            })
            .collect();
        Self::new(values).expect("power weights are positive")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `ω^e`.
    pub fn pow(&self, e: f64) -> Self {
        Self::new(self.values.iter().map(|v| v.powf(e)).collect()).expect("positive")
    }

    fn cached(&self, key: (Class, u64, usize), compute: impl FnOnce() -> f64) -> f64 {
        if let Some(v) = self.cache.lock().expect("cache poisoned").get(&key) {
            return *v;
        }
        let v = compute();
        self.cache.lock().expect("cache poisoned").insert(key, v);
        v
    }

    /// `ω(S)` in volume units over a set of cells.
    pub fn mass(&self, cells: &[usize], cell_volume: f64) -> f64 {
        cells.iter().map(|&x| self.values[x]).sum::<f64>() * cell_volume
    }
}

/// Per-cube means `⟨v⟩_{1,Q}` for all lattices and levels.
fn means(lat: &Lattices, v: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let dim = lat.spec().dim() as u32;
    let mut sums = lat.level_sums(v);
    for levels in sums.iter_mut() {
        for (k, l) in levels.iter_mut().enumerate() {
            let size = lat.side_cells(k as u32).pow(dim) as f64;
            l.iter_mut().for_each(|x| *x /= size);
        }
    }
    sums
}

/// `max` over all cubes of `f(⟨a⟩_Q, ⟨b⟩_Q)`.
fn sup_pair(lat: &Lattices, a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let ma = means(lat, a);
    let mb = means(lat, b);
    ma.iter()
        .flatten()
        .flatten()
        .zip(mb.iter().flatten().flatten())
        .map(|(x, y)| f(*x, *y))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `[ω]_{A_q} = sup_Q ⟨ω⟩_{1,Q} ⟨ω^{1−q'}⟩_{1,Q}^{q−1}`.
pub fn ap_characteristic(lat: &Lattices, w: &Weight, q: f64) -> Result<f64> {
    if !(q > 1.0) || q.is_infinite() {
        return Err(Error::InvalidArgument(format!("A_q needs 1 < q < inf, got {q}")));
    }
    let key = (Class::Ap, q.to_bits(), lat.spec().cells());
    Ok(w.cached(key, || {
        let e = 1.0 - dual_exponent(q);
        let dual: Vec<f64> = w.values.iter().map(|v| v.powf(e)).collect();
        sup_pair(lat, &w.values, &dual, |a, b| a * b.powf(q - 1.0))
    }))
}

/// `[ω]_{RH_q} = sup_Q ⟨ω⟩_{1,Q}^{−1} ⟨ω⟩_{q,Q}`; `RH_1` is identically 1.
pub fn rh_characteristic(lat: &Lattices, w: &Weight, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidArgument(format!("RH_q needs q >= 1, got {q}")));
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    let key = (Class::Rh, q.to_bits(), lat.spec().cells());
    Ok(w.cached(key, || {
        if q.is_infinite() {
            let mut per = vec![vec![Vec::new(); lat.depth() as usize + 1]; lat.count()];
            for (t, levels) in per.iter_mut().enumerate() {
                for (k, l) in levels.iter_mut().enumerate() {
                    let mut m = vec![0.0f64; lat.cubes_at(k as u32)];
                    for (x, v) in w.values.iter().enumerate() {
                        let i = lat.level_index(t, k as u32, x);
                        m[i] = m[i].max(*v);
                    }
                    *l = m;
                }
            }
            let avg = means(lat, &w.values);
            return per
                .iter()
                .flatten()
                .flatten()
                .zip(avg.iter().flatten().flatten())
                .map(|(m, a)| m / a)
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let scale = w.values.iter().copied().fold(0.0, f64::max);
        let normed: Vec<f64> = w.values.iter().map(|v| v / scale).collect();
        let pw: Vec<f64> = normed.iter().map(|v| v.powf(q)).collect();
        sup_pair(lat, &normed, &pw, |a, b| b.powf(1.0 / q) / a)
    }))
}

/// `[ω]_{A_∞} = sup_Q ω(Q)^{−1} ∫_Q M(ω 1_Q)`, with `M` the dyadic maximal
/// operator over all lattices.
pub fn ainfty_characteristic(lat: &Lattices, w: &Weight) -> f64 {
    let key = (Class::AInf, 0, lat.spec().cells());
    w.cached(key, || {
        let depth = lat.depth();
        let tasks: Vec<(usize, u32)> = (0..lat.count())
            .flat_map(|t| (0..=depth).map(move |k| (t, k)))
            .collect();
        par::map_slice(&tasks, |&(t, k)| {
            // Scratch sums of ω over R ∩ Q for every cube R, reset after each Q.
            let mut bins: Vec<Vec<Vec<f64>>> = (0..lat.count())
                .map(|_| (0..=depth).map(|j| vec![0.0; lat.cubes_at(j)]).collect())
                .collect();
            let mut worst = f64::NEG_INFINITY;
            for flat in 0..lat.cubes_at(k) {
                let q = lat.cube_at(t, k, flat);
                let cells = lat.cells(&q);
                let mut touched: Vec<(usize, u32, usize)> = Vec::new();
                for &x in &cells {
                    for (s, levels) in bins.iter_mut().enumerate() {
                        for (j, b) in levels.iter_mut().enumerate() {
                            let i = lat.level_index(s, j as u32, x);
                            if b[i] == 0.0 {
                                touched.push((s, j as u32, i));
                            }
                            b[i] += w.values[x];
                        }
                    }
                }
                let dim = lat.spec().dim() as u32;
                let mut integral = 0.0;
                let mut mass = 0.0;
                for &x in &cells {
                    mass += w.values[x];
                    let mut m = 0.0f64;
                    for (s, levels) in bins.iter().enumerate() {
                        for (j, b) in levels.iter().enumerate() {
                            let size = lat.side_cells(j as u32).pow(dim) as f64;
                            m = m.max(b[lat.level_index(s, j as u32, x)] / size);
                        }
                    }
                    integral += m;
                }
                for (s, j, i) in touched {
                    bins[s][j as usize][i] = 0.0;
                }
                worst = worst.max(integral / mass);
            }
            worst
        })
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// `sup_Q ⟨ω⟩_{δ,Q} / ⟨ω⟩_{1,Q}`.
pub fn rh_ratio(lat: &Lattices, w: &Weight, delta: f64) -> f64 {
    let scale = w.values.iter().copied().fold(0.0, f64::max);
    let normed: Vec<f64> = w.values.iter().map(|v| v / scale).collect();
    let pw: Vec<f64> = normed.iter().map(|v| v.powf(delta)).collect();
    sup_pair(lat, &normed, &pw, |a, b| b.powf(1.0 / delta) / a)
}

/// Largest `δ ∈ [1, 32]` with `sup_Q ⟨ω⟩_{δ,Q} ≤ 2⟨ω⟩_{1,Q}`, by bisection
/// on the monotone power-mean ratio. Returns the cap when it is feasible.
pub fn sharp_rh_exponent(lat: &Lattices, w: &Weight) -> f64 {
    let key = (Class::SharpRh, 0, lat.spec().cells());
    w.cached(key, || {
        if rh_ratio(lat, w, SHARP_RH_CAP) <= 2.0 {
            return SHARP_RH_CAP;
        }
        let (mut lo, mut hi) = (1.0f64, SHARP_RH_CAP);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if rh_ratio(lat, w, mid) <= 2.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    })
}
