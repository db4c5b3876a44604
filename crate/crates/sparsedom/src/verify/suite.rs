//! Test functions defined in physical coordinates, so the same function is
//! sampled at every resolution.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dyadic::{Cube, Lattices};
use crate::grid::{GridFunction, GridSpec};
use crate::sparse::SparseFamily;
use crate::Complex64;

/// A named test function, resampled on demand.
#[derive(Clone, Debug)]
pub enum TestFunction {
    /// `e^{−|x−c|²/(2w²)}`.
    Gaussian { center: Vec<f64>, width: f64 },
    /// `(1 − |x−c|²/w²)^4_+`, a compactly supported `C^3` bump.
    Bump { center: Vec<f64>, width: f64 },
    /// Real trigonometric polynomial with `|k|π/L ≤ band`, Gaussian
    /// coefficients drawn from `seed`.
    Field { seed: u64, band: f64 },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            Self::Gaussian { center, width } => format!("gauss(c={center:?},w={width})"),
            Self::Bump { center, width } => format!("bump(c={center:?},w={width})"),
            Self::Field { seed, band } => format!("field(seed={seed},band={band})"),
        }
    }

    pub fn sample(&self, spec: &GridSpec) -> GridFunction {
        match self {
            Self::Gaussian { center, width } => spec.sample_real(|x| (-dist2(x, center) / (2.0 * width * width)).exp()),
            Self::Bump { center, width } => spec.sample_real(|x| (1.0 - dist2(x, center) / (width * width)).max(0.0).powi(4)),
            Self::Field { seed, band } => field(spec, *seed, *band),
        }
    }
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Wavenumber vectors with `|k|π/L ≤ band`, in a resolution-independent order.
fn wavenumbers(dim: usize, half_width: f64, band: f64) -> Vec<Vec<i64>> {
    let kmax = (band * half_width / PI).floor() as i64;
    let mut out: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|k| (-kmax..=kmax).map(move |v| [k.clone(), vec![v]].concat()))
            .collect();
    }
    out.retain(|k| (k.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt() * PI / half_width <= band);
    out
}

fn field(spec: &GridSpec, seed: u64, band: f64) -> GridFunction {
    let l = spec.half_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(Vec<f64>, f64, f64)> = wavenumbers(spec.dim(), l, band)
        .into_iter()
        .map(|k| {
            let xi = k.iter().map(|&v| v as f64 * PI / l).collect();
            (xi, rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
        .collect();
    let scale = (modes.len().max(1) as f64).sqrt().recip();
    spec.sample_real(|x| {
        modes
            .iter()
            .map(|(xi, a, b)| {
                let ph: f64 = xi.iter().zip(x).map(|(u, v)| u * v).sum();
                a * ph.cos() + b * ph.sin()
            })
            .sum::<f64>()
            * scale
    })
}

/// `size` bumps and Gaussians at varied centres and widths, plus `size`
/// random fields. Widths are fractions of the box so every member is
/// resolved at 256 cells per axis.
pub fn standard_suite(dim: usize, half_width: f64, size: usize, seed: u64, band: f64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..size {
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5) * half_width).collect();
        let width = half_width * [0.05, 0.1, 0.2, 0.4][i % 4];
        out.push(if i % 2 == 0 {
            TestFunction::Gaussian { center, width }
        } else {
            TestFunction::Bump { center, width }
        });
    }
    for i in 0..size {
        out.push(TestFunction::Field {
            seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            band,
        });
    }
    out
}

/// A random `1/2`-sparse family of lattice-0 cubes no deeper than
/// `max_level`. Each member's next generation is a random set of disjoint
/// descendants one to three levels down filling less than half of it. The
/// family depends only on `seed` and the levels, not on the resolution.
pub fn random_sparse_family(lat: &Lattices, max_level: u32, seed: u64) -> SparseFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = lat.spec().dim() as u32;
    let max_level = max_level.min(lat.depth());
    let mut out = Vec::new();
    let mut stack = vec![lat.root(0)];
    while let Some(q) = stack.pop() {
        if q.level < max_level {
            let gap = rng.random_range(1..=3).min(max_level - q.level);
            let per = 1u64 << (dim * gap);
            let mut picks: Vec<u64> = (0..per).collect();
            // Shuffle by swaps, then keep fewer than half of the slots.
            for i in (1..picks.len()).rev() {
                picks.swap(i, rng.random_range(0..=i));
            }
            let keep = rng.random_range(0..per / 2) as usize;
            for &slot in &picks[..keep] {
                stack.push(descendant(&q, gap, slot, dim));
            }
        }
        out.push(q);
    }
    out.sort();
    SparseFamily::new(out)
}

/// The descendant `gap` levels below `q` in row-major slot `slot`.
fn descendant(q: &Cube, gap: u32, slot: u64, dim: u32) -> Cube {
    let side = 1u64 << gap;
    let mut rest = slot;
    let mut offsets = vec![0u32; dim as usize];
    for a in (0..dim as usize).rev() {
        offsets[a] = (rest % side) as u32;
        rest /= side;
    }
    Cube {
        lattice: q.lattice,
        level: q.level + gap,
        index: q.index.iter().zip(&offsets).map(|(i, o)| (i << gap) | o).collect(),
    }
}

/// Unit-`L²` complex white noise with a fixed seed, for power iterations.
pub fn noise(spec: &GridSpec, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<Complex64> = (0..spec.len())
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let f = GridFunction::from_values(*spec, crate::grid::Domain::Space, v);
    let n = f.norm(2.0);
    f.scale(Complex64::new(1.0 / n, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::verify_eta_sparse;

    #[test]
    fn fields_are_resolution_independent() {
        let coarse = GridSpec::new(1, 128, 2.0).unwrap();
        let fine = coarse.refined();
        let f = TestFunction::Field { seed: 5, band: 12.0 };
        let (a, b) = (f.sample(&coarse), f.sample(&fine));
        for i in 0..128 {
            assert!((a.values()[i] - b.values()[2 * i]).norm() < 1e-12);
        }
        assert!(a.norm(2.0) > 0.1);
    }

    #[test]
    fn random_families_are_sparse_and_stable() {
        let coarse = Lattices::new(&GridSpec::new(2, 64, 1.0).unwrap());
        let fine = Lattices::new(&GridSpec::new(2, 128, 1.0).unwrap());
        for seed in 0..20 {
            let fam = random_sparse_family(&coarse, 5, seed);
            assert_eq!(fam, random_sparse_family(&fine, 5, seed));
            verify_eta_sparse(&coarse, &fam, 0.5).unwrap();
        }
    }
}
