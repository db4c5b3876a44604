//! Sparse operators, sparse forms and weighted Besov norms.
//!
//! Averages are taken over cells, so `⟨f⟩_{r,Q}` does not depend on the cell
//! volume; measures `|Q|` are in length units. Coefficients stored on a
//! [`SparseFamily`] multiply their term when present.

use std::collections::HashMap;

use crate::dyadic::{local_mean, Cube, Lattices, Region};
use crate::grid::{band_project, GridFunction, LPFamily};
use crate::sparse::{dual_exponent, SparseFamily};
use crate::weights::{ap_characteristic, rh_characteristic, Weight};
use crate::{par, Complex64, Error, Result};

fn coefficient(family: &SparseFamily, i: usize) -> f64 {
    family.coefficients.as_ref().map_or(1.0, |c| c[i])
}

/// Adds `c_i` on the cells of region `i`.
fn accumulate(lat: &Lattices, regions: &[Region], coeffs: &[f64]) -> Vec<f64> {
    let spec = lat.spec();
    let mut out = vec![0.0; spec.len()];
    for (r, c) in regions.iter().zip(coeffs) {
        if *c != 0.0 {
            for x in r.cells(spec) {
                out[x] += c;
            }
        }
    }
    out
}

fn real_function(lat: &Lattices, values: Vec<f64>) -> GridFunction {
    GridFunction::from_real(*lat.spec(), &values)
}

/// `Λ_{S,r} f = Σ_Q ⟨f⟩_{r,Q} 1_Q`.
pub fn sparse_op(lat: &Lattices, f: &GridFunction, family: &SparseFamily, r: f64) -> GridFunction {
    mapped_op(lat, f, family, r, |q| lat.region(q))
}

/// `Λ_{S,r,X} f = Σ_Q ⟨f⟩_{r,X(Q)} 1_Q`. Every `X(Q)` must contain `Q`.
pub fn mapped_sparse_op(
    lat: &Lattices,
    f: &GridFunction,
    family: &SparseFamily,
    r: f64,
    x: impl Fn(&Cube) -> Region + Sync + Send,
) -> Result<GridFunction> {
    check_containment(lat, family, &x)?;
    Ok(mapped_op(lat, f, family, r, x))
}

fn check_containment(lat: &Lattices, family: &SparseFamily, x: &impl Fn(&Cube) -> Region) -> Result<()> {
    let n = lat.spec().cells();
    match family.cubes.iter().find(|q| !lat.region(q).is_within(&x(q), n)) {
        Some(q) => Err(Error::Precondition(format!("X({q}) does not contain the cube"))),
        None => Ok(()),
    }
}

fn mapped_op(
    lat: &Lattices,
    f: &GridFunction,
    family: &SparseFamily,
    r: f64,
    x: impl Fn(&Cube) -> Region + Sync + Send,
) -> GridFunction {
    let abs = f.abs();
    let spec = lat.spec();
    let idx: Vec<usize> = (0..family.len()).collect();
    let coeffs = par::map_slice(&idx, |&i| {
        let q = &family.cubes[i];
        coefficient(family, i) * local_mean(&abs, &x(q).cells(spec), r)
    });
    let regions: Vec<Region> = family.cubes.iter().map(|q| lat.region(q)).collect();
    real_function(lat, accumulate(lat, &regions, &coeffs))
}

/// `Λ_{S,r,s}(f, g) = Σ_Q |Q| ⟨f⟩_{r,Q} ⟨g⟩_{s,Q}`.
pub fn sparse_form(
    lat: &Lattices,
    f: &GridFunction,
    g: &GridFunction,
    family: &SparseFamily,
    r: f64,
    s: f64,
) -> f64 {
    sparse_form_alpha(lat, f, g, family, r, s, 1.0)
}

/// `Λ^α_{S,r,s}(f, g) = (Σ_Q |Q| ⟨f⟩^α_{r,Q} ⟨g⟩^α_{s,Q})^{1/α}`.
pub fn sparse_form_alpha(
    lat: &Lattices,
    f: &GridFunction,
    g: &GridFunction,
    family: &SparseFamily,
    r: f64,
    s: f64,
    alpha: f64,
) -> f64 {
    form_core(lat, f, g, family, r, s, alpha, |q| lat.region(q))
}

/// `Λ^α` with `⟨f⟩_{r,X(Q)}` in place of `⟨f⟩_{r,Q}`; `g` stays on `Q`.
#[allow(clippy::too_many_arguments)]
pub fn mapped_form_alpha(
    lat: &Lattices,
    f: &GridFunction,
    g: &GridFunction,
    family: &SparseFamily,
    r: f64,
    s: f64,
    alpha: f64,
    x: impl Fn(&Cube) -> Region + Sync + Send,
) -> Result<f64> {
    check_containment(lat, family, &x)?;
    Ok(form_core(lat, f, g, family, r, s, alpha, x))
}

#[allow(clippy::too_many_arguments)]
fn form_core(
    lat: &Lattices,
    f: &GridFunction,
    g: &GridFunction,
    family: &SparseFamily,
    r: f64,
    s: f64,
    alpha: f64,
    x: impl Fn(&Cube) -> Region + Sync + Send,
) -> f64 {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha {alpha} outside (0, 1]");
    let (fa, ga) = (f.abs(), g.abs());
    let spec = lat.spec();
    let idx: Vec<usize> = (0..family.len()).collect();
    let terms = par::map_slice(&idx, |&i| {
        let q = &family.cubes[i];
        let fq = local_mean(&fa, &x(q).cells(spec), r);
        let gq = local_mean(&ga, &lat.cells(q), s);
        let t = coefficient(family, i) * fq * gq;
        lat.measure(q) * if alpha == 1.0 { t } else { t.powf(alpha) }
    });
    let sum: f64 = terms.iter().sum();
    if alpha == 1.0 {
        sum
    } else {
        sum.powf(1.0 / alpha)
    }
}

/// `Σ_j Σ_{Q∈S_j} ⟨f⟩_{2,Q} Σ_{R∈S_j, R⊆Q} 1_R`.
///
/// Each `R` collects the averages of the members containing it. Within one
/// lattice the containers are ancestors and are found by index; members of
/// other lattices are compared cell-wise.
pub fn nested_sparse_op(lat: &Lattices, f: &GridFunction, families: &[SparseFamily]) -> GridFunction {
    let abs = f.abs();
    let n = lat.spec().cells();
    let mut out = vec![0.0; lat.spec().len()];
    for family in families {
        let avgs: Vec<f64> = par::map_slice(&family.cubes, |q| local_mean(&abs, &lat.cells(q), 2.0));
        let index: HashMap<&Cube, usize> = family.cubes.iter().enumerate().map(|(i, q)| (q, i)).collect();
        let regions: Vec<Region> = family.cubes.iter().map(|q| lat.region(q)).collect();
        let idx: Vec<usize> = (0..family.len()).collect();
        let coeffs = par::map_slice(&idx, |&i| {
            let r = &family.cubes[i];
            let mut c = 0.0;
            for level in 0..=r.level {
                if let Some(&k) = index.get(&r.ancestor(level)) {
                    c += coefficient(family, k) * avgs[k];
                }
            }
            for (k, q) in family.cubes.iter().enumerate() {
                if q.lattice != r.lattice && regions[i].is_within(&regions[k], n) {
                    c += coefficient(family, k) * avgs[k];
                }
            }
            c
        });
        for (o, v) in out.iter_mut().zip(accumulate(lat, &regions, &coeffs)) {
            *o += v;
        }
    }
    real_function(lat, out)
}

/// Exponents of the weighted sparse-form bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormParams {
    pub r: f64,
    pub q: f64,
    pub p: f64,
    /// May be infinite.
    pub s: f64,
    pub alpha: f64,
}

impl FormParams {
    /// Parameters with `α` fixed by `1/α = 1/p' + 1/q`.
    pub fn new(r: f64, q: f64, p: f64, s: f64) -> Self {
        let alpha = 1.0 / (1.0 / dual_exponent(p) + 1.0 / q);
        Self { r, q, p, s, alpha }
    }

    /// Requires `1 ≤ r < q ≤ p < s` and `1/α = 1/p' + 1/q`.
    pub fn validate(&self) -> Result<()> {
        let Self { r, q, p, s, alpha } = *self;
        if !(1.0 <= r && r < q && q <= p && p < s) {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= r < q <= p < s, got r={r}, q={q}, p={p}, s={s}"
            )));
        }
        let want = 1.0 / dual_exponent(p) + 1.0 / q;
        if (1.0 / alpha - want).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("1/alpha = {} but 1/p' + 1/q = {want}", 1.0 / alpha)));
        }
        Ok(())
    }

    /// `δ = max{1/(q−r), p(s−1)/(q(s−p))}`; the second term is `p/q` at `s = ∞`.
    pub fn delta(&self) -> f64 {
        let second = if self.s.is_infinite() {
            self.p / self.q
        } else {
            self.p * (self.s - 1.0) / (self.q * (self.s - self.p))
        };
        (1.0 / (self.q - self.r)).max(second)
    }

    /// `(p/q)(s/p)'`; equals `p/q` at `s = ∞`.
    pub fn rh_exponent(&self) -> f64 {
        let sp = if self.s.is_infinite() {
            1.0
        } else {
            dual_exponent(self.s / self.p)
        };
        self.p / self.q * sp
    }
}

/// Right-hand side of the weighted bound and its ingredients.
#[derive(Clone, Debug)]
pub struct WeightedRhs {
    pub value: f64,
    pub delta: f64,
    /// `[ω^q]_{A_{q/r}}`.
    pub ap: f64,
    /// `[ω^q]_{RH_{(p/q)(s/p)'}}`.
    pub rh: f64,
    /// `‖f‖_{L^q(ω^q)}`.
    pub f_norm: f64,
    /// `‖g‖_{L^{p'}(ω^{−p'})}`.
    pub g_norm: f64,
    /// Both characteristics are finite.
    pub admissible: bool,
}

/// `([ω^q]_{A_{q/r}} [ω^q]_{RH_{(p/q)(s/p)'}})^δ ‖f‖_{L^q(ω^q)} ‖g‖_{L^{p'}(ω^{−p'})}`.
pub fn weighted_rhs(
    lat: &Lattices,
    f: &GridFunction,
    g: &GridFunction,
    w: &Weight,
    params: FormParams,
) -> Result<WeightedRhs> {
    params.validate()?;
    let FormParams { r, q, p, .. } = params;
    let wq = w.pow(q);
    let ap = ap_characteristic(lat, &wq, q / r)?;
    let rh = rh_characteristic(lat, &wq, params.rh_exponent())?;
    let pd = dual_exponent(p);
    let f_norm = f.weighted_norm(q, wq.values());
    let g_norm = if pd.is_infinite() {
        g.abs().iter().zip(w.values()).map(|(v, x)| v / x).fold(0.0, f64::max)
    } else {
        g.weighted_norm(pd, w.pow(-pd).values())
    };
    let delta = params.delta();
    Ok(WeightedRhs {
        value: (ap * rh).powf(delta) * f_norm * g_norm,
        delta,
        ap,
        rh,
        f_norm,
        g_norm,
        admissible: ap.is_finite() && rh.is_finite(),
    })
}

/// `(Σ_{j=0}^{J} 2^{jκσ} ‖φ_j ∗ f‖^σ_{L^p(ω)})^{1/σ}`, the sup over bands for
/// `σ = ∞`. `ω = None` is the unweighted norm. Bands above `J` carry nothing
/// on the grid.
pub fn besov_norm(
    f: &GridFunction,
    kappa: f64,
    p: f64,
    sigma: f64,
    weight: Option<&Weight>,
    lp: &LPFamily,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let bands: Vec<usize> = (0..=lp.top()).collect();
    let pieces = par::map_slice(&bands, |&j| -> Result<f64> {
        let piece = band_project(f, lp, j)?;
        let norm = match weight {
            Some(w) => piece.weighted_norm(p, w.values()),
            None => piece.norm(p),
        };
        Ok((j as f64 * kappa).exp2() * norm)
    });
    let pieces = pieces.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(if sigma.is_infinite() {
        pieces.into_iter().fold(0.0, f64::max)
    } else {
        pieces.iter().map(|v| v.powf(sigma)).sum::<f64>().powf(1.0 / sigma)
    })
}

/// `f` with each sample multiplied by `c`.
pub fn scaled(f: &GridFunction, c: f64) -> GridFunction {
    f.scale(Complex64::new(c, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{littlewood_paley_family, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, n: usize) -> Lattices {
        Lattices::new(&GridSpec::new(dim, n, 1.0).unwrap())
    }

    fn random(spec: &GridSpec, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Complex64> = (0..spec.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        GridFunction::from_values(*spec, crate::grid::Domain::Space, v)
    }

    fn random_family(lat: &Lattices, t: usize, count: usize, seed: u64) -> SparseFamily {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cubes: Vec<Cube> = (0..count)
            .map(|_| {
                let k = rng.random_range(0..=lat.depth());
                lat.cube_at(t, k, rng.random_range(0..lat.cubes_at(k)))
            })
            .collect();
        cubes.sort();
        cubes.dedup();
        SparseFamily::new(cubes)
    }

    #[test]
    fn sparse_op_examples() {
        let l = setup(1, 32);
        let spec = *l.spec();
        let one = GridFunction::from_real(spec, &vec![1.0; 32]);
        let root = SparseFamily::new(vec![l.root(0)]);
        let u = sparse_op(&l, &one, &root, 2.0);
        assert!(u.values().iter().all(|v| (v.re - 1.0).abs() < 1e-15 && v.im == 0.0));
        let empty = sparse_op(&l, &one, &SparseFamily::default(), 2.0);
        assert!(empty.values().iter().all(|v| v.norm() == 0.0));

        let q = l.cube_at(0, 2, 1);
        let child = l.children(&q)[0].clone();
        let ind = GridFunction::from_real(spec, &l.mask(&q).iter().map(|&b| b as u8 as f64).collect::<Vec<_>>());
        let u = sparse_op(&l, &ind, &SparseFamily::new(vec![q.clone(), child.clone()]), 2.0);
        let (in_q, in_c) = (l.mask(&q), l.mask(&child));
        for x in 0..32 {
            let want = in_q[x] as u8 as f64 + in_c[x] as u8 as f64;
            assert!((u.values()[x].re - want).abs() < 1e-14);
        }
    }

    #[test]
    fn form_of_ones_is_box_volume() {
        let l = setup(2, 16);
        let spec = *l.spec();
        let one = GridFunction::from_real(spec, &vec![1.0; spec.len()]);
        let root = SparseFamily::new(vec![l.root(0)]);
        let v = sparse_form(&l, &one, &one, &root, 2.0, 3.0);
        assert!((v - spec.box_volume()).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_is_exact_and_alpha_is_monotone() {
        let l = setup(1, 128);
        let spec = *l.spec();
        for seed in 0..10 {
            let (f, g) = (random(&spec, seed), random(&spec, 100 + seed));
            let fam = random_family(&l, (seed % 3) as usize, 20, seed);
            let one = sparse_form(&l, &f, &g, &fam, 1.5, 2.0);
            assert_eq!(one, sparse_form_alpha(&l, &f, &g, &fam, 1.5, 2.0, 1.0));
            let mut prev = one;
            for a in [0.8, 0.5, 0.3] {
                let v = sparse_form_alpha(&l, &f, &g, &fam, 1.5, 2.0, a);
                assert!(v >= prev * (1.0 - 1e-12), "alpha {a}: {v} < {prev}");
                prev = v;
            }
        }
    }

    /// Direct double sum over pairs `R ⊆ Q`, membership by cell masks.
    fn brute_nested(l: &Lattices, f: &GridFunction, fam: &SparseFamily) -> Vec<f64> {
        let abs = f.abs();
        let mut out = vec![0.0; l.spec().len()];
        for q in &fam.cubes {
            let mq = l.mask(q);
            let avg = (l.cells(q).iter().map(|&x| abs[x] * abs[x]).sum::<f64>() / l.cells(q).len() as f64).sqrt();
            for r in &fam.cubes {
                let mr = l.mask(r);
                if mr.iter().zip(&mq).all(|(a, b)| !a || *b) {
                    for (x, m) in mr.iter().enumerate() {
                        if *m {
                            out[x] += avg;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn nested_examples() {
        let l = setup(1, 64);
        let spec = *l.spec();
        let f = random(&spec, 4);
        let abs = f.abs();
        let q = l.cube_at(1, 2, 3);
        let single = nested_sparse_op(&l, &f, &[SparseFamily::new(vec![q.clone()])]);
        let aq = local_mean(&abs, &l.cells(&q), 2.0);
        for (x, m) in l.mask(&q).iter().enumerate() {
            assert!((single.values()[x].re - if *m { aq } else { 0.0 }).abs() < 1e-14);
        }

        let r = l.children(&l.children(&q)[1])[0].clone();
        let ar = local_mean(&abs, &l.cells(&r), 2.0);
        let chain = nested_sparse_op(&l, &f, &[SparseFamily::new(vec![q.clone(), r.clone()])]);
        let (mq, mr) = (l.mask(&q), l.mask(&r));
        for x in 0..64 {
            let want = if mr[x] {
                2.0 * aq + ar
            } else if mq[x] {
                aq
            } else {
                0.0
            };
            assert!((chain.values()[x].re - want).abs() < 1e-13);
        }

        let zero = GridFunction::zeros(spec);
        assert!(nested_sparse_op(&l, &zero, &[SparseFamily::new(vec![q, r])])
            .values()
            .iter()
            .all(|v| v.norm() == 0.0));
    }

    #[test]
    fn nested_matches_brute_force_across_lattices() {
        let l = setup(1, 64);
        let spec = *l.spec();
        for seed in 0..6 {
            let f = random(&spec, seed);
            let mut cubes = random_family(&l, 0, 12, seed).cubes;
            cubes.extend(random_family(&l, 2, 12, 50 + seed).cubes);
            let fam = SparseFamily::new(cubes);
            let got = nested_sparse_op(&l, &f, std::slice::from_ref(&fam));
            let want = brute_nested(&l, &f, &fam);
            for (a, b) in got.values().iter().zip(&want) {
                assert!((a.re - b).abs() < 1e-12 * (1.0 + b));
            }
        }
    }

    #[test]
    fn mapped_examples() {
        let l = setup(1, 64);
        let spec = *l.spec();
        let f = random(&spec, 9);
        let fam = random_family(&l, 1, 10, 3);
        let id = mapped_sparse_op(&l, &f, &fam, 2.0, |q| l.region(q)).unwrap();
        assert_eq!(id.values(), sparse_op(&l, &f, &fam, 2.0).values());

        // Two disjoint level-3 cubes of width 8 cells; 3Q has 24 cells.
        let (a, b) = (l.cube_at(0, 3, 2), l.cube_at(0, 3, 5));
        let fam = SparseFamily::new(vec![a.clone(), b.clone()]);
        let u = mapped_sparse_op(&l, &f, &fam, 1.0, |q| l.dilate_cube(q, 3.0)).unwrap();
        let abs = f.abs();
        let mean3 = |q: &Cube| {
            let s = l.cells(q)[0];
            (0..24).map(|i| abs[(s + 64 - 8 + i) % 64]).sum::<f64>() / 24.0
        };
        for x in 0..64 {
            let want = if l.mask(&a)[x] {
                mean3(&a)
            } else if l.mask(&b)[x] {
                mean3(&b)
            } else {
                0.0
            };
            assert!((u.values()[x].re - want).abs() < 1e-14);
        }

        let shrink = |q: &Cube| l.region(&l.children(q)[0]);
        assert!(matches!(
            mapped_sparse_op(&l, &f, &fam, 1.0, shrink),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn weighted_rhs_unit_weight_and_delta() {
        let l = setup(1, 64);
        let spec = *l.spec();
        let (f, g) = (random(&spec, 1), random(&spec, 2));
        let params = FormParams::new(1.0, 2.0, 2.0, 4.0);
        assert!((params.alpha - 1.0).abs() < 1e-15);
        assert!((params.delta() - 1.5).abs() < 1e-15);
        let w = Weight::constant(&spec, 1.0).unwrap();
        let out = weighted_rhs(&l, &f, &g, &w, params).unwrap();
        assert!((out.ap - 1.0).abs() < 1e-12 && (out.rh - 1.0).abs() < 1e-12);
        assert!((out.value - f.norm(2.0) * g.norm(2.0)).abs() < 1e-12 * out.value);

        let inf = FormParams::new(1.0, 2.0, 3.0, f64::INFINITY);
        assert!((inf.delta() - 1.5).abs() < 1e-15);
        assert!((inf.rh_exponent() - 1.5).abs() < 1e-15);
        assert!(weighted_rhs(&l, &f, &g, &w, inf).unwrap().admissible);

        for bad in [
            FormParams::new(2.0, 2.0, 2.0, 4.0),
            FormParams::new(1.0, 3.0, 2.0, 4.0),
            FormParams { alpha: 0.9, ..params },
        ] {
            assert!(weighted_rhs(&l, &f, &g, &w, bad).is_err());
        }
    }

    #[test]
    fn besov_examples() {
        let spec = GridSpec::new(1, 256, std::f64::consts::PI).unwrap();
        let lp = littlewood_paley_family(&spec, 4).unwrap();
        // Frequencies are integers on this box; the mode sits where ψ̂_3 = 1.
        let f = spec.sample(|x| Complex64::from_polar(1.0, 8.0 * x[0]));
        for (kappa, p) in [(0.5, 2.0), (-1.0, 3.0), (2.0, 1.0)] {
            let want = (3.0f64 * kappa).exp2() * f.norm(p);
            for sigma in [1.0, 2.0, f64::INFINITY] {
                let got = besov_norm(&f, kappa, p, sigma, None, &lp).unwrap();
                assert!((got - want).abs() < 1e-10 * want, "{got} vs {want}");
            }
        }
        let g = random(&spec, 5);
        let b = besov_norm(&g, 0.3, 2.0, 2.0, None, &lp).unwrap();
        let bc = besov_norm(&scaled(&g, -2.5), 0.3, 2.0, 2.0, None, &lp).unwrap();
        assert!((bc - 2.5 * b).abs() < 1e-12 * bc);
        let w = Weight::constant(&spec, 1.0).unwrap();
        assert!((besov_norm(&g, 0.3, 2.0, 2.0, Some(&w), &lp).unwrap() - b).abs() < 1e-12 * b);
        assert_eq!(besov_norm(&GridFunction::zeros(spec), 1.0, 2.0, 2.0, None, &lp).unwrap(), 0.0);
        assert!(besov_norm(&g, 0.0, 2.0, 0.0, None, &lp).is_err());
    }
}
