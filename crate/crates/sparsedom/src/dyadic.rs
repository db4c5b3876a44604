//! Cell-aligned dyadic cubes on the periodic grid.
//!
//! There are `3^n` lattices. Lattice `t = Σ t_a 3^a` (digits `t_a ∈ {0,1,2}`)
//! is the standard dyadic tree translated by `t_a·c` cells on axis `a`, where
//! `c = (4^⌈M/2⌉ − 1)/3` and `N = 2^M`. The constant `c` is the 2-adic
//! truncation of `−1/3`, so `c·2^{−k}` alternates around `±1/3` of the level-`k`
//! side: one translation realizes the alternating third-shift construction at
//! every level simultaneously. Cubes wrap around the box; the root of every
//! lattice is the whole box.
//!
//! A cube's `index` is expressed in its lattice's own coordinates: cell `x`
//! has relative coordinate `(x − shift) mod N`, and the level-`k` cube
//! containing it has index `relative >> (M − k)` on each axis.

use std::collections::HashMap;
use std::fmt;

use crate::grid::GridSpec;
use crate::{par, Error, Result};

/// A cube of one of the shifted lattices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    pub lattice: u32,
    pub level: u32,
    pub index: Vec<u32>,
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:k{}:{:?}", self.lattice, self.level, self.index)
    }
}

impl Cube {
    /// True when `self ⊆ other`. Cubes of different lattices are never
    /// compared; the answer is false.
    pub fn is_within(&self, other: &Cube) -> bool {
        self.lattice == other.lattice
            && self.level >= other.level
            && self
                .index
                .iter()
                .zip(&other.index)
                .all(|(a, b)| a >> (self.level - other.level) == *b)
    }

    /// The ancestor at `level ≤ self.level`.
    pub fn ancestor(&self, level: u32) -> Cube {
        assert!(level <= self.level);
        Cube {
            lattice: self.lattice,
            level,
            index: self.index.iter().map(|i| i >> (self.level - level)).collect(),
        }
    }
}

/// Periodic axis-parallel box of cells: axis `a` covers
/// `start[a], …, start[a] + len[a] − 1 (mod N)`. `len[a] = N` is the full axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub start: Vec<usize>,
    pub len: Vec<usize>,
}

impl Region {
    pub fn full(dim: usize, cells: usize) -> Self {
        Self {
            start: vec![0; dim],
            len: vec![cells; dim],
        }
    }

    pub fn cell_count(&self) -> u64 {
        self.len.iter().map(|&l| l as u64).product()
    }

    /// Membership of the cell with per-axis indices `coords`.
    pub fn contains_coords(&self, coords: &[usize], cells: usize) -> bool {
        coords
            .iter()
            .zip(self.start.iter().zip(&self.len))
            .all(|(&x, (&s, &l))| (x + cells - s) % cells < l)
    }

    /// Flat indices of the region's cells, row-major in region order.
    pub fn cells(&self, spec: &GridSpec) -> Vec<usize> {
        let n = spec.cells();
        let dim = spec.dim();
        let total = self.cell_count() as usize;
        let mut out = Vec::with_capacity(total);
        let mut off = vec![0usize; dim];
        let mut coords = vec![0usize; dim];
        for _ in 0..total {
            for a in 0..dim {
                coords[a] = (self.start[a] + off[a]) % n;
            }
            out.push(spec.ravel(&coords));
            for a in (0..dim).rev() {
                off[a] += 1;
                if off[a] < self.len[a] {
                    break;
                }
                off[a] = 0;
            }
        }
        out
    }

    pub fn mask(&self, spec: &GridSpec) -> Vec<bool> {
        let mut m = vec![false; spec.len()];
        for i in self.cells(spec) {
            m[i] = true;
        }
        m
    }

    /// `self ⊆ other` cell-wise.
    pub fn is_within(&self, other: &Region, cells: usize) -> bool {
        self.start
            .iter()
            .zip(&self.len)
            .zip(other.start.iter().zip(&other.len))
            .all(|((&s, &l), (&os, &ol))| {
                if ol >= cells {
                    return true;
                }
                let r = (s + cells - os) % cells;
                l <= cells && r + l <= ol
            })
    }

    pub fn is_full(&self, cells: usize) -> bool {
        self.len.iter().all(|&l| l >= cells)
    }
}

/// The `3^n` shifted lattices over one grid.
#[derive(Clone, Debug)]
pub struct Lattices {
    spec: GridSpec,
    unit_shift: usize,
    /// Per lattice, per cell: relative coordinates, `dim` entries per cell.
    relative: Vec<Vec<u32>>,
}

impl Lattices {
    pub fn new(spec: &GridSpec) -> Self {
        let depth = spec.depth();
        let n = spec.cells();
        let unit_shift = (((1u128 << (2 * depth.div_ceil(2))) - 1) / 3 % n as u128) as usize;
        let count = 3usize.pow(spec.dim() as u32);
        let dim = spec.dim();
        let relative = (0..count)
            .map(|t| {
                let shift = shift_of(t, dim, unit_shift, n);
                let mut rel = vec![0u32; spec.len() * dim];
                let mut c = vec![0usize; dim];
                for idx in 0..spec.len() {
                    spec.unravel(idx, &mut c);
                    for a in 0..dim {
                        rel[idx * dim + a] = ((c[a] + n - shift[a]) % n) as u32;
                    }
                }
                rel
            })
            .collect();
        Self {
            spec: *spec,
            unit_shift,
            relative,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of lattices, `3^n`.
    pub fn count(&self) -> usize {
        self.relative.len()
    }

    /// Finest level `M = log2 N`.
    pub fn depth(&self) -> u32 {
        self.spec.depth()
    }

    /// Per-axis translation of lattice `t`, in cells.
    pub fn shift(&self, lattice: usize) -> Vec<usize> {
        shift_of(lattice, self.spec.dim(), self.unit_shift, self.spec.cells())
    }

    pub fn root(&self, lattice: usize) -> Cube {
        Cube {
            lattice: lattice as u32,
            level: 0,
            index: vec![0; self.spec.dim()],
        }
    }

    /// Side of a level-`k` cube in cells.
    pub fn side_cells(&self, level: u32) -> usize {
        self.spec.cells() >> level
    }

    /// `ℓ(Q)` in length units.
    pub fn side_length(&self, q: &Cube) -> f64 {
        self.side_cells(q.level) as f64 * self.spec.spacing()
    }

    /// `|Q|` in cells.
    pub fn cell_count(&self, q: &Cube) -> u64 {
        (self.side_cells(q.level) as u64).pow(self.spec.dim() as u32)
    }

    /// `|Q|` in volume units.
    pub fn measure(&self, q: &Cube) -> f64 {
        self.cell_count(q) as f64 * self.spec.cell_volume()
    }

    pub fn region(&self, q: &Cube) -> Region {
        let n = self.spec.cells();
        let side = self.side_cells(q.level);
        let shift = self.shift(q.lattice as usize);
        Region {
            start: q
                .index
                .iter()
                .zip(&shift)
                .map(|(&i, &s)| (s + i as usize * side) % n)
                .collect(),
            len: vec![side; self.spec.dim()],
        }
    }

    /// Flat indices of the cells of `q`.
    pub fn cells(&self, q: &Cube) -> Vec<usize> {
        self.region(q).cells(&self.spec)
    }

    pub fn mask(&self, q: &Cube) -> Vec<bool> {
        self.region(q).mask(&self.spec)
    }

    /// Centre of `q` in length units, taken modulo the box.
    pub fn center(&self, q: &Cube) -> Vec<f64> {
        let r = self.region(q);
        let h = self.spec.spacing();
        let l = self.spec.half_width();
        r.start
            .iter()
            .zip(&r.len)
            .map(|(&s, &len)| {
                let c = -l + (s as f64 + len as f64 / 2.0) * h;
                (c + l).rem_euclid(2.0 * l) - l
            })
            .collect()
    }

    pub fn children(&self, q: &Cube) -> Vec<Cube> {
        assert!(q.level < self.depth(), "single cells have no children");
        let dim = self.spec.dim();
        (0..1usize << dim)
            .map(|b| Cube {
                lattice: q.lattice,
                level: q.level + 1,
                index: (0..dim)
                    .map(|a| 2 * q.index[a] + ((b >> (dim - 1 - a)) & 1) as u32)
                    .collect(),
            })
            .collect()
    }

    pub fn parent(&self, q: &Cube) -> Result<Cube> {
        if q.level == 0 {
            return Err(Error::InvalidArgument(format!("{q} is a root")));
        }
        Ok(q.ancestor(q.level - 1))
    }

    /// The level-`k` cube of lattice `t` containing flat cell `cell`.
    pub fn cube_containing(&self, lattice: usize, level: u32, cell: usize) -> Cube {
        let dim = self.spec.dim();
        let shift = self.depth() - level;
        Cube {
            lattice: lattice as u32,
            level,
            index: self.relative[lattice][cell * dim..(cell + 1) * dim]
                .iter()
                .map(|r| r >> shift)
                .collect(),
        }
    }

    /// Number of cubes at a level, `2^{kn}`.
    pub fn cubes_at(&self, level: u32) -> usize {
        1usize << (level as usize * self.spec.dim())
    }

    /// Flat position of the level-`k` cube of lattice `t` holding `cell`
    /// among the `2^{kn}` cubes of that level.
    #[inline]
    pub fn level_index(&self, lattice: usize, level: u32, cell: usize) -> usize {
        let dim = self.spec.dim();
        let shift = self.depth() - level;
        let rel = &self.relative[lattice][cell * dim..(cell + 1) * dim];
        rel.iter()
            .fold(0usize, |acc, &r| (acc << level) | (r >> shift) as usize)
    }

    /// Inverse of [`Lattices::level_index`].
    pub fn cube_at(&self, lattice: usize, level: u32, flat: usize) -> Cube {
        let dim = self.spec.dim();
        let mask = (1usize << level) - 1;
        Cube {
            lattice: lattice as u32,
            level,
            index: (0..dim)
                .map(|a| ((flat >> (level as usize * (dim - 1 - a))) & mask) as u32)
                .collect(),
        }
    }

    /// Flat position of `q` among its level's cubes.
    pub fn flat_of(&self, q: &Cube) -> usize {
        q.index
            .iter()
            .fold(0usize, |acc, &i| (acc << q.level) | i as usize)
    }

    /// For every lattice and level, `Σ_{x∈Q} v(x)` over the cubes of that
    /// level. Indexed `[lattice][level][flat]`.
    pub fn level_sums(&self, values: &[f64]) -> Vec<Vec<Vec<f64>>> {
        assert_eq!(values.len(), self.spec.len());
        par::map_range(self.count(), |t| self.lattice_sums(t, values))
    }

    /// [`Lattices::level_sums`] for one lattice, pooled from the finest level.
    pub fn lattice_sums(&self, lattice: usize, values: &[f64]) -> Vec<Vec<f64>> {
        let depth = self.depth();
        let dim = self.spec.dim();
        let mut levels = vec![Vec::new(); depth as usize + 1];
        let mut finest = vec![0.0; self.cubes_at(depth)];
        for (cell, v) in values.iter().enumerate() {
            finest[self.level_index(lattice, depth, cell)] += v;
        }
        levels[depth as usize] = finest;
        for k in (0..depth).rev() {
            let fine = &levels[k as usize + 1];
            let mut coarse = vec![0.0; self.cubes_at(k)];
            for (flat, v) in fine.iter().enumerate() {
                coarse[coarsen(flat, k + 1, dim)] += v;
            }
            levels[k as usize] = coarse;
        }
        levels
    }

    /// Pointwise `sup_{Q∋x}` of a per-cube quantity given as
    /// `[lattice][level][flat]`. Levels may be left empty to exclude them.
    pub fn sup_over_cubes(&self, per_cube: &[Vec<Vec<f64>>]) -> Vec<f64> {
        par::max_fields(self.count(), self.spec.len(), |t| {
            self.lattice_sup(t, &per_cube[t])
        })
    }

    /// One lattice's contribution to [`Lattices::sup_over_cubes`].
    pub fn lattice_sup(&self, lattice: usize, levels: &[Vec<f64>]) -> Vec<f64> {
        (0..self.spec.len())
            .map(|cell| {
                levels
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| !l.is_empty())
                    .map(|(k, l)| l[self.level_index(lattice, k as u32, cell)])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Concentric dilation of `r` by `factor ≥ 1`, rounded outward to whole
    /// cells with an even split; saturates at the full axis.
    pub fn dilate(&self, r: &Region, factor: f64) -> Region {
        assert!(factor >= 1.0, "dilation factor must be at least one");
        let n = self.spec.cells();
        let mut out = r.clone();
        for a in 0..r.len.len() {
            let len = r.len[a];
            let mut new = ((factor * len as f64) - 1e-9).ceil() as usize;
            new = new.max(len);
            if (new - len) % 2 == 1 {
                new += 1;
            }
            if new >= n {
                out.start[a] = 0;
                out.len[a] = n;
            } else {
                out.start[a] = (r.start[a] + n - (new - len) / 2) % n;
                out.len[a] = new;
            }
        }
        out
    }

    /// `λQ` for a cube.
    pub fn dilate_cube(&self, q: &Cube, factor: f64) -> Region {
        self.dilate(&self.region(q), factor)
    }

    /// `Q^ρ`: concentric cube of side `ℓ(Q)^ρ` in length units, rounded
    /// outward. Defined only for `ℓ(Q) < 1`.
    pub fn rho_cube(&self, q: &Cube, rho: f64) -> Result<Region> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("rho {rho} outside [0, 1]")));
        }
        let ell = self.side_length(q);
        if ell >= 1.0 && rho < 1.0 {
            return Err(Error::Undefined(format!(
                "side {ell} >= 1: Q^rho is not larger than Q"
            )));
        }
        let side = self.side_cells(q.level) as f64;
        let target = ell.powf(rho) / self.spec.spacing();
        Ok(self.dilate_cube(q, (target / side).max(1.0)))
    }

    /// A cube `R` of some lattice with `P ⊆ R`, as small as possible over the
    /// lattices (ties to the lowest lattice id). Regions wider than a third
    /// of the box map to the root of lattice 0.
    pub fn three_lattice_cover(&self, p: &Region) -> (usize, Cube) {
        let n = self.spec.cells();
        if p.len.iter().any(|&l| 3 * l > n) {
            return (0, self.root(0));
        }
        let mut best: Option<(usize, Cube)> = None;
        for t in 0..self.count() {
            let shift = self.shift(t);
            let rel: Vec<usize> = p
                .start
                .iter()
                .zip(&shift)
                .map(|(&s, &sh)| (s + n - sh) % n)
                .collect();
            let level = (0..=self.depth())
                .rev()
                .find(|&k| {
                    let side = self.side_cells(k);
                    rel.iter().zip(&p.len).all(|(&r, &l)| r % side + l <= side)
                })
                .unwrap_or(0);
            if best.as_ref().is_none_or(|(_, b)| level > b.level) {
                let side = self.side_cells(level);
                best = Some((
                    t,
                    Cube {
                        lattice: t as u32,
                        level,
                        index: rel.iter().map(|&r| (r / side) as u32).collect(),
                    },
                ));
            }
        }
        best.expect("at least one lattice")
    }

    /// Exact `sup_{Q∈F} Σ_{P∈F, P⊆Q} |P| / |Q|` as `(numerator, denominator)`
    /// in cell counts; `(0, 1)` for an empty family.
    pub fn carleson_ratio(&self, family: &[Cube]) -> Result<(u64, u64)> {
        if family.is_empty() {
            return Ok((0, 1));
        }
        let lattice = family[0].lattice;
        if let Some(q) = family.iter().find(|q| q.lattice != lattice) {
            return Err(Error::MixedLattices(lattice as usize, q.lattice as usize));
        }
        let mut packed: HashMap<&Cube, u64> = family.iter().map(|q| (q, 0)).collect();
        let members: Vec<&Cube> = packed.keys().copied().collect();
        for p in members {
            let size = self.cell_count(p);
            for k in 0..=p.level {
                let anc = p.ancestor(k);
                if let Some(s) = packed.get_mut(&anc) {
                    *s += size;
                }
            }
        }
        let mut best = (0u64, 1u64);
        for (q, s) in packed {
            let den = self.cell_count(q);
            if s as u128 * best.1 as u128 > best.0 as u128 * den as u128 {
                best = (s, den);
            }
        }
        Ok(best)
    }

    /// [`Lattices::carleson_ratio`] as a float.
    pub fn carleson_constant(&self, family: &[Cube]) -> Result<f64> {
        let (a, b) = self.carleson_ratio(family)?;
        Ok(a as f64 / b as f64)
    }
}

/// `⟨v⟩_{r,S} = (|S|^{-1} Σ_{x∈S} v(x)^r)^{1/r}` over nonnegative samples;
/// `r = ∞` is the maximum. Zero on an empty set.
pub fn local_mean(abs_values: &[f64], cells: &[usize], r: f64) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    if r.is_infinite() {
        return cells.iter().map(|&x| abs_values[x]).fold(0.0, f64::max);
    }
    let s: f64 = if r == 1.0 {
        cells.iter().map(|&x| abs_values[x]).sum()
    } else {
        cells.iter().map(|&x| abs_values[x].powf(r)).sum()
    };
    (s / cells.len() as f64).powf(1.0 / r)
}

/// Parent's flat index of a level-`k` flat index.
#[inline]
fn coarsen(flat: usize, level: u32, dim: usize) -> usize {
    let mask = (1usize << level) - 1;
    let mut out = 0;
    for a in 0..dim {
        let i = (flat >> (level as usize * (dim - 1 - a))) & mask;
        out = (out << (level - 1)) | (i >> 1);
    }
    out
}

fn shift_of(lattice: usize, dim: usize, unit: usize, n: usize) -> Vec<usize> {
    let mut t = lattice;
    (0..dim)
        .map(|_| {
            let digit = t % 3;
            t /= 3;
            digit * unit % n
        })
        .collect()
}
