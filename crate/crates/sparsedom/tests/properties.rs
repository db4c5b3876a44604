use proptest::prelude::*;
use sparsedom::dyadic::{local_mean, Lattices};
use sparsedom::forms::{besov_norm, sparse_form_alpha};
use sparsedom::grid::{band_project, forward_transform, inverse_transform, littlewood_paley_family, GridFunction, GridSpec};
use sparsedom::sparse::{cz_decompose, lerner_nazarov_decompose, verify_eta_sparse, SparseFamily};
use sparsedom::verify::suite::random_sparse_family;
use sparsedom::weights::{ap_characteristic, sharp_rh_exponent, Weight};
use sparsedom::Complex64;

fn real(spec: GridSpec, v: &[f64]) -> GridFunction {
    GridFunction::from_real(spec, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip_and_plancherel(v in prop::collection::vec(-10.0f64..10.0, 256)) {
        let f = real(GridSpec::new(1, 256, 3.0).unwrap(), &v);
        let fh = forward_transform(&f);
        prop_assume!(f.norm(2.0) > 0.0);
        prop_assert!((f.norm(2.0) - fh.norm(2.0)).abs() <= 1e-10 * f.norm(2.0));
        prop_assert!(inverse_transform(&fh).max_abs_diff(&f) <= 1e-12 * f.norm(f64::INFINITY));
    }

    #[test]
    fn distant_bands_annihilate(v in prop::collection::vec(-1.0f64..1.0, 512), j in 0usize..5, gap in 2usize..4) {
        let spec = GridSpec::new(1, 512, 4.0).unwrap();
        let lp = littlewood_paley_family(&spec, 4).unwrap();
        let k = j + gap;
        prop_assume!(k <= lp.top());
        let f = real(spec, &v);
        let twice = band_project(&band_project(&f, &lp, j).unwrap(), &lp, k).unwrap();
        prop_assert!(twice.norm(f64::INFINITY) <= 1e-12 * (1.0 + f.norm(f64::INFINITY)));
    }

    #[test]
    fn cz_selection_is_exact(bits in prop::collection::vec(0u8..16, 256), lattice in 0usize..3) {
        let spec = GridSpec::new(1, 256, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let q = lat.root(lattice);
        // Marks ~1/16 of the cells, then trims to the 1/4 ceiling.
        let mut e: Vec<bool> = bits.iter().map(|&b| b == 0).collect();
        let mut count = e.iter().filter(|&&x| x).count();
        for x in e.iter_mut() {
            if count <= 64 { break; }
            if *x { *x = false; count -= 1; }
        }
        let out = cz_decompose(&lat, &e, &q).unwrap();
        let mut covered = vec![false; 256];
        for p in &out {
            let cells = lat.cells(p);
            let hits = cells.iter().filter(|&&x| e[x]).count() * 4;
            prop_assert!(hits > cells.len() && hits <= 2 * cells.len());
            for x in cells {
                prop_assert!(!covered[x]);
                covered[x] = true;
            }
        }
        prop_assert!(e.iter().zip(&covered).all(|(m, c)| !m || *c));
    }

    #[test]
    fn lerner_nazarov_dominates(v in prop::collection::vec(-5.0f64..5.0, 128), lambda in 0.01f64..=0.125) {
        let spec = GridSpec::new(1, 128, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let d = lerner_nazarov_decompose(&real(spec, &v), &lat, 0, lambda).unwrap();
        prop_assert!(d.min_slack >= -1e-9);
        prop_assert!(verify_eta_sparse(&lat, &d.family, 0.5).is_ok());
    }

    #[test]
    fn local_norms_are_log_convex(
        v in prop::collection::vec(0.0f64..100.0, 64),
        level in 0u32..=6,
        slot in 0usize..64,
        s0 in 1.0f64..10.0,
        s1 in 1.0f64..10.0,
        theta in 0.0f64..1.0,
    ) {
        let lat = Lattices::new(&GridSpec::new(1, 64, 1.0).unwrap());
        let q = lat.cube_at(0, level, slot % lat.cubes_at(level));
        let cells = lat.cells(&q);
        let s = 1.0 / ((1.0 - theta) / s0 + theta / s1);
        let lhs = local_mean(&v, &cells, s);
        let rhs = local_mean(&v, &cells, s0).powf(1.0 - theta) * local_mean(&v, &cells, s1).powf(theta);
        prop_assert!(lhs <= rhs + 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn ap_duality(v in prop::collection::vec(0.01f64..50.0, 64), q in 1.1f64..6.0) {
        let lat = Lattices::new(&GridSpec::new(1, 64, 1.0).unwrap());
        let w = Weight::new(v).unwrap();
        let qd = q / (q - 1.0);
        let lhs = ap_characteristic(&lat, &w, q).unwrap();
        let rhs = ap_characteristic(&lat, &w.pow(1.0 - qd), qd).unwrap().powf(q - 1.0);
        prop_assert!(lhs >= 1.0 - 1e-12);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs);
    }

    #[test]
    fn sharp_rh_bounds_subset_mass(v in prop::collection::vec(0.01f64..50.0, 64), keep in prop::collection::vec(any::<bool>(), 64), level in 0u32..6, slot in 0usize..32) {
        let spec = GridSpec::new(1, 64, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let w = Weight::new(v).unwrap();
        let delta = sharp_rh_exponent(&lat, &w);
        prop_assert!(delta >= 1.0);
        let q = lat.cube_at(1, level, slot % lat.cubes_at(level));
        let cells = lat.cells(&q);
        let e: Vec<usize> = cells.iter().copied().filter(|&x| keep[x]).collect();
        prop_assume!(!e.is_empty() && delta > 1.0);
        let h = spec.cell_volume();
        let frac = e.len() as f64 / cells.len() as f64;
        let bound = 2.0 * frac.powf(1.0 - 1.0 / delta) * w.mass(&cells, h);
        prop_assert!(w.mass(&e, h) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn random_families_pack_below_two(seed in any::<u64>(), max_level in 1u32..8) {
        let lat = Lattices::new(&GridSpec::new(1, 256, 1.0).unwrap());
        let fam = random_sparse_family(&lat, max_level, seed);
        let (a, b) = lat.carleson_ratio(&fam.cubes).unwrap();
        prop_assert!(a < 2 * b);
        prop_assert!(fam.cubes.iter().all(|q| q.level <= max_level));
    }

    #[test]
    fn sparse_form_grows_as_alpha_shrinks(
        fv in prop::collection::vec(-1.0f64..1.0, 128),
        gv in prop::collection::vec(-1.0f64..1.0, 128),
        seed in any::<u64>(),
        a1 in 0.2f64..1.0,
        a2 in 0.2f64..1.0,
    ) {
        let spec = GridSpec::new(1, 128, 1.0).unwrap();
        let lat = Lattices::new(&spec);
        let fam: SparseFamily = random_sparse_family(&lat, 5, seed);
        let (f, g) = (real(spec, &fv), real(spec, &gv));
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let big = sparse_form_alpha(&lat, &f, &g, &fam, 1.0, 2.0, lo);
        let small = sparse_form_alpha(&lat, &f, &g, &fam, 1.0, 2.0, hi);
        prop_assert!(small <= big * (1.0 + 1e-12));
    }

    #[test]
    fn besov_norm_is_homogeneous(v in prop::collection::vec(-1.0f64..1.0, 256), re in -3.0f64..3.0, im in -3.0f64..3.0, p in 1.0f64..4.0) {
        let spec = GridSpec::new(1, 256, 2.0).unwrap();
        let lp = littlewood_paley_family(&spec, 4).unwrap();
        let f = real(spec, &v);
        let c = Complex64::new(re, im);
        let base = besov_norm(&f, 0.5, p, 2.0, None, &lp).unwrap();
        let scaled = besov_norm(&f.scale(c), 0.5, p, 2.0, None, &lp).unwrap();
        prop_assert!((scaled - c.norm() * base).abs() <= 1e-10 * (1.0 + c.norm() * base));
    }
}
