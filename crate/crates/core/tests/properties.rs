//! Randomized invariants of the lattice model and its functionals.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nlbbpp::configspace::{
    build_space, product, restrict, shift, ConfigSpace, LatticeWindow, SiteBlock, SpaceOptions,
};
use nlbbpp::measures::{entropy, laplace, total_variation};
use nlbbpp::mobility::{
    lagrangian, log_mean, mobility_alpha, product_velocity, restrict_velocity, shift_velocity,
    VelocityDensity,
};
use nlbbpp::DensityMeasure;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn space(m: usize, n_max: usize) -> Arc<ConfigSpace> {
    build_space(LatticeWindow::interval(m).unwrap(), n_max).unwrap()
}

fn random_velocity(sp: &Arc<ConfigSpace>, seed: u64) -> VelocityDensity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..sp.edge_count())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    VelocityDensity::new(sp.clone(), w).unwrap()
}

/// All occupancy vectors in `{0..=n_max}^m` meeting the total and block caps.
fn admissible(m: usize, n_max: usize, blocks: &[SiteBlock]) -> Vec<Vec<u16>> {
    let mut out = Vec::new();
    let mut n = vec![0u16; m];
    loop {
        let total: usize = n.iter().map(|&x| x as usize).sum();
        let fits = blocks
            .iter()
            .all(|b| b.sites.iter().map(|&j| n[j] as usize).sum::<usize>() <= b.cap);
        if total <= n_max && fits {
            out.push(n.clone());
        }
        let mut a = 0;
        loop {
            if a == m {
                return out;
            }
            if (n[a] as usize) < n_max {
                n[a] += 1;
                break;
            }
            n[a] = 0;
            a += 1;
        }
    }
}

fn positive() -> impl Strategy<Value = f64> {
    (1e-6f64..10.0).prop_union(1e-3f64..1e3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn log_mean_is_a_symmetric_mean(x in positive(), y in positive()) {
        let t = log_mean(x, y).unwrap();
        prop_assert!((t - log_mean(y, x).unwrap()).abs() <= 1e-12 * t);
        prop_assert!(t <= 0.5 * (x + y) * (1.0 + 1e-12));
        prop_assert!(t >= (x * y).sqrt() * (1.0 - 1e-12));
        prop_assert!(log_mean(x * 1.5, y).unwrap() >= t * (1.0 - 1e-12));
        prop_assert!(log_mean(x, y * 1.5).unwrap() >= t * (1.0 - 1e-12));
    }

    #[test]
    fn mobility_is_jointly_convex(
        a in (positive(), positive(), -5.0f64..5.0),
        b in (positive(), positive(), -5.0f64..5.0),
    ) {
        let mid = mobility_alpha(0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1), 0.5 * (a.2 + b.2));
        let mean = 0.5 * (mobility_alpha(a.0, a.1, a.2) + mobility_alpha(b.0, b.1, b.2));
        prop_assert!(mid <= mean + 1e-10 * mean.max(1.0));
    }

    #[test]
    fn detailed_balance_with_uneven_volumes(
        vols in prop::collection::vec(0.1f64..3.0, 1..4),
        n_max in 1usize..5,
    ) {
        let m = vols.len();
        let sp = ConfigSpace::build_with(
            LatticeWindow::interval(m).unwrap(),
            n_max,
            SpaceOptions { site_volumes: Some(vols.clone()), ..SpaceOptions::default() },
        )
        .unwrap();
        let pi = sp.pi();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        for ed in sp.edges() {
            let lhs = pi[ed.from] * vols[ed.site];
            let rhs = pi[ed.to] * (sp.state(ed.from)[ed.site] as f64 + 1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs);
        }
    }

    #[test]
    fn block_enumeration_matches_exhaustive_count(
        m in 1usize..5,
        n_max in 1usize..5,
        raw in prop::collection::vec((prop::collection::vec(any::<bool>(), 4), 0usize..5), 0..3),
    ) {
        let blocks: Vec<SiteBlock> = raw
            .iter()
            .map(|(mask, cap)| SiteBlock {
                sites: (0..m).filter(|&j| mask[j]).collect(),
                cap: *cap,
            })
            .filter(|b| !b.sites.is_empty())
            .collect();
        let sp = ConfigSpace::build_with(
            LatticeWindow::interval(m).unwrap(),
            n_max,
            SpaceOptions { blocks: blocks.clone(), ..SpaceOptions::default() },
        )
        .unwrap();
        let expected = admissible(m, n_max, &blocks);
        prop_assert_eq!(sp.len(), expected.len());
        for n in &expected {
            let i = sp.index_of(n);
            prop_assert!(i.is_some());
            prop_assert_eq!(sp.state(i.unwrap()), &n[..]);
        }
    }

    #[test]
    fn entropy_is_convex_along_mixtures(seed in 0u64..1000, t in 0.0f64..1.0) {
        let sp = space(2, 3);
        let p = DensityMeasure::random(sp.clone(), seed, 1.0).unwrap();
        let q = DensityMeasure::random(sp, seed + 5000, 0.5).unwrap();
        let mix = DensityMeasure::mixture(&[(t, &p), (1.0 - t, &q)]).unwrap();
        prop_assert!(entropy(&mix) <= t * entropy(&p) + (1.0 - t) * entropy(&q) + 1e-10);
    }

    #[test]
    fn shift_preserves_mass_entropy_and_lagrangian(seed in 0u64..1000, z in -5i64..5) {
        let sp = space(2, 3);
        let p = DensityMeasure::random(sp.clone(), seed, 1.0).unwrap();
        let v = random_velocity(&sp, seed);
        let ps = shift(&p, &[z]).unwrap();
        prop_assert!((ps.mass() - 1.0).abs() <= 1e-14);
        prop_assert_eq!(entropy(&ps), entropy(&p));
        let vs = shift_velocity(&v, &[z]).unwrap();
        prop_assert_eq!(lagrangian(&ps, &vs).unwrap(), lagrangian(&p, &v).unwrap());
        let back = shift(&ps, &[-z]).unwrap();
        prop_assert!(back.space() == p.space());
        prop_assert_eq!(back.rho(), p.rho());
    }

    #[test]
    fn lagrangian_is_superadditive_under_restriction(seed in 0u64..1000) {
        let sp = space(2, 3);
        let p = DensityMeasure::random(sp.clone(), seed, 1.0).unwrap();
        let v = random_velocity(&sp, seed + 1);
        let a = LatticeWindow::interval(1).unwrap();
        let b = LatticeWindow::interval(1).unwrap().with_origin(vec![1]).unwrap();
        let (pa, va) = restrict_velocity(&p, &v, &a).unwrap();
        let (pb, vb) = restrict_velocity(&p, &v, &b).unwrap();
        let whole = lagrangian(&p, &v).unwrap();
        let parts = lagrangian(&pa, &va).unwrap() + lagrangian(&pb, &vb).unwrap();
        prop_assert!(parts <= whole + 1e-10 * whole.max(1.0), "{parts} > {whole}");
    }

    #[test]
    fn product_is_additive_and_restricts_back(seed in 0u64..1000) {
        let a = build_space(LatticeWindow::interval(1).unwrap(), 3).unwrap();
        let wb = LatticeWindow::interval(2).unwrap().with_origin(vec![1]).unwrap();
        let b = build_space(wb.clone(), 2).unwrap();
        let p = DensityMeasure::random(a.clone(), seed, 1.0).unwrap();
        let q = DensityMeasure::random(b.clone(), seed + 1, 1.0).unwrap();
        let (vp, vq) = (random_velocity(&a, seed + 2), random_velocity(&b, seed + 3));
        let prod = product(&p, &q, None).unwrap();
        prop_assert!(prod.defect <= 1e-14);
        let joint = prod.measure;
        prop_assert!(total_variation(&restrict(&joint, a.window()).unwrap(), &p) <= 1e-14);
        prop_assert!(total_variation(&restrict(&joint, &wb).unwrap(), &q) <= 1e-14);
        let v = product_velocity(joint.space_arc(), &p, &vp, &q, &vq).unwrap();
        let whole = lagrangian(&joint, &v).unwrap();
        let sum = lagrangian(&p, &vp).unwrap() + lagrangian(&q, &vq).unwrap();
        prop_assert!((whole - sum).abs() <= 1e-10 * sum.max(1.0), "{whole} vs {sum}");
    }
}

/// Laplace values on the full factorial `{0, ½, 1, 2}^m` determine the law:
/// the law is recovered from them by least squares.
#[test]
fn laplace_transform_determines_the_law() {
    const LEVELS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
    for (m, n_max) in [(1, 3), (2, 3), (3, 2)] {
        let sp = space(m, n_max);
        let tests: Vec<Vec<f64>> = (0..4usize.pow(m as u32))
            .map(|code| {
                (0..m)
                    .map(|j| LEVELS[(code / 4usize.pow(j as u32)) % 4])
                    .collect()
            })
            .collect();
        let design = DMatrix::from_fn(tests.len(), sp.len(), |r, i| {
            let s: f64 = sp
                .state(i)
                .iter()
                .zip(&tests[r])
                .map(|(&n, f)| n as f64 * f)
                .sum();
            (-s).exp()
        });
        for seed in 0..5 {
            let p = DensityMeasure::random(sp.clone(), seed, 1.0).unwrap();
            let values = DVector::from_iterator(tests.len(), tests.iter().map(|f| laplace(&p, f).unwrap()));
            let law = design.clone().svd(true, true).solve(&values, 1e-14).unwrap();
            let q = DensityMeasure::from_law(sp.clone(), law.iter().map(|x| x.max(0.0)).collect()).unwrap();
            let tv = total_variation(&p, &q);
            assert!(tv <= 1e-10, "m={m} n_max={n_max} seed={seed}: tv {tv:e}");
        }
    }
}
