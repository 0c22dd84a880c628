//! Solver properties on oracle-sized instances.

use std::sync::Arc;

use nlbbpp::configspace::{build_space, cyclic_shift, LatticeWindow};
use nlbbpp::dynamics::{
    ce_residual, is_shift_invariant, thinning_cepath_with_bound, thinning_velocity, CEPath,
};
use nlbbpp::measures::{entropy, total_variation};
use nlbbpp::mobility::action;
use nlbbpp::solver::{
    brute_force_w0, geodesic, solve_w0, w0_upper_bound_thinning, TransportProblem, TransportSolution,
};
use nlbbpp::{ConfigSpace, DensityMeasure};

fn space(m: usize, n_max: usize) -> Arc<ConfigSpace> {
    build_space(LatticeWindow::interval(m).unwrap(), n_max).unwrap()
}

fn random(sp: &Arc<ConfigSpace>, seed: u64) -> DensityMeasure {
    DensityMeasure::random(sp.clone(), seed, 1.0).unwrap()
}

fn solve(p: &DensityMeasure, q: &DensityMeasure, k: usize) -> TransportSolution {
    let sol = solve_w0(&TransportProblem::new(p.clone(), q.clone(), k).unwrap()).unwrap();
    assert!(sol.diagnostics.converged);
    sol
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn solutions_are_feasible_and_bracketed() {
    for (m, n_max, seed) in [(1, 2, 1), (1, 3, 2), (2, 2, 3), (2, 3, 4)] {
        let sp = space(m, n_max);
        let (p, q) = (random(&sp, seed), random(&sp, seed + 100));
        let problem = TransportProblem::new(p.clone(), q.clone(), 16).unwrap();
        let sol = solve_w0(&problem).unwrap();
        assert!(ce_residual(&sol.path) <= 1e-9);
        assert_eq!(sol.action_value, action(&sol.path));
        let ends = [sol.path.density_at(0).unwrap(), sol.path.density_at(16).unwrap()];
        assert!(total_variation(&ends[0], &p) <= 1e-10);
        assert!(total_variation(&ends[1], &q) <= 1e-10);

        let oracle = brute_force_w0(&problem).unwrap().value;
        let bound = w0_upper_bound_thinning(&p, &q, 16).unwrap();
        assert!(
            oracle <= sol.action_value * (1.0 + 1e-8),
            "{oracle} {}",
            sol.action_value
        );
        assert!(
            sol.action_value <= bound.value + 1e-8,
            "{} {}",
            sol.action_value,
            bound.value
        );
    }
}

#[test]
fn poisson_pair_bound_dominates_and_refines() {
    let sp = space(1, 8);
    let p = DensityMeasure::poisson(sp.clone(), 1.0).unwrap();
    let q = DensityMeasure::poisson(sp, 2.0).unwrap();
    let w = solve(&p, &q, 32).action_value;
    let bounds: Vec<f64> = [16, 32, 64, 128]
        .iter()
        .map(|&k| w0_upper_bound_thinning(&p, &q, k).unwrap().value)
        .collect();
    assert!(bounds[1] >= w * (1.0 - 1e-6));
    // The sampled action is a quadrature of a fixed path: it converges at
    // second order, from below on this pair.
    let steps: Vec<f64> = bounds.windows(2).map(|b| (b[1] - b[0]).abs()).collect();
    for s in steps.windows(2) {
        assert!(s[1] <= s[0] / 3.0, "{bounds:?}");
    }
}

#[test]
fn distance_is_symmetric_and_satisfies_the_triangle_inequality() {
    let sp = space(2, 2);
    let laws: Vec<DensityMeasure> = (0..4).map(|s| random(&sp, 40 + s)).collect();
    let mut d = vec![vec![0.0; laws.len()]; laws.len()];
    for i in 0..laws.len() {
        for j in 0..laws.len() {
            if i != j {
                d[i][j] = solve(&laws[i], &laws[j], 16).distance();
            }
        }
    }
    for i in 0..laws.len() {
        for j in 0..laws.len() {
            if i != j {
                assert!(rel(d[i][j], d[j][i]) <= 1e-6, "{} {}", d[i][j], d[j][i]);
            }
            for k in 0..laws.len() {
                assert!(d[i][k] <= d[i][j] + d[j][k] + 1e-4);
            }
        }
    }
    let problem =
        |a: &DensityMeasure, b: &DensityMeasure| TransportProblem::new(a.clone(), b.clone(), 8).unwrap();
    let fwd = brute_force_w0(&problem(&laws[0], &laws[1])).unwrap().value;
    let bwd = brute_force_w0(&problem(&laws[1], &laws[0])).unwrap().value;
    assert!(rel(fwd, bwd) <= 1e-10, "{fwd} {bwd}");
}

#[test]
fn geodesics_have_constant_speed() {
    let sp = space(2, 3);
    let (p, q) = (random(&sp, 7), random(&sp, 8));
    let k = 32;
    let path = geodesic(&TransportProblem::new(p.clone(), q.clone(), k).unwrap()).unwrap();
    let w2 = action(&path);
    for s in [0.25, 0.5, 0.75] {
        let cut = (s * k as f64) as usize;
        let part = path.slice(0, cut).unwrap();
        // Rescale the sub-path to unit time: knots t/s, velocities s·w.
        let rescaled = CEPath::new(
            path.space_arc().clone(),
            part.knots().iter().map(|t| t / s).collect(),
            part.densities().to_vec(),
            part.velocities()
                .iter()
                .map(|w| w.iter().map(|x| x * s).collect())
                .collect(),
        )
        .unwrap();
        assert!(rel(action(&rescaled), s * s * w2) <= 1e-2, "s={s}");
    }

    // Re-solving the two halves splits the distance.
    let mid = path.density_at(k / 2).unwrap();
    let first = solve(&p, &mid, k / 2).distance();
    let second = solve(&mid, &q, k / 2).distance();
    let whole = w2.sqrt();
    assert!(rel(first, 0.5 * whole) <= 1e-2, "{first} {whole}");
    assert!(rel(second, 0.5 * whole) <= 1e-2, "{second} {whole}");
    assert!(entropy(&mid) <= 0.5 * (entropy(&p) + entropy(&q)) - w2 / 8.0 + 2e-3);
}

#[test]
fn action_halves_when_the_horizon_doubles() {
    let sp = space(2, 2);
    let path = thinning_cepath_with_bound(&random(&sp, 3), &random(&sp, 4), 16, 1.0)
        .unwrap()
        .path;
    let slow = CEPath::new(
        path.space_arc().clone(),
        path.knots().iter().map(|t| 2.0 * t).collect(),
        path.densities().to_vec(),
        path.velocities()
            .iter()
            .map(|w| w.iter().map(|x| 0.5 * x).collect())
            .collect(),
    )
    .unwrap();
    assert!(rel(action(&slow), 0.5 * action(&path)) <= 1e-12);
    assert!(rel(ce_residual(&slow), 0.5 * ce_residual(&path)) <= 1e-9);
}

#[test]
fn stationary_marginals_give_a_stationary_thinning_path() {
    let win = LatticeWindow::interval(3).unwrap().periodic(true);
    let sp = build_space(win, 2).unwrap();
    let symmetrize = |p: DensityMeasure| {
        let shifts: Vec<DensityMeasure> = (0..3).map(|z| cyclic_shift(&p, &[z]).unwrap()).collect();
        let parts: Vec<(f64, &DensityMeasure)> = shifts.iter().map(|s| (1.0 / 3.0, s)).collect();
        DensityMeasure::mixture(&parts).unwrap()
    };
    let p0 = symmetrize(random(&sp, 21));
    let p1 = symmetrize(random(&sp, 22));
    for t in [0.2, 0.5, 0.9] {
        assert!(
            is_shift_invariant(&thinning_velocity(&p0, &p1, t).unwrap())
                .unwrap()
                .invariant
        );
    }
    // Clipping at the ceiling acts symmetrically, so it keeps stationarity.
    let path = thinning_cepath_with_bound(&p0, &p1, 8, 1.0).unwrap().path;
    for k in 0..=8 {
        let rho = path.density_at(k).unwrap();
        for z in 1..3 {
            let moved = cyclic_shift(&rho, &[z]).unwrap();
            let dev = moved
                .rho()
                .iter()
                .zip(rho.rho())
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(dev <= 1e-10, "knot {k} shift {z}: {dev:e}");
        }
    }
}
