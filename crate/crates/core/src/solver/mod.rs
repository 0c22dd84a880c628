//! Discrete Benamou–Brenier problem: the squared distance `W₀²` and geodesics.
//!
//! Densities live on a uniform grid of `K + 1` knots and velocities on the
//! `K` intervals. The discrete action is jointly convex in `(ρ, w)` and the
//! continuity equation is linear, so the problem is convex. [`solve_w0`]
//! warm-starts with a preconditioned primal–dual iteration and then runs an
//! interior-point Newton method with exact logarithmic means to high
//! accuracy. [`brute_force_w0`] is an independent reference optimizer for
//! small instances.

mod blocktri;
mod brute;
pub mod golden;
mod newton;
mod primal_dual;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_w0, BruteForce, BRUTE_FORCE_CAP, RESTART_AGREEMENT};

use crate::configspace::ConfigSpace;
use crate::dynamics::{ce_residual, thinning_cepath_with_bound, uniform_knots, CEPath, ClippedPath};
use crate::error::{Error, Result};
use crate::measures::DensityMeasure;
use crate::mobility::action;
use newton::{barrier_newton, least_action_velocity, Iterate, NewtonOptions};

/// Tunables of [`solve_w0`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Cap on Newton iterations over all barrier stages.
    pub max_iters: usize,
    /// Primal–dual warm-start iterations.
    pub pd_iters: usize,
    /// Smoothing `ε` of the logarithmic mean inside the warm start.
    pub eps0: f64,
    /// Final barrier weight relative to the action.
    pub mu_final: f64,
    /// Barrier reduction per stage.
    pub mu_factor: f64,
    /// Required continuity-equation residual of the returned path.
    pub residual_tol: f64,
    /// Required relative action change over the last barrier stage.
    pub action_tol: f64,
    /// Additional solves from perturbed starting points; the best is kept.
    pub restarts: usize,
    /// Interval counts for the refinement table (empty: none).
    pub refinement: Vec<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 400,
            pd_iters: 100,
            eps0: 1e-9,
            mu_final: 1e-12,
            mu_factor: 0.1,
            residual_tol: 1e-9,
            action_tol: 1e-9,
            restarts: 0,
            refinement: Vec::new(),
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        let positive = [self.eps0, self.mu_final, self.residual_tol, self.action_tol];
        if positive.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if !(self.mu_factor > 0.0 && self.mu_factor < 1.0) {
            return Err(Error::InvalidInput("barrier reduction must lie in (0, 1)".into()));
        }
        if self.refinement.contains(&0) {
            return Err(Error::InvalidInput(
                "refinement interval counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Marginals, interval count and solver settings.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub p0: DensityMeasure,
    pub p1: DensityMeasure,
    pub k: usize,
    pub config: SolverConfig,
}

impl TransportProblem {
    pub fn new(p0: DensityMeasure, p1: DensityMeasure, k: usize) -> Result<Self> {
        if p0.space() != p1.space() {
            return Err(Error::WindowMismatch("marginals live on different spaces".into()));
        }
        if k == 0 {
            return Err(Error::InvalidInput("need at least one interval".into()));
        }
        Ok(Self {
            p0,
            p1,
            k,
            config: SolverConfig::default(),
        })
    }

    pub fn with_config(mut self, config: SolverConfig) -> Self {
        self.config = config;
        self
    }

    pub fn space(&self) -> &Arc<ConfigSpace> {
        self.p0.space_arc()
    }
}

/// One row of a refinement table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct RefinementRow {
    pub k: usize,
    pub value: f64,
    /// Extrapolation `(4·v(K) − v(K/2))/3` against the previous row when it
    /// has half as many intervals.
    pub richardson: Option<f64>,
}

/// Solver diagnostics, serialized as the machine-readable report.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    pub iterations: usize,
    pub ce_residual: f64,
    pub action_history: Vec<f64>,
    pub converged: bool,
    pub refinement: Vec<RefinementRow>,
    /// Mass the marginals place on states at the occupancy ceiling.
    pub ceiling_mass: f64,
}

#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub path: CEPath,
    /// Action of `path`, computed with the exact logarithmic mean.
    pub action_value: f64,
    pub diagnostics: Diagnostics,
}

impl TransportSolution {
    /// `W₀ = √action`.
    pub fn distance(&self) -> f64 {
        self.action_value.max(0.0).sqrt()
    }

    /// Richardson value of the finest refinement row, else the action.
    pub fn extrapolated(&self) -> f64 {
        self.diagnostics
            .refinement
            .iter()
            .rev()
            .find_map(|r| r.richardson)
            .unwrap_or(self.action_value)
    }
}

/// Mass above which the ceiling of the truncation may bind.
pub const CEILING_WARNING: f64 = 1e-8;

fn solve_once(problem: &TransportProblem, perturb: Option<u64>) -> Result<(Iterate, usize, bool, Vec<f64>)> {
    let space = problem.space().as_ref();
    let cfg = &problem.config;
    let k = problem.k;
    let dt = 1.0 / k as f64;
    let (r0, r1) = (problem.p0.rho(), problem.p1.rho());
    let s = space.len();

    let mut rho: Vec<Vec<f64>> = (0..=k)
        .map(|j| {
            let t = j as f64 / k as f64;
            (0..s).map(|n| (1.0 - t) * r0[n] + t * r1[n]).collect()
        })
        .collect();
    if let Some(seed) = perturb {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for r in rho.iter_mut().take(k).skip(1) {
            for x in r.iter_mut() {
                *x *= rng.random_range(0.5..1.5);
            }
        }
    }
    let mut it = Iterate {
        w: vec![vec![0.0; space.edge_count()]; k],
        rho,
    };
    newton_feasible(space, dt, &mut it, 0.0)?;
    let mut history = Vec::new();
    if k > 1 && cfg.pd_iters > 0 {
        primal_dual::primal_dual(space, dt, &mut it, cfg.pd_iters, cfg.eps0);
        // The warm start is only approximately feasible: restore positivity
        // and the continuity equation before the Newton phase.
        newton_feasible(space, dt, &mut it, 1e-3)?;
        if let Some(a) = newton::action_of(space, dt, &it) {
            history.push(a);
        }
    }
    let opts = NewtonOptions {
        max_iters: cfg.max_iters,
        mu_final: cfg.mu_final,
        mu_factor: cfg.mu_factor,
    };
    let report = barrier_newton(space, dt, &mut it, &opts);
    history.extend(report.history.iter());
    Ok((it, report.iterations, report.converged, history))
}

/// Makes interior densities positive with unit mass, mixing a fraction
/// `mix` of the reference in, and sets each velocity to the least-action
/// velocity between its knots.
fn newton_feasible(space: &ConfigSpace, dt: f64, it: &mut Iterate, mix: f64) -> Result<()> {
    let k = it.w.len();
    let pi = space.pi();
    for j in 1..k {
        let r = &mut it.rho[j];
        for x in r.iter_mut() {
            *x = x.max(0.0);
        }
        let mass: f64 = r.iter().zip(pi).map(|(a, b)| a * b).sum();
        let floor = mix.max(1e-6);
        for x in r.iter_mut() {
            *x = (1.0 - floor) * *x / mass + floor;
        }
    }
    for j in 0..k {
        it.w[j] = least_action_velocity(space, dt, &it.rho[j], &it.rho[j + 1])
            .ok_or_else(|| Error::NonConvergence("marginals are at infinite distance".into()))?;
    }
    Ok(())
}

fn solve_fixed_k(problem: &TransportProblem) -> Result<TransportSolution> {
    problem.config.validate()?;
    let space = problem.space().clone();
    let k = problem.k;
    let ceiling_mass = problem.p0.ceiling_mass().max(problem.p1.ceiling_mass());
    if ceiling_mass > CEILING_WARNING {
        log::warn!("marginals put {ceiling_mass:.3e} mass on ceiling states; the truncation may bind");
    }
    if problem.p0.rho() == problem.p1.rho() {
        return Ok(TransportSolution {
            path: CEPath::constant(&problem.p0, k),
            action_value: 0.0,
            diagnostics: Diagnostics {
                converged: true,
                ceiling_mass,
                ..Diagnostics::default()
            },
        });
    }
    let mut best: Option<(f64, Iterate, usize, bool, Vec<f64>)> = None;
    let mut iterations = 0;
    for attempt in 0..=problem.config.restarts {
        let perturb = (attempt > 0).then_some(attempt as u64);
        let (it, iters, converged, history) = solve_once(problem, perturb)?;
        iterations += iters;
        let value = newton::action_of(&space, 1.0 / k as f64, &it).unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, it, iters, converged, history));
        }
    }
    let (_, it, _, converged, history) = best.expect("at least one attempt");
    let path = CEPath::new(space, uniform_knots(k), it.rho, it.w)?;
    let residual = ce_residual(&path);
    let action_value = action(&path);
    let stalled = history.len() >= 2 && {
        let (a, b) = (history[history.len() - 2], history[history.len() - 1]);
        (a - b).abs() > problem.config.action_tol * b.abs().max(1e-300)
    };
    let converged = converged && residual <= problem.config.residual_tol && !stalled;
    if !converged {
        log::warn!("solver stopped without meeting its tolerances (residual {residual:.3e})");
    }
    Ok(TransportSolution {
        path,
        action_value,
        diagnostics: Diagnostics {
            iterations,
            ce_residual: residual,
            action_history: history,
            converged,
            refinement: Vec::new(),
            ceiling_mass,
        },
    })
}

/// Computes the discrete `W₀²(P0, P1)` and a minimizing path.
///
/// A path that misses the tolerances is still returned, with
/// `diagnostics.converged` unset.
pub fn solve_w0(problem: &TransportProblem) -> Result<TransportSolution> {
    let mut sol = solve_fixed_k(problem)?;
    if !problem.config.refinement.is_empty() {
        let mut ks = problem.config.refinement.clone();
        ks.sort_unstable();
        ks.dedup();
        let mut values = Vec::with_capacity(ks.len());
        for &kr in &ks {
            let v = if kr == problem.k {
                sol.action_value
            } else {
                let mut sub = problem.clone();
                sub.k = kr;
                sub.config.refinement.clear();
                solve_fixed_k(&sub)?.action_value
            };
            values.push((kr, v));
        }
        sol.diagnostics.refinement = refinement_rows(&values);
    }
    Ok(sol)
}

/// Refinement table with Richardson extrapolation between successive halvings.
pub fn refinement_rows(values: &[(usize, f64)]) -> Vec<RefinementRow> {
    values
        .iter()
        .enumerate()
        .map(|(i, &(k, v))| RefinementRow {
            k,
            value: v,
            richardson: (i > 0 && values[i - 1].0 * 2 == k).then(|| (4.0 * v - values[i - 1].1) / 3.0),
        })
        .collect()
}

/// Minimizing path of a converged solve.
pub fn geodesic(problem: &TransportProblem) -> Result<CEPath> {
    let sol = solve_fixed_k(problem)?;
    if !sol.diagnostics.converged {
        return Err(Error::NonConvergence(format!(
            "geodesic solve stopped with residual {:.3e}",
            sol.diagnostics.ce_residual
        )));
    }
    Ok(sol.path)
}

/// Action of the sampled thinning interpolation, a feasible competitor.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ThinningBound {
    pub value: f64,
    /// Largest mass clipped at the occupancy ceiling along the path.
    pub clip_defect: f64,
    pub ce_residual: f64,
}

/// Upper bound on the discrete `W₀²` from the thinning interpolation.
///
/// Where the superposition exceeds the ceiling the clipped path is only
/// approximately feasible; the defect is reported alongside the value.
pub fn w0_upper_bound_thinning(p0: &DensityMeasure, p1: &DensityMeasure, k: usize) -> Result<ThinningBound> {
    if p0.space() != p1.space() {
        return Err(Error::WindowMismatch("marginals live on different spaces".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("need at least one interval".into()));
    }
    if p0.rho() == p1.rho() {
        return Ok(ThinningBound {
            value: 0.0,
            clip_defect: 0.0,
            ce_residual: 0.0,
        });
    }
    let ClippedPath { path, defect: clip } = thinning_cepath_with_bound(p0, p1, k, 1.0)?;
    Ok(ThinningBound {
        value: action(&path),
        clip_defect: clip,
        ce_residual: ce_residual(&path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{build_space, LatticeWindow};

    fn two_state() -> Arc<ConfigSpace> {
        build_space(LatticeWindow::interval(1).unwrap(), 1).unwrap()
    }

    #[test]
    fn identical_marginals_cost_nothing() {
        let sp = two_state();
        let p = DensityMeasure::random(sp, 3, 1.0).unwrap();
        let sol = solve_w0(&TransportProblem::new(p.clone(), p.clone(), 8).unwrap()).unwrap();
        assert_eq!(sol.action_value, 0.0);
        assert!(sol.diagnostics.converged);
        let bf = brute_force_w0(&TransportProblem::new(p.clone(), p, 8).unwrap()).unwrap();
        assert_eq!(bf.value, 0.0);
    }

    #[test]
    fn two_state_point_masses_match_reference() {
        let sp = two_state();
        let p0 = DensityMeasure::point_mass(sp.clone(), 0).unwrap();
        let p1 = DensityMeasure::point_mass(sp, 1).unwrap();
        let prob = TransportProblem::new(p0, p1, 16).unwrap();
        let sol = solve_w0(&prob).unwrap();
        let bf = brute_force_w0(&prob).unwrap();
        assert!(sol.diagnostics.converged, "{:?}", sol.diagnostics);
        assert!(sol.diagnostics.ce_residual <= 1e-9);
        assert!(
            (sol.action_value - bf.value).abs() <= 1e-4 * bf.value,
            "{} {} {:?}",
            sol.action_value,
            bf.value,
            bf.restarts
        );
    }

    #[test]
    fn refinement_table_extrapolates() {
        let rows = refinement_rows(&[(8, 1.1), (16, 1.025), (32, 1.00625)]);
        assert!(rows[0].richardson.is_none());
        assert!((rows[1].richardson.unwrap() - 1.0).abs() < 1e-12);
        assert!((rows[2].richardson.unwrap() - 1.0).abs() < 1e-12);
    }
}
