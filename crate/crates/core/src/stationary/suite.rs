//! Seeded verification suites over small presets.
//!
//! Each suite expands into independent instances that run on a bounded
//! number of threads; reports come back in instance order.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::checks::{
    check_contractivity, check_debruijn, check_evi, check_geodesic_convexity, check_hwi, check_logsobolev,
    check_talagrand, specific_evi, specific_talagrand, EviOptions, InequalityReport,
};
use super::{ws_estimate, WindowFamily};
use crate::configspace::{build_space, product, ConfigSpace, LatticeWindow};
use crate::error::{Error, Result};
use crate::measures::DensityMeasure;
use crate::numerics::par_map;
use crate::solver::{solve_w0, SolverConfig, TransportProblem};

/// Suite names accepted by [`run_suite`], in the order `all` runs them.
pub const SUITES: &[&str] = &[
    "talagrand",
    "contractivity",
    "evi",
    "convexity",
    "debruijn",
    "hwi",
    "logsobolev",
    "tensorization",
    "ws",
];

/// Sizes and seeds of a suite run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    /// `(sites, n_max)` of the one-dimensional solver spaces.
    pub spaces: Vec<(usize, usize)>,
    /// Random laws per space for single-law checks.
    pub laws: usize,
    /// Random pairs per space for two-law checks.
    pub pairs: usize,
    pub k: usize,
    pub concentration: f64,
    /// Truncations of the single-site de Bruijn runs.
    pub debruijn_n_max: Vec<usize>,
    pub debruijn_horizons: Vec<f64>,
    pub solver: SolverConfig,
}

impl Preset {
    /// The default desk-scale preset: `d = 1`, `m ≤ 2`, `n_max ≤ 3`.
    pub fn small() -> Self {
        Self {
            spaces: vec![(1, 3), (2, 2), (2, 3)],
            laws: 20,
            pairs: 10,
            k: 32,
            concentration: 1.0,
            debruijn_n_max: vec![8, 12],
            debruijn_horizons: vec![0.5, 2.0],
            solver: SolverConfig::default(),
        }
    }

    /// A fast preset for smoke tests.
    pub fn tiny() -> Self {
        Self {
            spaces: vec![(1, 2)],
            laws: 2,
            pairs: 1,
            k: 16,
            debruijn_n_max: vec![8],
            debruijn_horizons: vec![0.5],
            ..Self::small()
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "small" => Ok(Self::small()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::Config(format!("unknown preset {name}"))),
        }
    }

    fn space(&self, idx: usize) -> Result<Arc<ConfigSpace>> {
        let (m, n) = self.spaces[idx];
        build_space(LatticeWindow::interval(m)?, n)
    }

    fn law(&self, space: &Arc<ConfigSpace>, seed: u64) -> Result<DensityMeasure> {
        DensityMeasure::random(space.clone(), seed, self.concentration)
    }

    /// Seed of law `i` of role `role` on space `idx`.
    fn seed(idx: usize, role: u64, i: usize) -> u64 {
        1000 * idx as u64 + 100 * role + i as u64
    }

    fn refined(&self) -> SolverConfig {
        let mut c = self.solver.clone();
        c.refinement = vec![self.k / 2, self.k];
        c
    }
}

/// Expands `"all"` or a comma-separated list into suite names.
pub fn suite_names(spec: &str) -> Result<Vec<&'static str>> {
    if spec == "all" {
        return Ok(SUITES.to_vec());
    }
    spec.split(',')
        .map(|s| {
            SUITES
                .iter()
                .find(|n| **n == s.trim())
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown suite {s}")))
        })
        .collect()
}

type Job<'a> = Box<dyn Fn() -> Result<Vec<InequalityReport>> + Send + Sync + 'a>;

fn run_jobs(jobs: Vec<Job>, threads: usize) -> Result<Vec<InequalityReport>> {
    let out = par_map(&jobs, threads, |j| j());
    let mut reports = Vec::new();
    for r in out {
        reports.extend(r?);
    }
    Ok(reports)
}

/// Per-law jobs over every preset space.
fn per_law<'a>(
    preset: &'a Preset,
    f: impl Fn(&DensityMeasure) -> Result<Vec<InequalityReport>> + Send + Sync + 'a,
) -> Vec<Job<'a>> {
    let f = Arc::new(f);
    let mut jobs: Vec<Job> = Vec::new();
    for idx in 0..preset.spaces.len() {
        for i in 0..preset.laws {
            let f = f.clone();
            jobs.push(Box::new(move || {
                let sp = preset.space(idx)?;
                f(&preset.law(&sp, Preset::seed(idx, 0, i))?)
            }));
        }
    }
    jobs
}

/// Per-pair jobs over every preset space.
fn per_pair<'a>(
    preset: &'a Preset,
    f: impl Fn(&DensityMeasure, &DensityMeasure) -> Result<Vec<InequalityReport>> + Send + Sync + 'a,
) -> Vec<Job<'a>> {
    let f = Arc::new(f);
    let mut jobs: Vec<Job> = Vec::new();
    for idx in 0..preset.spaces.len() {
        for i in 0..preset.pairs {
            let f = f.clone();
            jobs.push(Box::new(move || {
                let sp = preset.space(idx)?;
                let p = preset.law(&sp, Preset::seed(idx, 1, i))?;
                let q = preset.law(&sp, Preset::seed(idx, 2, i))?;
                f(&p, &q)
            }));
        }
    }
    jobs
}

/// Tiled families of two seeded laws on the smallest preset space.
fn tiled_pair(preset: &Preset, i: usize) -> Result<(WindowFamily, WindowFamily)> {
    let sp = preset.space(0)?;
    let p = preset.law(&sp, Preset::seed(0, 3, i))?;
    let q = preset.law(&sp, Preset::seed(0, 4, i))?;
    Ok((
        WindowFamily::tiled(&p, &[1, 3])?,
        WindowFamily::tiled(&q, &[1, 3])?,
    ))
}

/// Runs one named suite.
pub fn run_suite(name: &str, preset: &Preset, threads: usize) -> Result<Vec<InequalityReport>> {
    let k = preset.k;
    let cfg = &preset.solver;
    let jobs: Vec<Job> = match name {
        "talagrand" => {
            let refined = preset.refined();
            let mut jobs = per_law(preset, move |p| Ok(vec![check_talagrand(p, k, &refined)?]));
            jobs.push(Box::new(move || {
                let (pf, _) = tiled_pair(preset, 0)?;
                specific_talagrand(&pf, k, cfg)
            }));
            jobs
        }
        "contractivity" => per_pair(preset, move |p, q| {
            [0.1, 0.5, 1.0]
                .iter()
                .map(|&t| check_contractivity(p, q, t, k, cfg))
                .collect()
        }),
        "evi" => {
            let mut jobs = per_pair(preset, move |p, r| {
                [0.1, 0.5]
                    .iter()
                    .map(|&t| check_evi(p, r, t, k, cfg, &EviOptions::default()))
                    .collect()
            });
            jobs.push(Box::new(move || {
                let (pf, rf) = tiled_pair(preset, 0)?;
                specific_evi(&pf, &rf, 0.5, k, cfg, &EviOptions::default())
            }));
            jobs
        }
        "convexity" => per_pair(preset, move |p, q| check_geodesic_convexity(p, q, k, cfg)),
        "debruijn" => {
            let mut jobs: Vec<Job> = Vec::new();
            for &n in &preset.debruijn_n_max {
                for &horizon in &preset.debruijn_horizons {
                    jobs.push(Box::new(move || {
                        let sp = build_space(LatticeWindow::interval(1)?, n)?;
                        let laws = [
                            DensityMeasure::poisson(sp.clone(), 2.0)?,
                            DensityMeasure::random(sp, 7, preset.concentration)?,
                        ];
                        laws.iter().map(|p| check_debruijn(p, horizon)).collect()
                    }));
                }
            }
            jobs
        }
        "hwi" => {
            let refined = preset.refined();
            per_law(preset, move |p| Ok(vec![check_hwi(p, k, &refined)?]))
        }
        "logsobolev" => {
            let mut jobs = per_law(preset, |p| Ok(vec![check_logsobolev(p)?]));
            jobs.push(Box::new(move || {
                let sp = build_space(LatticeWindow::interval(1)?, 12)?;
                (0..preset.laws)
                    .map(|i| {
                        check_logsobolev(&DensityMeasure::random(
                            sp.clone(),
                            i as u64,
                            preset.concentration,
                        )?)
                    })
                    .collect()
            }));
            jobs
        }
        "tensorization" => {
            let mut jobs: Vec<Job> = Vec::new();
            for idx in 0..preset.spaces.len().min(2) {
                for i in 0..preset.pairs.min(5) {
                    jobs.push(Box::new(move || Ok(vec![tensorization(preset, idx, i)?])));
                }
            }
            jobs
        }
        "ws" => {
            let mut jobs: Vec<Job> = Vec::new();
            for i in 0..preset.pairs.min(3) {
                jobs.push(Box::new(move || {
                    let (pf, qf) = tiled_pair(preset, i)?;
                    let est = ws_estimate(&pf, &qf, k, cfg)?;
                    let (s1, s3) = (est.values[0], est.values[1]);
                    let m = &pf.members()[1].measure;
                    Ok(vec![InequalityReport::new(
                        "ws_tiled_constancy",
                        m,
                        (s3 - s1).abs(),
                        0.0,
                        1e-2 * s1,
                    )
                    .with_detail(format!("s_1={s1:.12e} s_3={s3:.12e} K={k}"))])
                }));
            }
            jobs.push(Box::new(move || stationarized_upper_bound(preset)));
            jobs
        }
        _ => return Err(Error::Config(format!("unknown suite {name}"))),
    };
    run_jobs(jobs, threads)
}

/// Runs several suites in order.
pub fn run_suites(names: &[&str], preset: &Preset, threads: usize) -> Result<Vec<InequalityReport>> {
    let mut out = Vec::new();
    for n in names {
        out.extend(run_suite(n, preset, threads)?);
    }
    Ok(out)
}

/// `|W₀²(P⊗P′, Q⊗Q′) − W₀²(P, Q) − W₀²(P′, Q′)|` against `1e-2` relative.
fn tensorization(preset: &Preset, idx: usize, i: usize) -> Result<InequalityReport> {
    let sp = preset.space(idx)?;
    let m = sp.sites() as i64;
    let sp2 = sp.translated(&[m])?;
    let p = preset.law(&sp, Preset::seed(idx, 5, i))?;
    let q = preset.law(&sp, Preset::seed(idx, 6, i))?;
    let p2 = preset.law(&sp2, Preset::seed(idx, 7, i))?;
    let q2 = preset.law(&sp2, Preset::seed(idx, 8, i))?;
    let w = |a: &DensityMeasure, b: &DensityMeasure| -> Result<f64> {
        let sol = solve_w0(
            &TransportProblem::new(a.clone(), b.clone(), preset.k)?.with_config(preset.solver.clone()),
        )?;
        Ok(sol.action_value)
    };
    let (a, b) = (w(&p, &q)?, w(&p2, &q2)?);
    let pp = product(&p, &p2, None)?.measure;
    let qq = product(&q, &q2, None)?.measure;
    let c = w(&pp, &qq)?;
    Ok(
        InequalityReport::new("tensorization", &pp, (c - a - b).abs(), 0.0, 1e-2 * c).with_detail(format!(
            "product={c:.12e} factors={a:.12e}+{b:.12e} K={}",
            preset.k
        )),
    )
}

/// Per-volume `W₀²` between stationarized restrictions against the base value.
fn stationarized_upper_bound(preset: &Preset) -> Result<Vec<InequalityReport>> {
    let sp = build_space(LatticeWindow::interval(2)?, 1)?;
    let p = DensityMeasure::random(sp.clone(), 11, preset.concentration)?;
    let q = DensityMeasure::random(sp.clone(), 12, preset.concentration)?;
    let base =
        solve_w0(&TransportProblem::new(p.clone(), q.clone(), preset.k)?.with_config(preset.solver.clone()))?
            .action_value
            / sp.volume();
    let pf = WindowFamily::stationarized(&p, &[1, 3])?;
    let qf = WindowFamily::stationarized(&q, &[1, 3])?;
    let est = ws_estimate(&pf, &qf, preset.k, &preset.solver)?;
    Ok(pf
        .members()
        .iter()
        .zip(&est.values)
        .map(|(m, &s)| {
            InequalityReport::new("stationarized_upper_bound", &m.measure, s, base, 1e-3 * base)
                .with_detail(format!("r={} K={}", m.r, preset.k))
        })
        .collect())
}
