//! Task execution. Every number written here comes from a library call; this
//! module only arranges results into files.

use std::path::{Path, PathBuf};

use log::info;
use nlbbpp::dynamics::{ce_residual, thinning_cepath_with_bound, OuSemigroup};
use nlbbpp::measures::{entropy, fisher, DensityMeasure};
use nlbbpp::numerics::par_map;
use nlbbpp::solver::{brute_force_w0, solve_w0, w0_upper_bound_thinning, SolverConfig, TransportProblem};
use nlbbpp::stationary::{
    reports_to_csv, reports_to_json, run_suites, specific_entropy, suite_names, ws_estimate, Preset,
    WindowFamily,
};
use nlbbpp::{Error, Result};
use serde_json::json;

use crate::config::{ExperimentConfig, Format, Task};
use crate::output::{real, write_atomic, Table};

/// Exit status of a completed run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok = 0,
    NotConverged = 4,
    CheckFailed = 5,
}

/// Files and status produced by one task.
struct Produced {
    files: Vec<(String, String)>,
    status: Status,
    summary: String,
}

pub struct Runner {
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl Runner {
    /// Runs every task, writes its files and returns the worst status.
    pub fn run(&self, cfg: &ExperimentConfig) -> Result<Status> {
        cfg.validate()?;
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", self.out_dir.display())))?;
        write_atomic(&self.out_dir.join("config.toml"), &cfg.canonical())?;
        let indexed: Vec<(usize, &Task)> = cfg.tasks.iter().enumerate().collect();
        let results = par_map(&indexed, self.jobs, |(i, t)| self.task(cfg, *i, t));
        let mut status = Status::Ok;
        for r in results {
            let p = r?;
            for (name, body) in &p.files {
                let keep = match Path::new(name).extension().and_then(|e| e.to_str()) {
                    Some("csv") => cfg.output.formats.contains(&Format::Csv),
                    Some("json") => cfg.output.formats.contains(&Format::Json),
                    _ => true,
                };
                if keep {
                    write_atomic(&self.out_dir.join(name), body)?;
                }
            }
            println!("{}", p.summary);
            status = status.max(p.status);
        }
        Ok(status)
    }

    fn task(&self, cfg: &ExperimentConfig, i: usize, task: &Task) -> Result<Produced> {
        let stem = format!("{i:02}-{}", task.kind());
        info!("running {stem}");
        match task {
            Task::Solve {
                p,
                q,
                k,
                refinement,
                brute,
            } => {
                let sp = cfg.space()?;
                let (p0, p1) = (cfg.marginal(&sp, p)?, cfg.marginal(&sp, q)?);
                let config = SolverConfig {
                    refinement: refinement.clone(),
                    ..SolverConfig::default()
                };
                let problem = TransportProblem::new(p0, p1, *k)?.with_config(config);
                let sol = solve_w0(&problem)?;
                let oracle = if *brute {
                    Some(brute_force_w0(&problem)?)
                } else {
                    None
                };
                let mut table = Table::new(&["K", "action"]);
                for row in &sol.diagnostics.refinement {
                    table.row(&[row.k.to_string(), real(row.value)]);
                }
                let doc = json!({
                    "schema": nlbbpp::configspace::SCHEMA,
                    "task": "solve",
                    "w0_squared": sol.action_value,
                    "w0": sol.distance(),
                    "extrapolated": sol.extrapolated(),
                    "diagnostics": sol.diagnostics,
                    "brute_force": oracle,
                });
                let mut summary = format!("{stem}: W0^2 = {}", real(sol.action_value));
                if let Some(r) = sol.diagnostics.refinement.last().and_then(|r| r.richardson) {
                    summary.push_str(&format!(" (Richardson {})", real(r)));
                }
                if let Some(b) = &oracle {
                    summary.push_str(&format!(" oracle {}", real(b.value)));
                }
                let mut files = vec![(format!("{stem}.json"), pretty(&doc))];
                if !sol.diagnostics.refinement.is_empty() {
                    files.push((format!("{stem}-action_vs_k.csv"), table.render()));
                }
                Ok(Produced {
                    files,
                    status: if sol.diagnostics.converged {
                        Status::Ok
                    } else {
                        Status::NotConverged
                    },
                    summary,
                })
            }
            Task::Interpolate { p, q, k } => {
                let sp = cfg.space()?;
                let (p0, p1) = (cfg.marginal(&sp, p)?, cfg.marginal(&sp, q)?);
                // Superpositions may clip on a truncated space; the clipped mass is reported.
                let clipped = thinning_cepath_with_bound(&p0, &p1, *k, 1.0)?;
                let path = clipped.path;
                let bound = w0_upper_bound_thinning(&p0, &p1, *k)?;
                let mut table = Table::new(&["t", "entropy"]);
                for (j, t) in path.knots().iter().enumerate() {
                    table.row(&[real(*t), real(entropy(&path.density_at(j)?))]);
                }
                let doc = json!({
                    "schema": nlbbpp::configspace::SCHEMA,
                    "task": "interpolate",
                    "ce_residual": ce_residual(&path),
                    "clip_defect": clipped.defect,
                    "thinning_bound": bound,
                });
                Ok(Produced {
                    files: vec![
                        (format!("{stem}.json"), pretty(&doc)),
                        (format!("{stem}-entropy.csv"), table.render()),
                    ],
                    status: Status::Ok,
                    summary: format!(
                        "{stem}: thinning action {} residual {}",
                        real(bound.value),
                        real(bound.ce_residual)
                    ),
                })
            }
            Task::Flow { p, horizon, steps } => {
                let sp = cfg.space()?;
                let p0 = cfg.marginal(&sp, p)?;
                if *steps == 0 || !(*horizon > 0.0) {
                    return Err(Error::Config("flow needs positive steps and horizon".into()));
                }
                let ou = OuSemigroup::new(sp.clone());
                let mut ent = Table::new(&["t", "entropy"]);
                let mut fis = Table::new(&["t", "fisher"]);
                for j in 0..=*steps {
                    let t = horizon * j as f64 / *steps as f64;
                    let pt: DensityMeasure = ou.evolve(&p0, t)?;
                    ent.row(&[real(t), real(entropy(&pt))]);
                    fis.row(&[real(t), real(fisher(&pt).value)]);
                }
                Ok(Produced {
                    files: vec![
                        (format!("{stem}-entropy.csv"), ent.render()),
                        (format!("{stem}-fisher.csv"), fis.render()),
                    ],
                    status: Status::Ok,
                    summary: format!("{stem}: {} time points", steps + 1),
                })
            }
            Task::Verify { suite, preset } => {
                let names = suite_names(suite)?;
                let preset = Preset::named(preset)?;
                let reports = run_suites(&names, &preset, self.jobs)?;
                let failed = reports.iter().filter(|r| !r.pass).count();
                let inconclusive = reports.iter().filter(|r| r.inconclusive).count();
                Ok(Produced {
                    files: vec![
                        (format!("{stem}.csv"), reports_to_csv(&reports)),
                        (format!("{stem}.json"), reports_to_json(&reports)),
                    ],
                    status: if failed == 0 {
                        Status::Ok
                    } else {
                        Status::CheckFailed
                    },
                    summary: format!(
                        "{stem}: {} checks, {failed} failed, {inconclusive} inconclusive",
                        reports.len()
                    ),
                })
            }
            Task::WsLimit { p, q, r, family, k } => {
                let sp = cfg.space()?;
                let (p0, p1) = (cfg.marginal(&sp, p)?, cfg.marginal(&sp, q)?);
                let pf = WindowFamily::new(&p0, *family, r)?;
                let qf = WindowFamily::new(&p1, *family, r)?;
                let est = ws_estimate(&pf, &qf, *k, &SolverConfig::default())?;
                let ent = specific_entropy(&pf);
                let mut ws = Table::new(&["volume", "w0_squared_per_volume"]);
                for (v, s) in est.volumes.iter().zip(&est.values) {
                    ws.row(&[real(*v), real(*s)]);
                }
                let mut en = Table::new(&["volume", "entropy_per_volume"]);
                for (v, e) in ent.volumes.iter().zip(&ent.values) {
                    en.row(&[real(*v), real(*e)]);
                }
                let doc = json!({
                    "schema": nlbbpp::configspace::SCHEMA,
                    "task": "ws-limit",
                    "family": family,
                    "ws": est,
                    "specific_entropy": ent,
                });
                let converged = est.converged.iter().all(|c| *c);
                Ok(Produced {
                    files: vec![
                        (format!("{stem}.json"), pretty(&doc)),
                        (format!("{stem}-ws.csv"), ws.render()),
                        (format!("{stem}-entropy.csv"), en.render()),
                    ],
                    status: if converged {
                        Status::Ok
                    } else {
                        Status::NotConverged
                    },
                    summary: format!("{stem}: extrapolated {}", real(est.extrapolated)),
                })
            }
            Task::Sweep { p, intensities, k } => {
                let sp = cfg.space()?;
                let p0 = cfg.marginal(&sp, p)?;
                let mut table = Table::new(&["intensity", "w0_squared"]);
                let mut status = Status::Ok;
                for &c in intensities {
                    let q =
                        DensityMeasure::poisson(sp.clone(), c).map_err(|e| Error::Config(e.to_string()))?;
                    let sol = solve_w0(&TransportProblem::new(p0.clone(), q, *k)?)?;
                    if !sol.diagnostics.converged {
                        status = Status::NotConverged;
                    }
                    table.row(&[real(c), real(sol.action_value)]);
                }
                Ok(Produced {
                    files: vec![(format!("{stem}.csv"), table.render())],
                    status,
                    summary: format!("{stem}: {} intensities", intensities.len()),
                })
            }
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}
