//! Golden oracle values: regeneration with `--bless` and comparison.

use std::path::Path;

use nlbbpp::numerics::par_map;
use nlbbpp::solver::golden::{golden_instances, GoldenRecord};
use nlbbpp::solver::solve_w0;
use nlbbpp::{Error, Result};

use crate::output::{real, write_atomic};
use crate::run::Status;

/// Relative agreement required between the solver and a golden value.
pub const GOLDEN_TOLERANCE: f64 = 1e-4;

pub fn golden(dir: &Path, bless: bool, jobs: usize) -> Result<Status> {
    let instances = golden_instances();
    if bless {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
        for (inst, rec) in instances.iter().zip(par_map(&instances, jobs, |i| i.bless())) {
            let rec = rec?;
            write_atomic(&dir.join(format!("{}.json", inst.name)), &rec.to_json())?;
            println!("{}: {} (spread {:.1e})", inst.name, real(rec.value), rec.spread);
        }
        return Ok(Status::Ok);
    }
    let mut status = Status::Ok;
    for inst in &instances {
        let path = dir.join(format!("{}.json", inst.name));
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!(
                "cannot read {} ({e}); regenerate with --bless",
                path.display()
            ))
        })?;
        let rec = GoldenRecord::from_json(&text).map_err(|e| Error::Config(e.to_string()))?;
        if rec.instance != *inst {
            return Err(Error::Config(format!(
                "{} describes another instance; rerun --bless",
                path.display()
            )));
        }
        let sol = solve_w0(&inst.problem()?)?;
        let rel = (sol.action_value - rec.value).abs() / rec.value.abs().max(1e-300);
        let ok = rel <= GOLDEN_TOLERANCE;
        println!(
            "{} {}: solver {} golden {} rel {rel:.2e}",
            if ok { "PASS" } else { "FAIL" },
            inst.name,
            real(sol.action_value),
            real(rec.value)
        );
        if !ok {
            status = Status::CheckFailed;
        }
    }
    Ok(status)
}
