//! Reference values of the discrete `W₀²` for small instances.
//!
//! Each record stores the instance, the value from [`brute_force_w0`] and
//! the command line that produced it. Records are written only on request
//! (`nlbbpp golden --bless`) and read by the oracle-equivalence tests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{brute_force_w0, TransportProblem};
use crate::configspace::{build_space, ConfigSpace, LatticeWindow, SCHEMA};
use crate::error::{Error, Result};
use crate::measures::Marginal;

/// Command line that regenerates the golden directory.
pub const BLESS_COMMAND: &str = "nlbbpp golden --bless --dir golden";

/// Description of the oracle stored in every record.
pub const ORACLE: &str = "brute_force_w0: dense reduced Newton with eps-continuation to 1e-12, three starts";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenInstance {
    pub name: String,
    /// Sites of the one-dimensional unit-cell window.
    pub sites: usize,
    pub n_max: usize,
    pub k: usize,
    pub p0: Marginal,
    pub p1: Marginal,
}

impl GoldenInstance {
    pub fn space(&self) -> Result<Arc<ConfigSpace>> {
        build_space(LatticeWindow::interval(self.sites)?, self.n_max)
    }

    pub fn problem(&self) -> Result<TransportProblem> {
        let sp = self.space()?;
        TransportProblem::new(self.p0.build(&sp)?, self.p1.build(&sp)?, self.k)
    }

    /// Runs the oracle and packages the result.
    pub fn bless(&self) -> Result<GoldenRecord> {
        let bf = brute_force_w0(&self.problem()?)?;
        Ok(GoldenRecord {
            schema: SCHEMA.to_string(),
            instance: self.clone(),
            states: self.space()?.len(),
            value: bf.value,
            restarts: bf.restarts,
            spread: bf.spread,
            oracle: ORACLE.to_string(),
            command: BLESS_COMMAND.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenRecord {
    pub schema: String,
    pub instance: GoldenInstance,
    pub states: usize,
    pub value: f64,
    pub restarts: Vec<f64>,
    pub spread: f64,
    pub oracle: String,
    pub command: String,
}

impl GoldenRecord {
    pub fn from_json(s: &str) -> Result<Self> {
        let r: GoldenRecord = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        if r.schema != SCHEMA {
            return Err(Error::InvalidInput(format!("unknown schema {}", r.schema)));
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("golden record serializes")
    }
}

fn random(seed: u64) -> Marginal {
    Marginal::Random {
        seed,
        concentration: 1.0,
    }
}

/// The instances kept under `golden/`: two-, six- and ten-state spaces.
pub fn golden_instances() -> Vec<GoldenInstance> {
    let inst = |name: &str, sites, n_max, p0, p1| GoldenInstance {
        name: name.to_string(),
        sites,
        n_max,
        k: 32,
        p0,
        p1,
    };
    vec![
        inst(
            "two_state_point_masses",
            1,
            1,
            Marginal::Pointmass { state: vec![0] },
            Marginal::Pointmass { state: vec![1] },
        ),
        inst("two_state_random", 1, 1, random(1), random(2)),
        inst(
            "six_state_poisson",
            1,
            5,
            Marginal::Poisson { c: 1.0 },
            Marginal::Poisson { c: 2.0 },
        ),
        inst("six_state_two_sites", 2, 2, random(3), random(4)),
        inst("ten_state_two_sites", 2, 3, random(5), random(6)),
        inst("ten_state_three_sites", 3, 2, random(7), Marginal::Reference),
    ]
}
