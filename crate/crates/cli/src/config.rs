//! Experiment files.
//!
//! ```toml
//! [model]
//! cells = [2]
//! n_max = 3
//!
//! [marginals]
//! p = { kind = "poisson", c = 1.0 }
//! q = { kind = "random", seed = 4 }
//!
//! [[task]]
//! kind = "solve"
//! p = "p"
//! q = "q"
//! refinement = [16, 32, 64]
//!
//! [output]
//! directory = "out"
//! ```

use std::collections::BTreeMap;

use nlbbpp::configspace::{build_space, LatticeWindow};
use nlbbpp::measures::Marginal;
use nlbbpp::stationary::FamilyKind;
use nlbbpp::{ConfigSpace, DensityMeasure, Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    #[serde(default)]
    pub marginals: BTreeMap<String, Marginal>,
    #[serde(default, rename = "task")]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub output: Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    #[serde(default = "one")]
    pub dim: usize,
    pub cells: Vec<usize>,
    #[serde(default = "unit")]
    pub h: f64,
    pub n_max: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for Output {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    /// `W₀²(p, q)` with an optional refinement table and oracle comparison.
    Solve {
        p: String,
        q: String,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        refinement: Vec<usize>,
        #[serde(default)]
        brute: bool,
    },
    /// Thinning interpolation between `p` and `q`: entropy curve and bound.
    Interpolate {
        p: String,
        q: String,
        #[serde(default = "default_interpolation_k")]
        k: usize,
    },
    /// Entropy and Fisher information along the Ornstein–Uhlenbeck flow.
    Flow {
        p: String,
        #[serde(default = "default_horizon")]
        horizon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// Inequality suites on a built-in preset.
    Verify {
        #[serde(default = "default_suite")]
        suite: String,
        #[serde(default = "default_preset")]
        preset: String,
    },
    /// Per-volume window sequences of a tiled or stationarized family pair.
    WsLimit {
        p: String,
        q: String,
        #[serde(default = "default_rs")]
        r: Vec<usize>,
        #[serde(default = "default_family")]
        family: FamilyKind,
        #[serde(default = "default_k")]
        k: usize,
    },
    /// `W₀²(p, Poisson(c))` over a list of intensities.
    Sweep {
        p: String,
        intensities: Vec<f64>,
        #[serde(default = "default_k")]
        k: usize,
    },
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Solve { .. } => "solve",
            Task::Interpolate { .. } => "interpolate",
            Task::Flow { .. } => "flow",
            Task::Verify { .. } => "verify",
            Task::WsLimit { .. } => "ws-limit",
            Task::Sweep { .. } => "sweep",
        }
    }

    fn marginal_names(&self) -> Vec<&str> {
        match self {
            Task::Solve { p, q, .. } | Task::Interpolate { p, q, .. } | Task::WsLimit { p, q, .. } => {
                vec![p, q]
            }
            Task::Flow { p, .. } | Task::Sweep { p, .. } => vec![p],
            Task::Verify { .. } => vec![],
        }
    }
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn default_directory() -> String {
    "nlbbpp-out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}
fn default_k() -> usize {
    32
}
fn default_interpolation_k() -> usize {
    64
}
fn default_horizon() -> f64 {
    2.0
}
fn default_steps() -> usize {
    20
}
fn default_suite() -> String {
    "all".into()
}
fn default_preset() -> String {
    "small".into()
}
fn default_rs() -> Vec<usize> {
    vec![1, 3]
}
fn default_family() -> FamilyKind {
    FamilyKind::Tiled
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical form stored next to the outputs.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("the task list is empty".into()));
        }
        if let Some(m) = &self.model {
            if m.cells.len() != m.dim {
                return Err(Error::Config(format!(
                    "model has dim {} but {} cell counts",
                    m.dim,
                    m.cells.len()
                )));
            }
        }
        for t in &self.tasks {
            let names = t.marginal_names();
            if !names.is_empty() && self.model.is_none() {
                return Err(Error::Config(format!("task {} needs a [model] block", t.kind())));
            }
            for n in names {
                if !self.marginals.contains_key(n) {
                    return Err(Error::Config(format!("unknown marginal {n}")));
                }
            }
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("no output formats".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<Arc<ConfigSpace>> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("missing [model] block".into()))?;
        let window = LatticeWindow::new(m.cells.clone(), m.h).map_err(|e| Error::Config(e.to_string()))?;
        build_space(window, m.n_max).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Config(msg),
            other => other,
        })
    }

    pub fn marginal(&self, space: &Arc<ConfigSpace>, name: &str) -> Result<DensityMeasure> {
        let spec = self
            .marginals
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown marginal {name}")))?;
        spec.build(space).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Config(format!("marginal {name}: {msg}")),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[model]
cells = [2]
n_max = 3

[marginals]
p = { kind = "poisson", c = 1.0 }
q = { kind = "random", seed = 4 }
m = { kind = "mixture", parts = [{ weight = 0.5, law = { kind = "reference" } }, { weight = 0.5, law = { kind = "pointmass", state = [1, 0] } }] }

[[task]]
kind = "solve"
p = "p"
q = "q"
refinement = [16, 32]

[[task]]
kind = "ws-limit"
p = "p"
q = "m"
family = "stationarized"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(EXAMPLE).unwrap();
        assert_eq!(cfg.tasks.len(), 2);
        assert_eq!(cfg.tasks[1].kind(), "ws-limit");
        let again = ExperimentConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(again, cfg);
        let sp = cfg.space().unwrap();
        assert!(cfg.marginal(&sp, "m").is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_empty_tasks() {
        let bad = EXAMPLE.replace("n_max = 3", "n_max = 3\ncolour = 1");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
        let bad = EXAMPLE.replace("refinement", "refine");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
        let empty = "[model]\ncells = [1]\nn_max = 2\n";
        assert!(matches!(ExperimentConfig::parse(empty), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_marginal_is_a_config_error() {
        let bad = EXAMPLE.replace("q = \"q\"", "q = \"nope\"");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
    }
}
