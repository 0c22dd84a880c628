//! Density measures and their functionals.
//!
//! A law on a [`ConfigSpace`] is stored as its density `ρ` with respect to
//! the truncated Poisson reference, so `P(n) = ρ(n)·π(n)`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::configspace::{ConfigSpace, SpaceDocument};
use crate::error::{Error, Result};

/// Mass tolerance accepted by [`DensityMeasure::new`] before renormalizing.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Value reported for the Fisher information outside its domain.
pub const FISHER_SENTINEL: f64 = 1e300;

/// Named constructor of a law, as written in experiment files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Marginal {
    Poisson {
        c: f64,
    },
    Random {
        seed: u64,
        #[serde(default = "unit_concentration")]
        concentration: f64,
    },
    /// Point mass at an occupancy vector.
    Pointmass {
        state: Vec<u16>,
    },
    Reference,
    Mixture {
        parts: Vec<MixturePart>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePart {
    pub weight: f64,
    pub law: Marginal,
}

fn unit_concentration() -> f64 {
    1.0
}

impl Marginal {
    pub fn build(&self, space: &Arc<ConfigSpace>) -> Result<DensityMeasure> {
        match self {
            Marginal::Poisson { c } => DensityMeasure::poisson(space.clone(), *c),
            Marginal::Random { seed, concentration } => {
                DensityMeasure::random(space.clone(), *seed, *concentration)
            }
            Marginal::Pointmass { state } => {
                let i = space
                    .index_of(state)
                    .ok_or_else(|| Error::InvalidInput(format!("{state:?} is not a state of the space")))?;
                DensityMeasure::point_mass(space.clone(), i)
            }
            Marginal::Reference => Ok(DensityMeasure::reference(space.clone())),
            Marginal::Mixture { parts } => {
                let laws = parts
                    .iter()
                    .map(|p| p.law.build(space))
                    .collect::<Result<Vec<_>>>()?;
                let weighted: Vec<(f64, &DensityMeasure)> =
                    parts.iter().map(|p| p.weight).zip(&laws).collect();
                DensityMeasure::mixture(&weighted)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityMeasure {
    space: Arc<ConfigSpace>,
    rho: Vec<f64>,
}

/// A measure produced by an operation that may clip mass at `n_max`.
#[derive(Clone, Debug)]
pub struct Clipped {
    pub measure: DensityMeasure,
    /// Mass removed before renormalization.
    pub defect: f64,
}

impl DensityMeasure {
    /// Wraps a density whose mass `Σ ρπ` is one up to [`MASS_TOLERANCE`].
    pub fn new(space: Arc<ConfigSpace>, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != space.len() {
            return Err(Error::InvalidInput(format!(
                "density has {} entries for {} states",
                rho.len(),
                space.len()
            )));
        }
        if rho.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput(
                "densities must be finite and nonnegative".into(),
            ));
        }
        let mass: f64 = rho.iter().zip(space.pi()).map(|(r, p)| r * p).sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "density has mass {mass}, expected 1"
            )));
        }
        let rho = rho.into_iter().map(|r| r / mass).collect();
        Ok(Self { space, rho })
    }

    /// Moves `p`'s density unchanged onto a space with the same states and
    /// reference, e.g. a translated copy.
    pub(crate) fn relabeled(space: Arc<ConfigSpace>, p: &DensityMeasure) -> Self {
        debug_assert_eq!(space.pi(), p.space.pi());
        Self {
            space,
            rho: p.rho.clone(),
        }
    }

    /// Density of the normalization of a nonnegative law vector.
    pub fn from_law(space: Arc<ConfigSpace>, law: Vec<f64>) -> Result<Self> {
        if law.len() != space.len() {
            return Err(Error::InvalidInput("law length does not match the space".into()));
        }
        if law.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput(
                "law entries must be finite and nonnegative".into(),
            ));
        }
        let z: f64 = law.iter().sum();
        if !(z > 0.0) {
            return Err(Error::InvalidInput("law has zero mass".into()));
        }
        let rho = law.iter().zip(space.pi()).map(|(p, q)| p / z / q).collect();
        Ok(Self { space, rho })
    }

    /// The reference itself (`ρ ≡ 1`).
    pub fn reference(space: Arc<ConfigSpace>) -> Self {
        let rho = vec![1.0; space.len()];
        Self { space, rho }
    }

    pub fn point_mass(space: Arc<ConfigSpace>, state: usize) -> Result<Self> {
        if state >= space.len() {
            return Err(Error::InvalidInput(format!("state {state} out of range")));
        }
        let mut law = vec![0.0; space.len()];
        law[state] = 1.0;
        Self::from_law(space, law)
    }

    /// Truncated Poisson law with site intensities `c·v_j`.
    pub fn poisson(space: Arc<ConfigSpace>, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "intensity must be positive, got {c}"
            )));
        }
        let lc = c.ln();
        let logs: Vec<f64> = (0..space.len()).map(|i| space.total(i) as f64 * lc).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mass: f64 = raw.iter().zip(space.pi()).map(|(r, p)| r * p).sum();
        let rho = raw.into_iter().map(|r| r / mass).collect();
        Ok(Self { space, rho })
    }

    /// Seeded random law: `ρ` proportional to i.i.d. `Gamma(concentration, 1)` draws.
    ///
    /// Large concentrations give laws close to the reference.
    pub fn random(space: Arc<ConfigSpace>, seed: u64, concentration: f64) -> Result<Self> {
        let gamma = Gamma::new(concentration, 1.0)
            .map_err(|e| Error::InvalidInput(format!("bad concentration: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..space.len())
            .map(|_| gamma.sample(&mut rng).max(1e-300))
            .collect();
        let mass: f64 = raw.iter().zip(space.pi()).map(|(r, p)| r * p).sum();
        let rho = raw.into_iter().map(|r| r / mass).collect();
        Ok(Self { space, rho })
    }

    /// Convex combination `Σ w_i P_i` of laws on one space.
    pub fn mixture(parts: &[(f64, &DensityMeasure)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("empty mixture".into()))?;
        let space = first.1.space.clone();
        let z: f64 = parts.iter().map(|(w, _)| *w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || !(z > 0.0) {
            return Err(Error::InvalidInput("mixture weights must be nonnegative".into()));
        }
        let mut rho = vec![0.0; space.len()];
        for (w, p) in parts {
            if p.space.as_ref() != space.as_ref() {
                return Err(Error::WindowMismatch(
                    "mixture of laws on different spaces".into(),
                ));
            }
            for (r, x) in rho.iter_mut().zip(&p.rho) {
                *r += w / z * x;
            }
        }
        Self::new(space, rho)
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn space_arc(&self) -> &Arc<ConfigSpace> {
        &self.space
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Probabilities `P(n) = ρ(n)π(n)`.
    pub fn law(&self) -> Vec<f64> {
        self.rho.iter().zip(self.space.pi()).map(|(r, p)| r * p).collect()
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().zip(self.space.pi()).map(|(r, p)| r * p).sum()
    }

    /// Mass on states where some site cannot receive another point.
    pub fn ceiling_mass(&self) -> f64 {
        let law = self.law();
        (0..self.space.len())
            .filter(|&i| self.space.at_ceiling(i))
            .map(|i| law[i])
            .sum()
    }

    pub fn to_document(&self) -> MeasureDocument {
        MeasureDocument {
            space: self.space.to_document(),
            rho: self.rho.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("measure document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MeasureDocument = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let space = doc.space.into_space()?;
        Self::new(space, doc.rho)
    }
}

/// Serialized form of a [`DensityMeasure`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDocument {
    pub space: SpaceDocument,
    pub rho: Vec<f64>,
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Relative entropy `Σ ρ log ρ · π`.
pub fn entropy(p: &DensityMeasure) -> f64 {
    p.rho.iter().zip(p.space.pi()).map(|(r, q)| xlogx(*r) * q).sum()
}

/// Modified Fisher information with its domain flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherInfo {
    pub value: f64,
    /// False when some edge joins a zero and a positive density.
    pub in_domain: bool,
}

/// `Σ_{n,j} D_jρ(n)·D_j log ρ(n)·π(n)·v_j`.
pub fn fisher(p: &DensityMeasure) -> FisherInfo {
    fisher_with_sentinel(p, FISHER_SENTINEL)
}

pub fn fisher_with_sentinel(p: &DensityMeasure, sentinel: f64) -> FisherInfo {
    let sp = &p.space;
    let mut total = 0.0;
    for (e, ed) in sp.edges().iter().enumerate() {
        let (x, y) = (p.rho[ed.from], p.rho[ed.to]);
        if x == y {
            continue;
        }
        if x == 0.0 || y == 0.0 {
            return FisherInfo {
                value: sentinel,
                in_domain: false,
            };
        }
        total += (y - x) * (y.ln() - x.ln()) * sp.edge_weight(e);
    }
    FisherInfo {
        value: total,
        in_domain: true,
    }
}

/// Laplace functional `E[exp(−Σ_j f_j n_j)]`.
pub fn laplace(p: &DensityMeasure, f: &[f64]) -> Result<f64> {
    let sp = &p.space;
    if f.len() != sp.sites() {
        return Err(Error::InvalidInput(
            "test function needs one value per site".into(),
        ));
    }
    if f.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidInput("test function must be nonnegative".into()));
    }
    let law = p.law();
    Ok((0..sp.len())
        .map(|i| {
            let s: f64 = sp.state(i).iter().zip(f).map(|(&n, fj)| n as f64 * fj).sum();
            law[i] * (-s).exp()
        })
        .sum())
}

/// Mean occupancy per site.
pub fn intensity(p: &DensityMeasure) -> Vec<f64> {
    let sp = &p.space;
    let law = p.law();
    let mut out = vec![0.0; sp.sites()];
    for i in 0..sp.len() {
        for (o, &n) in out.iter_mut().zip(sp.state(i)) {
            *o += n as f64 * law[i];
        }
    }
    out
}

/// Reduced Campbell table, one entry per edge `(n, j)`.
#[derive(Clone, Debug)]
pub struct CampbellTable {
    pub values: Vec<f64>,
}

impl CampbellTable {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `C(n, j) = ρ(n+e_j)·π(n+e_j)·(n_j+1)`: the mass of configurations that
/// equal `n` after removing one point at site `j`.
pub fn campbell(p: &DensityMeasure) -> CampbellTable {
    let sp = &p.space;
    let values = sp
        .edges()
        .iter()
        .map(|ed| {
            let n_j = sp.state(ed.from)[ed.site] as f64;
            p.rho[ed.to] * sp.pi()[ed.to] * (n_j + 1.0)
        })
        .collect();
    CampbellTable { values }
}

/// Total variation distance `½ Σ |P − Q|`.
pub fn total_variation(p: &DensityMeasure, q: &DensityMeasure) -> f64 {
    0.5 * p
        .law()
        .iter()
        .zip(q.law())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}
