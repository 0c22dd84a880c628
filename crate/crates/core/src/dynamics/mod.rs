//! The discrete continuity equation and its explicit solutions.
//!
//! A [`CEPath`] is staggered in time: densities `ρ_k` sit on the knots and
//! velocities `w_{k+1/2}` on the intervals between them. The flux of a
//! velocity along the edge `n → n+e_j` is `w(n,j)·π(n)·v_j`.

mod ou;
mod thinning;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::configspace::{cyclic_permutation, ConfigSpace, SpaceDocument};
use crate::error::{Error, Result};
use crate::measures::DensityMeasure;
use crate::mobility::{permute_velocity, VelocityDensity};

pub use ou::{ou_evolve, OuMethod, OuSemigroup};
pub use thinning::{
    superpose, superpose_with_bound, thinning, thinning_interpolation, thinning_velocity,
    thinning_velocity_with_cap, DEFAULT_CLIP_BOUND, DEFAULT_PAIR_CAP,
};

/// Time-staggered curve of densities and velocities.
#[derive(Clone, Debug)]
pub struct CEPath {
    space: Arc<ConfigSpace>,
    knots: Vec<f64>,
    densities: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

/// `K + 1` equispaced knots on `[0, 1]`.
pub fn uniform_knots(k: usize) -> Vec<f64> {
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

impl CEPath {
    pub fn new(
        space: Arc<ConfigSpace>,
        knots: Vec<f64>,
        densities: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidInput("a path needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("knots must be strictly increasing".into()));
        }
        if densities.len() != knots.len() || velocities.len() + 1 != knots.len() {
            return Err(Error::InvalidInput(
                "need one density per knot and one velocity per interval".into(),
            ));
        }
        if densities.iter().any(|r| r.len() != space.len())
            || velocities.iter().any(|w| w.len() != space.edge_count())
        {
            return Err(Error::InvalidInput("path vectors do not match the space".into()));
        }
        Ok(Self {
            space,
            knots,
            densities,
            velocities,
        })
    }

    /// Samples densities at the knots and velocities at interval midpoints.
    pub fn sample<D, V>(space: Arc<ConfigSpace>, knots: Vec<f64>, density: D, velocity: V) -> Result<Self>
    where
        D: Fn(f64) -> Result<Vec<f64>>,
        V: Fn(f64) -> Result<Vec<f64>>,
    {
        let densities = knots.iter().map(|&t| density(t)).collect::<Result<Vec<_>>>()?;
        let velocities = knots
            .windows(2)
            .map(|w| velocity(0.5 * (w[0] + w[1])))
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, knots, densities, velocities)
    }

    /// The constant path at `p` with zero velocity.
    pub fn constant(p: &DensityMeasure, k: usize) -> Self {
        let space = p.space_arc().clone();
        let e = space.edge_count();
        Self {
            space,
            knots: uniform_knots(k),
            densities: vec![p.rho().to_vec(); k + 1],
            velocities: vec![vec![0.0; e]; k],
        }
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn space_arc(&self) -> &Arc<ConfigSpace> {
        &self.space
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn densities(&self) -> &[Vec<f64>] {
        &self.densities
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    pub fn intervals(&self) -> usize {
        self.velocities.len()
    }

    /// Knot density as a measure.
    pub fn density_at(&self, k: usize) -> Result<DensityMeasure> {
        let rho = self.densities[k].iter().map(|r| r.max(0.0)).collect();
        DensityMeasure::new(self.space.clone(), rho)
    }

    /// Sub-path on the knots `from..=to`, with the time axis kept as is.
    pub fn slice(&self, from: usize, to: usize) -> Result<CEPath> {
        if from >= to || to >= self.knots.len() {
            return Err(Error::InvalidInput("bad knot range".into()));
        }
        CEPath::new(
            self.space.clone(),
            self.knots[from..=to].to_vec(),
            self.densities[from..=to].to_vec(),
            self.velocities[from..to].to_vec(),
        )
    }

    pub fn to_document(&self) -> PathDocument {
        let m = self.space.sites();
        let velocities = self
            .velocities
            .iter()
            .map(|w| {
                (0..self.space.len())
                    .map(|i| {
                        (0..m)
                            .map(|j| self.space.edge_id(i, j).map_or(0.0, |e| w[e]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        PathDocument {
            space: self.space.to_document(),
            knots: self.knots.clone(),
            densities: self.densities.clone(),
            velocities,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("path document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PathDocument = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let space = doc.space.into_space()?;
        let mut velocities = Vec::with_capacity(doc.velocities.len());
        for table in &doc.velocities {
            if table.len() != space.len() {
                return Err(Error::InvalidInput("velocity table has wrong state count".into()));
            }
            let mut w = vec![0.0; space.edge_count()];
            for (e, ed) in space.edges().iter().enumerate() {
                w[e] = *table[ed.from]
                    .get(ed.site)
                    .ok_or_else(|| Error::InvalidInput("velocity row too short".into()))?;
            }
            velocities.push(w);
        }
        CEPath::new(space, doc.knots, doc.densities, velocities)
    }
}

/// Serialized path; velocities are indexed `[interval][state][site]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathDocument {
    pub space: SpaceDocument,
    pub knots: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<Vec<f64>>>,
}

/// Net outflow `Σ_j [J(n,j) − J(n−e_j,j)]` of a flux per state.
pub fn divergence(space: &ConfigSpace, flux: &[f64]) -> Vec<f64> {
    let mut div = vec![0.0; space.len()];
    for (e, ed) in space.edges().iter().enumerate() {
        div[ed.from] += flux[e];
        div[ed.to] -= flux[e];
    }
    div
}

/// Largest pointwise residual of the discrete continuity equation
/// `(ρ_{k+1} − ρ_k)π/Δt + div(w·π·v) = 0` over all intervals and states.
pub fn ce_residual(path: &CEPath) -> f64 {
    let sp = path.space();
    let q = sp.edge_weights();
    let mut worst = 0.0f64;
    let mut flux = vec![0.0; sp.edge_count()];
    for k in 0..path.intervals() {
        let dt = path.knots[k + 1] - path.knots[k];
        for ((f, w), qe) in flux.iter_mut().zip(&path.velocities[k]).zip(&q) {
            *f = w * qe;
        }
        let div = divergence(sp, &flux);
        for (n, d) in div.iter().enumerate() {
            let rate = (path.densities[k + 1][n] - path.densities[k][n]) * sp.pi()[n] / dt;
            worst = worst.max((rate + d).abs());
        }
    }
    worst
}

/// Point of the Poisson path: the truncated Poisson law of intensity
/// `(1−t)c₀ + t·c₁` and the velocity `w = (c₁ − c₀)·ρ_t`.
pub fn poisson_path(
    space: &Arc<ConfigSpace>,
    c0: f64,
    c1: f64,
    t: f64,
) -> Result<(DensityMeasure, VelocityDensity)> {
    if !(c0 > 0.0 && c1 > 0.0) {
        return Err(Error::InvalidInput("Poisson intensities must be positive".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("time {t} outside [0, 1]")));
    }
    let p = DensityMeasure::poisson(space.clone(), (1.0 - t) * c0 + t * c1)?;
    let w = space
        .edges()
        .iter()
        .map(|ed| (c1 - c0) * p.rho()[ed.from])
        .collect();
    let v = VelocityDensity::new(space.clone(), w)?;
    Ok((p, v))
}

/// Poisson path sampled on `k` uniform intervals.
pub fn poisson_cepath(space: &Arc<ConfigSpace>, c0: f64, c1: f64, k: usize) -> Result<CEPath> {
    CEPath::sample(
        space.clone(),
        uniform_knots(k),
        |t| Ok(poisson_path(space, c0, c1, t)?.0.rho().to_vec()),
        |t| Ok(poisson_path(space, c0, c1, t)?.1.into_vec()),
    )
}

/// Thinning interpolation and its velocity sampled on `k` uniform intervals.
pub fn thinning_cepath(p0: &DensityMeasure, p1: &DensityMeasure, k: usize) -> Result<CEPath> {
    let space = p0.space_arc().clone();
    CEPath::sample(
        space,
        uniform_knots(k),
        |t| Ok(thinning_interpolation(p0, p1, t)?.measure.rho().to_vec()),
        |t| Ok(thinning_velocity(p0, p1, t)?.into_vec()),
    )
}

/// A sampled thinning path whose superpositions may clip up to `bound`.
#[derive(Clone, Debug)]
pub struct ClippedPath {
    pub path: CEPath,
    /// Largest mass clipped at one knot.
    pub defect: f64,
}

/// [`thinning_cepath`] with an explicit clip bound per knot.
pub fn thinning_cepath_with_bound(
    p0: &DensityMeasure,
    p1: &DensityMeasure,
    k: usize,
    bound: f64,
) -> Result<ClippedPath> {
    if p0.space() != p1.space() {
        return Err(Error::WindowMismatch("marginals live on different spaces".into()));
    }
    let knots = uniform_knots(k);
    let mut defect: f64 = 0.0;
    let mut densities = Vec::with_capacity(knots.len());
    for &t in &knots {
        let rho = if t == 0.0 {
            p0.rho().to_vec()
        } else if t == 1.0 {
            p1.rho().to_vec()
        } else {
            let c = superpose_with_bound(&thinning(p0, 1.0 - t)?, &thinning(p1, t)?, bound)?;
            defect = defect.max(c.defect);
            c.measure.rho().to_vec()
        };
        densities.push(rho);
    }
    let velocities = knots
        .windows(2)
        .map(|w| Ok(thinning_velocity(p0, p1, 0.5 * (w[0] + w[1]))?.into_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClippedPath {
        path: CEPath::new(p0.space_arc().clone(), knots, densities, velocities)?,
        defect,
    })
}

/// Outcome of [`is_shift_invariant`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftInvariance {
    pub invariant: bool,
    pub max_deviation: f64,
}

/// Tolerance of [`is_shift_invariant`].
pub const SHIFT_TOLERANCE: f64 = 1e-10;

/// Compares `w∘Θ_z` with `w` for every cyclic lattice shift of a periodic window.
pub fn is_shift_invariant(v: &VelocityDensity) -> Result<ShiftInvariance> {
    let sp = v.space();
    let win = sp.window();
    if !win.is_periodic() {
        return Err(Error::WindowMismatch(format!("{win} is not periodic")));
    }
    if sp.site_volumes().windows(2).any(|p| p[0] != p[1]) {
        return Err(Error::InvalidInput(
            "shift invariance needs uniform site volumes".into(),
        ));
    }
    let mut worst = 0.0f64;
    let mut z = vec![0i64; win.dim()];
    loop {
        let perm = cyclic_permutation(win, &z)?;
        let moved = permute_velocity(v, &perm)?;
        for (a, b) in moved.w().iter().zip(v.w()) {
            worst = worst.max((a - b).abs());
        }
        let mut a = 0;
        loop {
            if a == z.len() {
                return Ok(ShiftInvariance {
                    invariant: worst < SHIFT_TOLERANCE,
                    max_deviation: worst,
                });
            }
            z[a] += 1;
            if (z[a] as usize) < win.cells()[a] {
                break;
            }
            z[a] = 0;
            a += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{build_space, LatticeWindow};

    #[test]
    fn constant_path_has_zero_residual() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 3).unwrap();
        let p = DensityMeasure::random(sp, 1, 1.0).unwrap();
        assert_eq!(ce_residual(&CEPath::constant(&p, 8)), 0.0);
    }

    #[test]
    fn poisson_path_residual_is_second_order() {
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 20).unwrap();
        let r16 = ce_residual(&poisson_cepath(&sp, 1.0, 2.0, 16).unwrap());
        let r32 = ce_residual(&poisson_cepath(&sp, 1.0, 2.0, 32).unwrap());
        assert!(r32 < 1e-3);
        assert!((r16 / r32).log2() > 1.8, "{r16} {r32}");
    }

    #[test]
    fn mismatched_path_has_large_residual() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 2).unwrap();
        let a = DensityMeasure::random(sp.clone(), 1, 1.0).unwrap();
        let b = DensityMeasure::random(sp.clone(), 2, 1.0).unwrap();
        let path = CEPath::new(
            sp.clone(),
            uniform_knots(1),
            vec![a.rho().to_vec(), b.rho().to_vec()],
            vec![vec![0.3; sp.edge_count()]],
        )
        .unwrap();
        assert!(ce_residual(&path) > 0.01);
    }

    #[test]
    fn shift_invariance_of_poisson_velocity() {
        let w = LatticeWindow::interval(3).unwrap().periodic(true);
        let sp = build_space(w, 3).unwrap();
        let (_, v) = poisson_path(&sp, 1.0, 2.0, 0.3).unwrap();
        assert!(is_shift_invariant(&v).unwrap().invariant);
        assert!(
            is_shift_invariant(&VelocityDensity::zero(sp.clone()))
                .unwrap()
                .invariant
        );
        let mut w = v.w().to_vec();
        let e = sp.edge_id(0, 1).unwrap();
        w[e] += 0.1;
        let bad = VelocityDensity::new(sp, w).unwrap();
        let r = is_shift_invariant(&bad).unwrap();
        assert!(!r.invariant && r.max_deviation > 0.05);
    }

    #[test]
    fn path_json_round_trip() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 2).unwrap();
        let path = poisson_cepath(&sp, 1.0, 1.5, 4).unwrap();
        let back = CEPath::from_json(&path.to_json()).unwrap();
        assert_eq!(back.knots(), path.knots());
        assert_eq!(back.velocities(), path.velocities());
        assert_eq!(back.densities(), path.densities());
    }
}
