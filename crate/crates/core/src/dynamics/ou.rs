//! The Ornstein–Uhlenbeck semigroup on the truncated space.
//!
//! The generator adds a point at site `j` with rate `v_j` (while below `n_max`)
//! and removes each present point with rate one. It is reversible for the
//! truncated reference, so `π^{1/2} L π^{-1/2}` is symmetric and the semigroup
//! is evaluated through its eigendecomposition.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ode_solvers::{Dopri5, OutputType, System};

use super::thinning::{superpose_with_bound, thinning};
use crate::configspace::{poisson_tail, ConfigSpace};
use crate::error::{Error, Result};
use crate::measures::{Clipped, DensityMeasure};

/// How [`ou_evolve`] computes `S_t P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OuMethod {
    /// Exact evolution under the truncated generator.
    Generator,
    /// Thinning by `e^{-t}` plus an independent truncated Poisson of
    /// intensity `1 − e^{-t}`, clipped at `n_max`.
    ClosedForm,
}

/// Spaces up to this many states use the dense eigendecomposition; larger
/// ones integrate the forward equation with an embedded Runge–Kutta pair.
const DENSE_LIMIT: usize = 3000;

/// Cached spectral data of the truncated generator.
pub struct OuSemigroup {
    space: Arc<ConfigSpace>,
    spectral: Option<(DVector<f64>, DMatrix<f64>)>,
    sqrt_pi: Vec<f64>,
}

impl OuSemigroup {
    pub fn new(space: Arc<ConfigSpace>) -> Self {
        let sqrt_pi: Vec<f64> = space.pi().iter().map(|p| p.sqrt()).collect();
        let spectral = (space.len() <= DENSE_LIMIT).then(|| {
            let s = space.len();
            let mut a = DMatrix::<f64>::zeros(s, s);
            for ed in space.edges() {
                let n_j = space.state(ed.from)[ed.site] as f64;
                let rate_up = space.site_volumes()[ed.site];
                let off = (rate_up * (n_j + 1.0)).sqrt();
                a[(ed.from, ed.to)] = off;
                a[(ed.to, ed.from)] = off;
                a[(ed.from, ed.from)] -= rate_up;
                a[(ed.to, ed.to)] -= n_j + 1.0;
            }
            let eig = SymmetricEigen::new(a);
            (eig.eigenvalues, eig.eigenvectors)
        });
        Self {
            space,
            spectral,
            sqrt_pi,
        }
    }

    pub fn space(&self) -> &Arc<ConfigSpace> {
        &self.space
    }

    /// Smallest nonzero rate of the truncated generator.
    pub fn spectral_gap(&self) -> Option<f64> {
        let (vals, _) = self.spectral.as_ref()?;
        let mut rates: Vec<f64> = vals.iter().map(|l| -l).collect();
        rates.sort_by(f64::total_cmp);
        rates.get(1).copied()
    }

    /// `ρ ↦ e^{tL}ρ`.
    pub fn evolve_density(&self, rho: &[f64], t: f64) -> Result<Vec<f64>> {
        // Constants are fixed points of the generator; skip the rounding.
        if t == 0.0 || rho.iter().all(|&r| r == rho[0]) {
            return Ok(rho.to_vec());
        }
        let out: Vec<f64> = match &self.spectral {
            Some((vals, vecs)) => {
                let x = DVector::from_iterator(rho.len(), rho.iter().zip(&self.sqrt_pi).map(|(r, s)| r * s));
                let mut c = vecs.tr_mul(&x);
                for (ci, l) in c.iter_mut().zip(vals.iter()) {
                    *ci *= (l * t).exp();
                }
                let y = vecs * c;
                y.iter().zip(&self.sqrt_pi).map(|(v, s)| v / s).collect()
            }
            None => {
                let y0 = DVector::from_column_slice(rho);
                let mut stepper = Dopri5::from_param(
                    DensityFlow(&self.space),
                    0.0,
                    t,
                    t,
                    y0,
                    1e-11,
                    1e-11,
                    0.9,
                    0.04,
                    0.2,
                    10.0,
                    t,
                    0.0,
                    100_000,
                    1000,
                    OutputType::Sparse,
                );
                stepper
                    .integrate()
                    .map_err(|e| Error::NonConvergence(format!("OU forward equation: {e:?}")))?;
                let y = stepper.y_out().last().expect("final state");
                y.iter().copied().collect()
            }
        };
        Ok(out.into_iter().map(|r| r.max(0.0)).collect())
    }

    pub fn evolve(&self, p: &DensityMeasure, t: f64) -> Result<DensityMeasure> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::InvalidInput(format!("negative time {t}")));
        }
        if p.space() != self.space.as_ref() {
            return Err(Error::WindowMismatch("measure lives on another space".into()));
        }
        let rho = self.evolve_density(p.rho(), t)?;
        let mass: f64 = rho.iter().zip(self.space.pi()).map(|(r, q)| r * q).sum();
        DensityMeasure::new(self.space.clone(), rho.into_iter().map(|r| r / mass).collect())
    }
}

/// `∂_t ρ = Lρ` for the density against `π`.
struct DensityFlow<'a>(&'a ConfigSpace);

impl System<f64, DVector<f64>> for DensityFlow<'_> {
    fn system(&self, _t: f64, r: &DVector<f64>, dr: &mut DVector<f64>) {
        let sp = self.0;
        dr.fill(0.0);
        for ed in sp.edges() {
            let n_j = sp.state(ed.from)[ed.site] as f64;
            let d = r[ed.to] - r[ed.from];
            dr[ed.from] += sp.site_volumes()[ed.site] * d;
            dr[ed.to] -= (n_j + 1.0) * d;
        }
    }
}

/// `S_t P` by the requested method. The generator method reports no defect;
/// the closed form reports the Poisson truncation mass plus the clipped mass.
pub fn ou_evolve(p: &DensityMeasure, t: f64, method: OuMethod) -> Result<Clipped> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::InvalidInput(format!("negative time {t}")));
    }
    if t == 0.0 {
        return Ok(Clipped {
            measure: p.clone(),
            defect: 0.0,
        });
    }
    match method {
        OuMethod::Generator => Ok(Clipped {
            measure: OuSemigroup::new(p.space_arc().clone()).evolve(p, t)?,
            defect: 0.0,
        }),
        OuMethod::ClosedForm => {
            let keep = (-t).exp();
            let space = p.space_arc().clone();
            let fresh = DensityMeasure::poisson(space.clone(), 1.0 - keep)?;
            let tail = poisson_tail((1.0 - keep) * space.volume(), space.n_max());
            let c = superpose_with_bound(&thinning(p, keep)?, &fresh, 1.0)?;
            Ok(Clipped {
                measure: c.measure,
                defect: 1.0 - (1.0 - tail) * (1.0 - c.defect),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{build_space, LatticeWindow};
    use crate::measures::total_variation;

    #[test]
    fn reference_is_invariant() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 3).unwrap();
        let pi = DensityMeasure::reference(sp.clone());
        let sg = OuSemigroup::new(sp);
        for t in [0.3, 1.0, 5.0] {
            let r = sg.evolve(&pi, t).unwrap();
            assert!(r.rho().iter().all(|x| (x - 1.0).abs() < 1e-10));
        }
    }

    #[test]
    fn semigroup_law() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 3).unwrap();
        let p = DensityMeasure::random(sp.clone(), 9, 1.0).unwrap();
        let sg = OuSemigroup::new(sp);
        let a = sg.evolve(&sg.evolve(&p, 0.4).unwrap(), 0.7).unwrap();
        let b = sg.evolve(&p, 1.1).unwrap();
        assert!(total_variation(&a, &b) < 1e-12);
    }

    #[test]
    fn integrator_matches_spectral() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 4).unwrap();
        let p = DensityMeasure::random(sp.clone(), 2, 1.0).unwrap();
        let sg = OuSemigroup::new(sp.clone());
        let mut ode = OuSemigroup::new(sp);
        ode.spectral = None;
        let a = sg.evolve(&p, 0.8).unwrap();
        let b = ode.evolve(&p, 0.8).unwrap();
        assert!(total_variation(&a, &b) < 1e-9, "{:e}", total_variation(&a, &b));
    }

    #[test]
    fn closed_form_agrees_without_clipping() {
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 25).unwrap();
        let p = DensityMeasure::poisson(sp.clone(), 2.0).unwrap();
        let g = ou_evolve(&p, 0.7, OuMethod::Generator).unwrap();
        let c = ou_evolve(&p, 0.7, OuMethod::ClosedForm).unwrap();
        assert!(total_variation(&g.measure, &c.measure) < 1e-9);
    }
}
