//! Reference optimizer for small instances.
//!
//! For fixed knot densities the best velocity on an interval is a weighted
//! graph gradient, so the action reduces to a function of the densities
//! alone: `Σ_k δ_kᵀ L_k⁺ δ_k / Δt` with `δ_k = π·(ρ_{k+1} − ρ_k)` and `L_k`
//! the graph Laplacian with conductances `q_e·θ_ε(ρ̄_k)`. That function is
//! minimized by a damped Newton method on dense matrices over the interior
//! densities, with the mass of each knot eliminated, while `ε` is
//! annealed towards zero.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::TransportProblem;
use crate::configspace::ConfigSpace;
use crate::error::{Error, Result};
use crate::mobility::{theta_derivs, theta_unchecked};

/// Largest `S·K` the reference optimizer accepts.
pub const BRUTE_FORCE_CAP: usize = 5000;

/// Outcome of [`brute_force_w0`].
#[derive(Clone, Debug, Serialize)]
pub struct BruteForce {
    pub value: f64,
    /// Value reached from each starting point.
    pub restarts: Vec<f64>,
    /// Largest relative disagreement between starting points.
    pub spread: f64,
}

/// Restarts must agree to this relative accuracy.
pub const RESTART_AGREEMENT: f64 = 1e-8;

struct Interval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Value, gradient and Hessian of one interval term in `(ρ_k, ρ_{k+1})`.
fn interval_term(space: &ConfigSpace, dt: f64, r0: &[f64], r1: &[f64], eps: f64) -> Option<Interval> {
    let s = space.len();
    let ne = space.edge_count();
    let pi = space.pi();
    let mut lap = DMatrix::<f64>::from_element(s, s, 1.0 / s as f64);
    let mut derivs = Vec::with_capacity(ne);
    for (e, ed) in space.edges().iter().enumerate() {
        let x = 0.5 * (r0[ed.from] + r1[ed.from]) + eps;
        let y = 0.5 * (r0[ed.to] + r1[ed.to]) + eps;
        if !(x > 0.0 && y > 0.0) {
            return None;
        }
        let td = theta_derivs(x, y);
        let c = space.edge_weight(e) * td.value;
        lap[(ed.from, ed.from)] += c;
        lap[(ed.to, ed.to)] += c;
        lap[(ed.from, ed.to)] -= c;
        lap[(ed.to, ed.from)] -= c;
        derivs.push(td);
    }
    let mut pinv = lap.cholesky()?.inverse();
    pinv.add_scalar_mut(-1.0 / s as f64);
    let delta = DVector::from_iterator(s, (0..s).map(|n| pi[n] * (r1[n] - r0[n])));
    let phi = &pinv * &delta;
    let value = delta.dot(&phi) / dt;

    let g: Vec<f64> = space.edges().iter().map(|ed| phi[ed.from] - phi[ed.to]).collect();
    // Columns L⁺b_e.
    let mut lb = DMatrix::<f64>::zeros(s, ne);
    for (e, ed) in space.edges().iter().enumerate() {
        let col = pinv.column(ed.from) - pinv.column(ed.to);
        lb.set_column(e, &col);
    }
    let f_d = &phi * (2.0 / dt);
    let f_c: Vec<f64> = g.iter().map(|x| -x * x / dt).collect();
    let f_dd = &pinv * (2.0 / dt);
    let mut f_dc = DMatrix::<f64>::zeros(s, ne);
    for e in 0..ne {
        f_dc.set_column(e, &(lb.column(e) * (-2.0 * g[e] / dt)));
    }
    let mut f_cc = DMatrix::<f64>::zeros(ne, ne);
    for (e, ed) in space.edges().iter().enumerate() {
        for f in 0..ne {
            let bl = lb[(ed.from, f)] - lb[(ed.to, f)];
            f_cc[(e, f)] = 2.0 * g[e] * g[f] * bl / dt;
        }
    }

    // Jacobians in u = (ρ_k, ρ_{k+1}).
    let mut jd = DMatrix::<f64>::zeros(s, 2 * s);
    for n in 0..s {
        jd[(n, n)] = -pi[n];
        jd[(n, s + n)] = pi[n];
    }
    let mut jc = DMatrix::<f64>::zeros(ne, 2 * s);
    for (e, ed) in space.edges().iter().enumerate() {
        let q = space.edge_weight(e);
        for off in [0, s] {
            jc[(e, off + ed.from)] += 0.5 * q * derivs[e].dx;
            jc[(e, off + ed.to)] += 0.5 * q * derivs[e].dy;
        }
    }
    let grad = jd.tr_mul(&f_d) + jc.tr_mul(&DVector::from_vec(f_c.clone()));
    let cross = jd.tr_mul(&f_dc) * &jc;
    let mut hess = jd.tr_mul(&(&f_dd * &jd)) + jc.tr_mul(&(&f_cc * &jc)) + &cross + cross.transpose();
    for (e, ed) in space.edges().iter().enumerate() {
        let q = space.edge_weight(e) * f_c[e] * 0.25;
        let td = &derivs[e];
        for oi in [0, s] {
            for oj in [0, s] {
                hess[(oi + ed.from, oj + ed.from)] += q * td.dxx;
                hess[(oi + ed.from, oj + ed.to)] += q * td.dxy;
                hess[(oi + ed.to, oj + ed.from)] += q * td.dxy;
                hess[(oi + ed.to, oj + ed.to)] += q * td.dyy;
            }
        }
    }
    Some(Interval { value, grad, hess })
}

struct Reduced<'a> {
    space: &'a ConfigSpace,
    dt: f64,
    first: &'a [f64],
    last: &'a [f64],
    knots: usize,
}

impl Reduced<'_> {
    fn dim(&self) -> usize {
        (self.knots - 1) * (self.space.len() - 1)
    }

    /// Knot densities from the free coordinates; state 0 absorbs the mass.
    fn densities(&self, z: &DVector<f64>) -> Vec<Vec<f64>> {
        let s = self.space.len();
        let pi = self.space.pi();
        let mut out = vec![self.first.to_vec()];
        for j in 0..self.knots - 1 {
            let mut r = vec![0.0; s];
            let mut mass = 0.0;
            for n in 1..s {
                r[n] = z[j * (s - 1) + n - 1];
                mass += pi[n] * r[n];
            }
            r[0] = (1.0 - mass) / pi[0];
            out.push(r);
        }
        out.push(self.last.to_vec());
        out
    }

    fn value(&self, z: &DVector<f64>, eps: f64) -> Option<f64> {
        let rho = self.densities(z);
        let mut total = 0.0;
        for k in 0..self.knots {
            total += interval_value(self.space, self.dt, &rho[k], &rho[k + 1], eps)?;
        }
        Some(total)
    }

    fn newton_system(&self, z: &DVector<f64>, eps: f64) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let s = self.space.len();
        let pi = self.space.pi();
        let rho = self.densities(z);
        let nr = (self.knots - 1) * s;
        let mut g = DVector::<f64>::zeros(nr);
        let mut h = DMatrix::<f64>::zeros(nr, nr);
        let mut total = 0.0;
        for k in 0..self.knots {
            let t = interval_term(self.space, self.dt, &rho[k], &rho[k + 1], eps)?;
            total += t.value;
            let slots = [k.checked_sub(1), (k + 1 < self.knots).then_some(k)];
            for (bi, si) in slots.iter().enumerate() {
                let Some(si) = si else { continue };
                for n in 0..s {
                    g[si * s + n] += t.grad[bi * s + n];
                }
                for (bj, sj) in slots.iter().enumerate() {
                    let Some(sj) = sj else { continue };
                    for a in 0..s {
                        for b in 0..s {
                            h[(si * s + a, sj * s + b)] += t.hess[(bi * s + a, bj * s + b)];
                        }
                    }
                }
            }
        }
        // ρ_j = const + T z_j with T[0, n−1] = −π_n/π_0 and T[n, n−1] = 1.
        let nz = self.dim();
        let mut tm = DMatrix::<f64>::zeros(nr, nz);
        for j in 0..self.knots - 1 {
            for n in 1..s {
                tm[(j * s + n, j * (s - 1) + n - 1)] = 1.0;
                tm[(j * s, j * (s - 1) + n - 1)] = -pi[n] / pi[0];
            }
        }
        let gz = tm.tr_mul(&g);
        let hz = tm.tr_mul(&(h * &tm));
        Some((total, gz, hz))
    }
}

fn interval_value(space: &ConfigSpace, dt: f64, r0: &[f64], r1: &[f64], eps: f64) -> Option<f64> {
    let s = space.len();
    let pi = space.pi();
    let mut lap = DMatrix::<f64>::from_element(s, s, 1.0 / s as f64);
    for (e, ed) in space.edges().iter().enumerate() {
        let x = 0.5 * (r0[ed.from] + r1[ed.from]) + eps;
        let y = 0.5 * (r0[ed.to] + r1[ed.to]) + eps;
        if !(x > 0.0 && y > 0.0) {
            return None;
        }
        let c = space.edge_weight(e) * theta_unchecked(x, y);
        lap[(ed.from, ed.from)] += c;
        lap[(ed.to, ed.to)] += c;
        lap[(ed.from, ed.to)] -= c;
        lap[(ed.to, ed.from)] -= c;
    }
    let delta = DVector::from_iterator(s, (0..s).map(|n| pi[n] * (r1[n] - r0[n])));
    let phi = lap.cholesky()?.solve(&delta);
    Some(delta.dot(&phi) / dt)
}

fn minimize(red: &Reduced, mut z: DVector<f64>) -> Option<f64> {
    let mut eps = 1e-2;
    let mut value = red.value(&z, eps)?;
    loop {
        for _ in 0..200 {
            let (f, g, h) = red.newton_system(&z, eps)?;
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    let shift = 1e-12 * h.diagonal().amax().max(1e-300);
                    let mut hr = h;
                    for i in 0..hr.nrows() {
                        hr[(i, i)] += shift;
                    }
                    hr.lu().solve(&(-&g))?
                }
            };
            let slope = g.dot(&step);
            if !(-slope > 1e-15 * f.abs() + 1e-300) {
                value = f;
                break;
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &z + &step * t;
                if let Some(fc) = red.value(&cand, eps) {
                    if fc <= f + 1e-4 * t * slope {
                        z = cand;
                        value = fc;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                value = f;
                break;
            }
        }
        if eps <= 1e-12 {
            return Some(value);
        }
        eps = (eps * 0.1).max(1e-12);
        value = red.value(&z, eps)?;
    }
}

/// Optimal discrete action by direct minimization over the densities.
///
/// Three starting points are used: the linear interpolation and two random
/// perturbations of it. The smallest value is returned.
pub fn brute_force_w0(problem: &TransportProblem) -> Result<BruteForce> {
    let space = problem.p0.space();
    let (s, k) = (space.len(), problem.k);
    if s * k > BRUTE_FORCE_CAP {
        return Err(Error::Sizing {
            what: "reference optimizer variables",
            requested: (s * k) as f64,
            cap: BRUTE_FORCE_CAP as f64,
        });
    }
    let (r0, r1) = (problem.p0.rho(), problem.p1.rho());
    let red = Reduced {
        space,
        dt: 1.0 / k as f64,
        first: r0,
        last: r1,
        knots: k,
    };
    if r0 == r1 {
        return Ok(BruteForce {
            value: 0.0,
            restarts: vec![0.0],
            spread: 0.0,
        });
    }
    if k == 1 || s == 1 {
        let v = red
            .value(&DVector::zeros(0), 1e-12)
            .ok_or_else(|| Error::NonConvergence("reference optimizer left the domain".into()))?;
        return Ok(BruteForce {
            value: v,
            restarts: vec![v],
            spread: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut restarts = Vec::new();
    for attempt in 0..3 {
        let mut z = DVector::<f64>::zeros(red.dim());
        let pi = space.pi();
        for j in 1..k {
            let t = j as f64 / k as f64;
            let mut r: Vec<f64> = (0..s).map(|n| (1.0 - t) * r0[n] + t * r1[n]).collect();
            if attempt > 0 {
                let noise: Vec<f64> = (0..s).map(|_| rng.random_range(0.5..1.5)).collect();
                let mass: f64 = noise.iter().zip(pi).map(|(a, b)| a * b).sum();
                for (x, u) in r.iter_mut().zip(&noise) {
                    *x = 0.7 * *x + 0.3 * u / mass;
                }
            }
            for n in 1..s {
                z[(j - 1) * (s - 1) + n - 1] = r[n];
            }
        }
        let v = minimize(&red, z)
            .ok_or_else(|| Error::NonConvergence("reference optimizer left the domain".into()))?;
        restarts.push(v);
    }
    let value = restarts.iter().cloned().fold(f64::INFINITY, f64::min);
    let top = restarts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (top - value) / value.abs().max(1e-300);
    Ok(BruteForce {
        value,
        restarts,
        spread: if value == top { 0.0 } else { spread },
    })
}
