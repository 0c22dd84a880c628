//! Interior-point Newton method on the discrete transport problem.
//!
//! Unknowns are the interior knot densities, the interval velocities and one
//! multiplier per (interval, state) for the continuity equation. Interior
//! densities carry a logarithmic barrier `−μ·Δt·Σ π(n) log ρ_k(n)` that is
//! driven to zero. The velocities enter each interval through a diagonal
//! block, so they are eliminated and the remaining system in
//! `(λ_0, ρ_1, λ_1, ρ_2, …, λ_{K−1})` is block tridiagonal.

use nalgebra::{DMatrix, DVector};

use super::blocktri::BlockTridiagonal;
use crate::configspace::ConfigSpace;
use crate::mobility::{theta_derivs, theta_unchecked};

/// Densities at all knots and velocities on all intervals.
#[derive(Clone, Debug)]
pub(crate) struct Iterate {
    pub rho: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NewtonOptions {
    pub max_iters: usize,
    /// Final barrier weight relative to the action scale.
    pub mu_final: f64,
    pub mu_factor: f64,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct NewtonReport {
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    pub mu: f64,
}

fn intervals(it: &Iterate) -> usize {
    it.w.len()
}

/// Action with exact θ; `None` where a velocity sits on an edge of zero mobility.
pub(crate) fn action_of(space: &ConfigSpace, dt: f64, it: &Iterate) -> Option<f64> {
    let mut total = 0.0;
    for k in 0..intervals(it) {
        let (r0, r1) = (&it.rho[k], &it.rho[k + 1]);
        for (e, ed) in space.edges().iter().enumerate() {
            let w = it.w[k][e];
            if w == 0.0 {
                continue;
            }
            let x = 0.5 * (r0[ed.from] + r1[ed.from]);
            let y = 0.5 * (r0[ed.to] + r1[ed.to]);
            let th = theta_unchecked(x, y);
            if !(th > 0.0) {
                return None;
            }
            total += dt * space.edge_weight(e) * w * w / th;
        }
    }
    Some(total)
}

fn barrier(space: &ConfigSpace, dt: f64, it: &Iterate, mu: f64) -> Option<f64> {
    let k = intervals(it);
    let mut total = 0.0;
    for rho in &it.rho[1..k] {
        for (r, p) in rho.iter().zip(space.pi()) {
            if !(*r > 0.0) {
                return None;
            }
            total -= mu * dt * p * r.ln();
        }
    }
    Some(total)
}

fn merit(space: &ConfigSpace, dt: f64, it: &Iterate, mu: f64) -> Option<f64> {
    Some(action_of(space, dt, it)? + barrier(space, dt, it, mu)?)
}

/// Velocity of least action between two knot densities: the flux is a
/// mobility-weighted gradient `J = q·θ·(φ_a − φ_b)` with `φ` solving the
/// weighted graph Laplacian against the density change.
pub(crate) fn least_action_velocity(
    space: &ConfigSpace,
    dt: f64,
    r0: &[f64],
    r1: &[f64],
) -> Option<Vec<f64>> {
    let s = space.len();
    let mut lap = DMatrix::<f64>::from_element(s, s, 1.0 / s as f64);
    let mut cond = Vec::with_capacity(space.edge_count());
    for (e, ed) in space.edges().iter().enumerate() {
        let x = 0.5 * (r0[ed.from] + r1[ed.from]);
        let y = 0.5 * (r0[ed.to] + r1[ed.to]);
        let th = theta_unchecked(x.max(0.0), y.max(0.0));
        let c = space.edge_weight(e) * th;
        cond.push(th);
        lap[(ed.from, ed.from)] += c;
        lap[(ed.to, ed.to)] += c;
        lap[(ed.from, ed.to)] -= c;
        lap[(ed.to, ed.from)] -= c;
    }
    let rhs = DVector::from_iterator(s, (0..s).map(|n| -(r1[n] - r0[n]) * space.pi()[n] / dt));
    let phi = lap.lu().solve(&rhs)?;
    let w: Vec<f64> = space
        .edges()
        .iter()
        .zip(&cond)
        .map(|(ed, th)| th * (phi[ed.from] - phi[ed.to]))
        .collect();
    w.iter().all(|x| x.is_finite()).then_some(w)
}

struct Direction {
    drho: Vec<Vec<f64>>,
    dw: Vec<Vec<f64>>,
    slope: f64,
}

fn newton_direction(space: &ConfigSpace, dt: f64, it: &Iterate, mu: f64) -> Option<Direction> {
    let s = space.len();
    let kk = intervals(it);
    let pi = space.pi();
    let mut sizes = vec![2 * s; kk - 1];
    sizes.push(s);
    let mut sys = BlockTridiagonal::new(&sizes);
    let mut rhs = vec![0.0; sys.dim()];
    let lam = |k: usize, n: usize| k * 2 * s + n;
    let rho_idx = |j: usize, n: usize| (j >= 1 && j < kk).then(|| (j - 1) * 2 * s + s + n);

    for k in 0..kk {
        let (r0, r1) = (&it.rho[k], &it.rho[k + 1]);
        for (e, ed) in space.edges().iter().enumerate() {
            let (a, b) = (ed.from, ed.to);
            let x = 0.5 * (r0[a] + r1[a]);
            let y = 0.5 * (r0[b] + r1[b]);
            if !(x > 0.0 && y > 0.0) {
                continue;
            }
            let td = theta_derivs(x, y);
            let th = td.value;
            let q = space.edge_weight(e);
            let c = dt * q;
            let sw = it.w[k][e] / th;
            let mxx = -c * sw * sw * td.dxx;
            let mxy = -c * sw * sw * td.dxy;
            let myy = -c * sw * sw * td.dyy;
            let ia = [rho_idx(k, a), rho_idx(k + 1, a)];
            let ib = [rho_idx(k, b), rho_idx(k + 1, b)];
            for i in ia.iter().flatten() {
                for j in ia.iter().flatten() {
                    sys.add(*i, *j, 0.25 * mxx);
                }
                for j in ib.iter().flatten() {
                    sys.add(*i, *j, 0.25 * mxy);
                    sys.add(*j, *i, 0.25 * mxy);
                }
            }
            for i in ib.iter().flatten() {
                for j in ib.iter().flatten() {
                    sys.add(*i, *j, 0.25 * myy);
                }
            }
            let (la, lb) = (lam(k, a), lam(k, b));
            let gx = sw * td.dx * q;
            let gy = sw * td.dy * q;
            for i in ia.iter().flatten() {
                for (l, v) in [(la, 0.5 * gx), (lb, -0.5 * gx)] {
                    sys.add(*i, l, v);
                    sys.add(l, *i, v);
                }
                rhs[*i] -= 0.5 * c * sw * sw * td.dx;
            }
            for i in ib.iter().flatten() {
                for (l, v) in [(la, 0.5 * gy), (lb, -0.5 * gy)] {
                    sys.add(*i, l, v);
                    sys.add(l, *i, v);
                }
                rhs[*i] -= 0.5 * c * sw * sw * td.dy;
            }
            let v = q * th / (2.0 * dt);
            sys.add(la, la, -v);
            sys.add(lb, lb, -v);
            sys.add(la, lb, v);
            sys.add(lb, la, v);
        }
        for n in 0..s {
            let l = lam(k, n);
            if let Some(i) = rho_idx(k, n) {
                sys.add(i, l, -pi[n] / dt);
                sys.add(l, i, -pi[n] / dt);
            }
            if let Some(i) = rho_idx(k + 1, n) {
                sys.add(i, l, pi[n] / dt);
                sys.add(l, i, pi[n] / dt);
            }
            rhs[l] = -pi[n] * (r1[n] - r0[n]) / dt;
        }
    }
    for j in 1..kk {
        for n in 0..s {
            let i = rho_idx(j, n).expect("interior");
            let r = it.rho[j][n];
            sys.add(i, i, mu * dt * pi[n] / (r * r));
            rhs[i] += mu * dt * pi[n] / r;
        }
    }
    // The multipliers are defined up to a common constant.
    sys.pin(lam(0, 0));
    rhs[lam(0, 0)] = 0.0;
    let sol = sys.solve(&rhs)?;

    let mut drho = vec![vec![0.0; s]; kk + 1];
    for (j, d) in drho.iter_mut().enumerate() {
        for (n, v) in d.iter_mut().enumerate() {
            if let Some(i) = rho_idx(j, n) {
                *v = sol[i];
            }
        }
    }
    let mut slope = 0.0;
    for j in 1..kk {
        for n in 0..s {
            slope -= mu * dt * pi[n] / it.rho[j][n] * drho[j][n];
        }
    }
    let mut dw = vec![vec![0.0; space.edge_count()]; kk];
    for k in 0..kk {
        let (r0, r1) = (&it.rho[k], &it.rho[k + 1]);
        for (e, ed) in space.edges().iter().enumerate() {
            let (a, b) = (ed.from, ed.to);
            let w = it.w[k][e];
            let x = 0.5 * (r0[a] + r1[a]);
            let y = 0.5 * (r0[b] + r1[b]);
            if !(x > 0.0 && y > 0.0) {
                dw[k][e] = -w;
                continue;
            }
            let td = theta_derivs(x, y);
            let th = td.value;
            let c = dt * space.edge_weight(e);
            let sw = w / th;
            let dx = 0.5 * (drho[k][a] + drho[k + 1][a]);
            let dy = 0.5 * (drho[k][b] + drho[k + 1][b]);
            let step =
                -w + sw * (td.dx * dx + td.dy * dy) - th / (2.0 * dt) * (sol[lam(k, a)] - sol[lam(k, b)]);
            dw[k][e] = step;
            slope += -c * sw * sw * (td.dx * dx + td.dy * dy) + 2.0 * c * sw * step;
        }
    }
    Some(Direction { drho, dw, slope })
}

fn stepped(it: &Iterate, d: &Direction, t: f64) -> Iterate {
    let kk = intervals(it);
    let mut out = it.clone();
    for j in 1..kk {
        for (r, dr) in out.rho[j].iter_mut().zip(&d.drho[j]) {
            *r += t * dr;
        }
    }
    for (w, dw) in out.w.iter_mut().zip(&d.dw) {
        for (a, b) in w.iter_mut().zip(dw) {
            *a += t * b;
        }
    }
    out
}

/// Runs the barrier continuation from a feasible iterate with positive
/// interior densities.
pub(crate) fn barrier_newton(
    space: &ConfigSpace,
    dt: f64,
    it: &mut Iterate,
    opts: &NewtonOptions,
) -> NewtonReport {
    let kk = intervals(it);
    let mut report = NewtonReport::default();
    let scale = action_of(space, dt, it).unwrap_or(1.0).max(1e-12);
    let mut mu = if kk > 1 { 1e-3 * scale } else { 0.0 };
    let mu_end = opts.mu_final * scale;
    loop {
        let mut centered = false;
        while report.iterations < opts.max_iters {
            report.iterations += 1;
            let Some(d) = newton_direction(space, dt, it, mu) else {
                break;
            };
            let f0 = merit(space, dt, it, mu).unwrap_or(f64::INFINITY);
            let decrement = -d.slope;
            if !(decrement > 1e-3 * mu + 1e-15 * f0.abs().max(scale)) {
                centered = true;
                break;
            }
            let mut t_max: f64 = 1.0;
            for j in 1..kk {
                for (r, dr) in it.rho[j].iter().zip(&d.drho[j]) {
                    if *dr < 0.0 {
                        t_max = t_max.min(0.995 * r / -dr);
                    }
                }
            }
            let mut t = t_max;
            let mut accepted = None;
            for _ in 0..60 {
                let cand = stepped(it, &d, t);
                if let Some(f) = merit(space, dt, &cand, mu) {
                    if f <= f0 + 1e-4 * t * d.slope || (f - f0).abs() <= 1e-15 * f0.abs() {
                        accepted = Some(cand);
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some(c) => *it = c,
                None => {
                    // No descent is measurable at double precision.
                    centered = true;
                    break;
                }
            }
        }
        if let Some(a) = action_of(space, dt, it) {
            report.history.push(a);
        }
        report.mu = mu;
        if !centered {
            return report;
        }
        if mu <= mu_end {
            report.converged = true;
            return report;
        }
        mu = (mu * opts.mu_factor).max(mu_end);
    }
}
