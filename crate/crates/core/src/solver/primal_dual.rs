//! Diagonally preconditioned primal–dual iteration on the staggered problem.
//!
//! The primal variables are the interior knot densities and the interval
//! velocities. The action is applied to the per-edge triples
//! `(ρ̄(n), ρ̄(n+e_j), w)` through its proximal map, and the continuity
//! equation enters through a multiplier per (interval, state).

use super::newton::Iterate;
use crate::configspace::ConfigSpace;
use crate::mobility::theta_derivs;

/// Proximal map of `c·w²/θ_ε(x, y)` in the metric `diag(sx, sy, sw)`.
///
/// The velocity is eliminated in closed form, `w = sw·w₀·θ/(2c + sw·θ)`,
/// which leaves a smooth convex problem in `(x, y) ≥ 0` solved by projected
/// Newton steps.
pub(crate) fn prox_edge(c: f64, eps: f64, s: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let [sx, sy, sw] = s;
    let [x0, y0, w0] = v;
    let mut u = [x0.max(0.0), y0.max(0.0)];
    if w0 == 0.0 {
        return [u[0], u[1], 0.0];
    }
    let k0 = c * sw * w0 * w0;
    let eval = |u: [f64; 2]| -> f64 {
        let th = theta_derivs(u[0] + eps, u[1] + eps).value;
        k0 / (2.0 * c + sw * th) + 0.5 * sx * (u[0] - x0).powi(2) + 0.5 * sy * (u[1] - y0).powi(2)
    };
    for _ in 0..40 {
        let td = theta_derivs(u[0] + eps, u[1] + eps);
        let d = 2.0 * c + sw * td.value;
        let h1 = -k0 * sw / (d * d);
        let h2 = 2.0 * k0 * sw * sw / (d * d * d);
        let grad = [h1 * td.dx + sx * (u[0] - x0), h1 * td.dy + sy * (u[1] - y0)];
        let hxx = h2 * td.dx * td.dx + h1 * td.dxx + sx;
        let hxy = h2 * td.dx * td.dy + h1 * td.dxy;
        let hyy = h2 * td.dy * td.dy + h1 * td.dyy + sy;
        let free = [!(u[0] == 0.0 && grad[0] > 0.0), !(u[1] == 0.0 && grad[1] > 0.0)];
        let step = match free {
            [true, true] => {
                let det = hxx * hyy - hxy * hxy;
                [
                    -(hyy * grad[0] - hxy * grad[1]) / det,
                    -(hxx * grad[1] - hxy * grad[0]) / det,
                ]
            }
            [true, false] => [-grad[0] / hxx, 0.0],
            [false, true] => [0.0, -grad[1] / hyy],
            [false, false] => break,
        };
        if !(step[0].is_finite() && step[1].is_finite()) {
            break;
        }
        let g0 = eval(u);
        let mut t = 1.0;
        let mut next = u;
        for _ in 0..40 {
            let cand = [(u[0] + t * step[0]).max(0.0), (u[1] + t * step[1]).max(0.0)];
            if eval(cand) <= g0 {
                next = cand;
                break;
            }
            t *= 0.5;
        }
        let moved = (next[0] - u[0]).abs() + (next[1] - u[1]).abs();
        u = next;
        if moved <= 1e-14 * (1.0 + u[0] + u[1]) {
            break;
        }
    }
    let th = theta_derivs(u[0] + eps, u[1] + eps).value;
    [u[0], u[1], sw * w0 * th / (2.0 * c + sw * th)]
}

/// Runs `iters` primal–dual steps from `it`, which must have at least two
/// intervals. Endpoint densities are held fixed.
pub(crate) fn primal_dual(space: &ConfigSpace, dt: f64, it: &mut Iterate, iters: usize, eps: f64) {
    let kk = it.w.len();
    if kk < 2 || iters == 0 {
        return;
    }
    let s = space.len();
    let ne = space.edge_count();
    let pi = space.pi();
    let q = space.edge_weights();
    let interior = |j: usize| j >= 1 && j < kk;

    let mut degree = vec![0.0; s];
    for ed in space.edges() {
        degree[ed.from] += 1.0;
        degree[ed.to] += 1.0;
    }
    // Step sizes from absolute row and column sums of the linear operator.
    let tau_rho: Vec<f64> = (0..s).map(|n| 1.0 / (degree[n] + 2.0 * pi[n] / dt)).collect();
    let tau_w: Vec<f64> = q.iter().map(|qe| 1.0 / (1.0 + 2.0 * qe)).collect();
    let sigma_avg = |k: usize| {
        let cnt = interior(k) as usize + interior(k + 1) as usize;
        1.0 / (0.5 * cnt as f64)
    };
    let mut q_at = vec![0.0; s];
    for (e, ed) in space.edges().iter().enumerate() {
        q_at[ed.from] += q[e];
        q_at[ed.to] += q[e];
    }
    let sigma_ce = |k: usize, n: usize| {
        let cnt = interior(k) as usize + interior(k + 1) as usize;
        1.0 / (cnt as f64 * pi[n] / dt + q_at[n])
    };

    let mut phi = vec![[0.0f64; 3]; kk * ne];
    let mut lam = vec![0.0f64; kk * s];
    let mut bar = it.clone();
    for _ in 0..iters {
        // Dual step for the action.
        for k in 0..kk {
            let sa = sigma_avg(k);
            let (r0, r1) = (&bar.rho[k], &bar.rho[k + 1]);
            for (e, ed) in space.edges().iter().enumerate() {
                let x = 0.5 * (r0[ed.from] + r1[ed.from]);
                let y = 0.5 * (r0[ed.to] + r1[ed.to]);
                let sig = [sa, sa, 1.0];
                let d = &mut phi[k * ne + e];
                let z = [d[0] + sig[0] * x, d[1] + sig[1] * y, d[2] + sig[2] * bar.w[k][e]];
                let v = [z[0] / sig[0], z[1] / sig[1], z[2] / sig[2]];
                let p = prox_edge(dt * q[e], eps, [1.0 / sig[0], 1.0 / sig[1], 1.0 / sig[2]], v);
                for i in 0..3 {
                    d[i] = z[i] - sig[i] * p[i];
                }
            }
        }
        // Dual step for the continuity equation.
        for k in 0..kk {
            let mut div = vec![0.0; s];
            for (e, ed) in space.edges().iter().enumerate() {
                let f = q[e] * bar.w[k][e];
                div[ed.from] += f;
                div[ed.to] -= f;
            }
            for n in 0..s {
                let r = pi[n] * (bar.rho[k + 1][n] - bar.rho[k][n]) / dt + div[n];
                lam[k * s + n] += sigma_ce(k, n) * r;
            }
        }
        // Primal step.
        let prev = it.clone();
        for k in 0..kk {
            for (e, ed) in space.edges().iter().enumerate() {
                let d = phi[k * ne + e];
                let mut g = d[2] + q[e] * (lam[k * s + ed.from] - lam[k * s + ed.to]);
                if !g.is_finite() {
                    g = 0.0;
                }
                it.w[k][e] -= tau_w[e] * g;
                for j in [k, k + 1] {
                    if interior(j) {
                        it.rho[j][ed.from] -= tau_rho[ed.from] * 0.5 * d[0];
                        it.rho[j][ed.to] -= tau_rho[ed.to] * 0.5 * d[1];
                    }
                }
            }
            for n in 0..s {
                let l = lam[k * s + n] * pi[n] / dt;
                if interior(k) {
                    it.rho[k][n] += tau_rho[n] * l;
                }
                if interior(k + 1) {
                    it.rho[k + 1][n] -= tau_rho[n] * l;
                }
            }
        }
        for j in 1..kk {
            for n in 0..s {
                bar.rho[j][n] = 2.0 * it.rho[j][n] - prev.rho[j][n];
            }
        }
        for k in 0..kk {
            for e in 0..ne {
                bar.w[k][e] = 2.0 * it.w[k][e] - prev.w[k][e];
            }
        }
    }
}
