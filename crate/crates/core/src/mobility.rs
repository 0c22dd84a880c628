//! Logarithmic mean, the mobility `α`, the Lagrange functional and the action.

use std::sync::Arc;

use crate::configspace::{restrict, state_permutation, ConfigSpace, LatticeWindow};
use crate::dynamics::CEPath;
use crate::error::{Error, Result};
use crate::measures::DensityMeasure;

/// Taylor coefficients of `u / log(1+u)` at `u = 0`.
const G_SERIES: [f64; 11] = [
    1.0,
    1.0 / 2.0,
    -1.0 / 12.0,
    1.0 / 24.0,
    -19.0 / 720.0,
    3.0 / 160.0,
    -863.0 / 60480.0,
    275.0 / 24192.0,
    -33953.0 / 3628800.0,
    8183.0 / 1036800.0,
    -3250433.0 / 479001600.0,
];

const SERIES_RADIUS: f64 = 0.05;

/// `g(r) = (r−1)/log r` with its first two derivatives, for `r > 0`.
fn g_derivs(r: f64) -> (f64, f64, f64) {
    let u = r - 1.0;
    if u.abs() < SERIES_RADIUS {
        let (mut g, mut g1, mut g2) = (0.0, 0.0, 0.0);
        for k in (0..G_SERIES.len()).rev() {
            g = g * u + G_SERIES[k];
            if k >= 1 {
                g1 = g1 * u + k as f64 * G_SERIES[k];
            }
            if k >= 2 {
                g2 = g2 * u + (k * (k - 1)) as f64 * G_SERIES[k];
            }
        }
        return (g, g1, g2);
    }
    let l = r.ln();
    let g = u / l;
    let a = l - u / r;
    let g1 = a / (l * l);
    let g2 = ((1.0 / r - 1.0 / (r * r)) * l - 2.0 * a / r) / (l * l * l);
    (g, g1, g2)
}

pub(crate) fn theta_unchecked(x: f64, y: f64) -> f64 {
    if x <= 0.0 || y <= 0.0 {
        return 0.0;
    }
    if x == y {
        return x;
    }
    let (lo, hi) = if x < y { (x, y) } else { (y, x) };
    hi * g_derivs(lo / hi).0
}

/// Logarithmic mean `θ(x, y) = (y − x)/(log y − log x)`, with `θ(x, x) = x`
/// and `θ = 0` as soon as one argument vanishes.
pub fn log_mean(x: f64, y: f64) -> Result<f64> {
    if x < 0.0 || y < 0.0 || x.is_nan() || y.is_nan() {
        return Err(Error::Domain(format!(
            "log_mean({x}, {y}) needs nonnegative arguments"
        )));
    }
    Ok(theta_unchecked(x, y))
}

/// Value, gradient and Hessian of the logarithmic mean at `x, y > 0`.
#[derive(Clone, Copy, Debug)]
pub struct ThetaDerivs {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

pub fn theta_derivs(x: f64, y: f64) -> ThetaDerivs {
    debug_assert!(x > 0.0 && y > 0.0);
    // θ(x, y) = s·g(t/s) with s the larger argument, so that t/s ≤ 1.
    let swap = x < y;
    let (s, t) = if swap { (y, x) } else { (x, y) };
    let r = t / s;
    let (g, g1, g2) = g_derivs(r);
    let d_t = g1;
    let d_s = g - r * g1;
    let d_tt = g2 / s;
    let d_st = -r * g2 / s;
    let d_ss = r * r * g2 / s;
    if swap {
        ThetaDerivs {
            value: s * g,
            dx: d_t,
            dy: d_s,
            dxx: d_tt,
            dxy: d_st,
            dyy: d_ss,
        }
    } else {
        ThetaDerivs {
            value: s * g,
            dx: d_s,
            dy: d_t,
            dxx: d_ss,
            dxy: d_st,
            dyy: d_tt,
        }
    }
}

/// Smoothed logarithmic mean `θ_ε(x, y) = θ(x+ε, y+ε)`.
pub fn log_mean_smoothed(x: f64, y: f64, eps: f64) -> f64 {
    theta_unchecked(x + eps, y + eps)
}

/// Mobility `α(x, y, w) = w²/θ(x, y)` with `0/0 = 0`.
pub fn mobility_alpha(x: f64, y: f64, w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    let th = theta_unchecked(x.max(0.0), y.max(0.0));
    if th == 0.0 {
        f64::INFINITY
    } else {
        w * w / th
    }
}

/// Velocity density `w(n, j)`, one entry per edge of the space.
#[derive(Clone, Debug)]
pub struct VelocityDensity {
    space: Arc<ConfigSpace>,
    w: Vec<f64>,
}

impl VelocityDensity {
    pub fn new(space: Arc<ConfigSpace>, w: Vec<f64>) -> Result<Self> {
        if w.len() != space.edge_count() {
            return Err(Error::InvalidInput(format!(
                "velocity has {} entries for {} edges",
                w.len(),
                space.edge_count()
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("velocities must be finite".into()));
        }
        Ok(Self { space, w })
    }

    pub fn zero(space: Arc<ConfigSpace>) -> Self {
        let w = vec![0.0; space.edge_count()];
        Self { space, w }
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn space_arc(&self) -> &Arc<ConfigSpace> {
        &self.space
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }

    /// Value at `(state, site)`; zero on edges leaving the truncated set.
    pub fn at(&self, state: usize, site: usize) -> f64 {
        self.space.edge_id(state, site).map_or(0.0, |e| self.w[e])
    }

    /// Flux `w·π(n)·v_j` per edge.
    pub fn flux(&self) -> Vec<f64> {
        self.w
            .iter()
            .enumerate()
            .map(|(e, w)| w * self.space.edge_weight(e))
            .collect()
    }
}

/// Lagrange functional on raw vectors over one space.
pub fn lagrangian_raw(space: &ConfigSpace, rho: &[f64], w: &[f64]) -> f64 {
    space
        .edges()
        .iter()
        .enumerate()
        .map(|(e, ed)| {
            if w[e] == 0.0 {
                0.0
            } else {
                mobility_alpha(rho[ed.from], rho[ed.to], w[e]) * space.edge_weight(e)
            }
        })
        .sum()
}

/// `𝓛(P, V) = Σ_{n,j} α(ρ(n), ρ(n+e_j), w(n,j))·π(n)·v_j`.
pub fn lagrangian(p: &DensityMeasure, v: &VelocityDensity) -> Result<f64> {
    if p.space() != v.space() {
        return Err(Error::WindowMismatch(
            "measure and velocity live on different spaces".into(),
        ));
    }
    Ok(lagrangian_raw(p.space(), p.rho(), v.w()))
}

/// Discrete action `Σ_k Δt_k 𝓛(ρ_{k+1/2}, w_{k+1/2})` with knot-averaged densities.
pub fn action(path: &CEPath) -> f64 {
    interval_actions(path).iter().sum()
}

/// Contribution of each time interval to [`action`].
pub fn interval_actions(path: &CEPath) -> Vec<f64> {
    let space = path.space();
    let mut mid = vec![0.0; space.len()];
    (0..path.intervals())
        .map(|k| {
            let (a, b) = (&path.densities()[k], &path.densities()[k + 1]);
            for ((m, x), y) in mid.iter_mut().zip(a).zip(b) {
                *m = 0.5 * (x + y);
            }
            let dt = path.knots()[k + 1] - path.knots()[k];
            dt * lagrangian_raw(space, &mid, &path.velocities()[k])
        })
        .collect()
}

/// Velocity marginal on a sub-window: the flux is summed over the
/// complementary occupancies and divided by the sub-window reference.
pub fn restrict_velocity(
    p: &DensityMeasure,
    v: &VelocityDensity,
    sub: &LatticeWindow,
) -> Result<(DensityMeasure, VelocityDensity)> {
    let pr = restrict(p, sub)?;
    let big = v.space();
    let small = pr.space_arc().clone();
    let map: Vec<usize> = (0..sub.cell_count())
        .map(|j| {
            big.window()
                .site_of(&sub.cell_coord(j))
                .expect("checked by restrict")
        })
        .collect();
    let mut inverse = vec![usize::MAX; big.sites()];
    for (jj, &j) in map.iter().enumerate() {
        inverse[j] = jj;
    }
    let flux = v.flux();
    let mut sub_flux = vec![0.0; small.edge_count()];
    let mut buf = vec![0u16; map.len()];
    for (e, ed) in big.edges().iter().enumerate() {
        let jj = inverse[ed.site];
        if jj == usize::MAX || flux[e] == 0.0 {
            continue;
        }
        let st = big.state(ed.from);
        for (b, &j) in buf.iter_mut().zip(&map) {
            *b = st[j];
        }
        let n1 = small.index_of(&buf).expect("marginal state exists");
        let se = small.edge_id(n1, jj).expect("sub-space edge exists");
        sub_flux[se] += flux[e];
    }
    let w = sub_flux
        .iter()
        .enumerate()
        .map(|(e, f)| f / small.edge_weight(e))
        .collect();
    Ok((pr, VelocityDensity::new(small, w)?))
}

/// Composite velocity of a product: each factor's flux times the other
/// factor's law, expressed on the product space `space`.
pub fn product_velocity(
    space: &Arc<ConfigSpace>,
    p: &DensityMeasure,
    vp: &VelocityDensity,
    q: &DensityMeasure,
    vq: &VelocityDensity,
) -> Result<VelocityDensity> {
    let win = space.window();
    let ma: Vec<usize> = (0..p.space().sites())
        .map(|j| win.site_of(&p.space().window().cell_coord(j)))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::WindowMismatch("first factor outside product window".into()))?;
    let mb: Vec<usize> = (0..q.space().sites())
        .map(|j| win.site_of(&q.space().window().cell_coord(j)))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::WindowMismatch("second factor outside product window".into()))?;
    let (fa, fb) = (vp.flux(), vq.flux());
    let (la, lb) = (p.law(), q.law());
    let mut w = vec![0.0; space.edge_count()];
    let mut owner = vec![(0u8, 0usize); space.sites()];
    for (j, &g) in ma.iter().enumerate() {
        owner[g] = (0, j);
    }
    for (j, &g) in mb.iter().enumerate() {
        owner[g] = (1, j);
    }
    let (mut na, mut nb) = (vec![0u16; ma.len()], vec![0u16; mb.len()]);
    for (e, ed) in space.edges().iter().enumerate() {
        let st = space.state(ed.from);
        for (x, &g) in na.iter_mut().zip(&ma) {
            *x = st[g];
        }
        for (x, &g) in nb.iter_mut().zip(&mb) {
            *x = st[g];
        }
        let (ia, ib) = match (p.space().index_of(&na), q.space().index_of(&nb)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let (side, j) = owner[ed.site];
        let flux = if side == 0 {
            p.space().edge_id(ia, j).map_or(0.0, |fe| fa[fe] * lb[ib])
        } else {
            q.space().edge_id(ib, j).map_or(0.0, |fe| fb[fe] * la[ia])
        };
        w[e] = flux / space.edge_weight(e);
    }
    VelocityDensity::new(space.clone(), w)
}

/// Translates a velocity field along with its window.
pub fn shift_velocity(v: &VelocityDensity, z: &[i64]) -> Result<VelocityDensity> {
    let space = v.space().translated(z)?;
    VelocityDensity::new(space, v.w().to_vec())
}

/// Relabels the sites of a velocity field on a space whose reference is
/// invariant under the permutation.
pub fn permute_velocity(v: &VelocityDensity, site_perm: &[usize]) -> Result<VelocityDensity> {
    let sp = v.space();
    let perm = state_permutation(sp, site_perm);
    let mut w = vec![0.0; sp.edge_count()];
    for (e, ed) in sp.edges().iter().enumerate() {
        let t = sp
            .edge_id(perm[ed.from], site_perm[ed.site])
            .expect("permutation preserves totals");
        w[t] = v.w()[e];
    }
    VelocityDensity::new(v.space_arc().clone(), w)
}

/// Per-volume action values of a window family and their supremum.
#[derive(Clone, Debug)]
pub struct SpecificAction {
    pub values: Vec<f64>,
    pub sup: f64,
}

/// `a_n = A(path_n)/vol(Λ_n)`.
///
/// Consecutive paths whose windows are nested must be restrictions of one
/// another: the knot densities of the larger path, restricted to the smaller
/// window, have to reproduce the smaller path.
pub fn specific_action(paths: &[CEPath]) -> Result<SpecificAction> {
    for pair in paths.windows(2) {
        let (small, big) = (&pair[0], &pair[1]);
        let (ws, wb) = (small.space().window(), big.space().window());
        if !wb.contains(ws) {
            continue;
        }
        if small.knots() != big.knots() {
            return Err(Error::InconsistentMarginals("time grids differ".into()));
        }
        for (rs, rb) in small.densities().iter().zip(big.densities()) {
            let pb = DensityMeasure::new(big.space_arc().clone(), rb.clone())?;
            let r = restrict(&pb, ws)?;
            let dev = r
                .rho()
                .iter()
                .zip(rs)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dev > 1e-8 {
                return Err(Error::InconsistentMarginals(format!(
                    "restriction of {wb} to {ws} deviates by {dev:.3e}"
                )));
            }
        }
    }
    let values: Vec<f64> = paths
        .iter()
        .map(|p| action(p) / p.space().window().volume())
        .collect();
    let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(SpecificAction { values, sup })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta_ref(x: f64, y: f64) -> f64 {
        (y - x) / ((y - x) / x).ln_1p()
    }

    #[test]
    fn scalar_values() {
        assert_eq!(log_mean(2.0, 2.0).unwrap(), 2.0);
        assert_eq!(log_mean(0.0, 5.0).unwrap(), 0.0);
        assert!((log_mean(4.0, 1.0).unwrap() - 3.0 / 4f64.ln()).abs() < 1e-15);
        assert!((log_mean(4.0, 1.0).unwrap() - 2.164042).abs() < 1e-6);
        assert!(log_mean(-1.0, 1.0).is_err());
        assert_eq!(mobility_alpha(1.0, 1.0, 2.0), 4.0);
        assert_eq!(mobility_alpha(0.0, 0.0, 0.0), 0.0);
        assert_eq!(mobility_alpha(0.0, 3.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn series_branch_matches_closed_form() {
        for &(x, y) in &[(1.0, 1.04), (1.0, 0.97), (2.0, 2.001), (3.0, 2.9)] {
            let a = theta_unchecked(x, y);
            let b = theta_ref(x, y);
            assert!((a - b).abs() < 1e-14 * b, "{x} {y}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &(x, y) in &[
            (1.0, 2.0),
            (0.3, 0.31),
            (5.0, 0.01),
            (1.0, 1.0),
            (2.0, 2.0 + 1e-9),
        ] {
            let d = theta_derivs(x, y);
            let h = 1e-5 * x.min(y);
            let fx = |a: f64, b: f64| theta_unchecked(a, b);
            let dx = (fx(x + h, y) - fx(x - h, y)) / (2.0 * h);
            let dy = (fx(x, y + h) - fx(x, y - h)) / (2.0 * h);
            let dxx = (theta_derivs(x + h, y).dx - theta_derivs(x - h, y).dx) / (2.0 * h);
            let dxy = (theta_derivs(x, y + h).dx - theta_derivs(x, y - h).dx) / (2.0 * h);
            let dyy = (theta_derivs(x, y + h).dy - theta_derivs(x, y - h).dy) / (2.0 * h);
            assert!((d.dx - dx).abs() < 1e-7, "{x} {y}: {} {}", d.dx, dx);
            assert!((d.dy - dy).abs() < 1e-7);
            assert!(
                (d.dxx - dxx).abs() < 1e-6 * (1.0 + dxx.abs()),
                "{} {}",
                d.dxx,
                dxx
            );
            assert!((d.dxy - dxy).abs() < 1e-6 * (1.0 + dxy.abs()));
            assert!((d.dyy - dyy).abs() < 1e-6 * (1.0 + dyy.abs()));
        }
    }
}
