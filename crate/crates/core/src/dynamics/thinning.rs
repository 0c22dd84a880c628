//! Independent thinning, superposition and the thinning interpolation.
//!
//! The thinning parameter is the retention probability of each point.

use crate::configspace::ConfigSpace;
use crate::error::{Error, Result};
use crate::measures::{Clipped, DensityMeasure};
use crate::mobility::VelocityDensity;

/// Default bound on the mass a superposition may clip at `n_max`.
pub const DEFAULT_CLIP_BOUND: f64 = 1e-6;

/// Default cap on `S²` for [`thinning_velocity`].
pub const DEFAULT_PAIR_CAP: usize = 10_000_000;

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![1.0]];
    for i in 1..=n {
        let prev = &c[i - 1];
        let mut row = vec![1.0; i + 1];
        for k in 1..i {
            row[k] = prev[k - 1] + prev[k];
        }
        c.push(row);
    }
    c
}

/// Law of the retained sub-configuration of state `i` when every point is kept
/// with probability `keep`, as `(state index, probability)` pairs.
fn thinned_states(space: &ConfigSpace, binom: &[Vec<f64>], i: usize, keep: f64) -> Vec<(usize, f64)> {
    let n = space.state(i);
    let m = n.len();
    let drop = 1.0 - keep;
    let mut out = Vec::new();
    let mut sub = vec![0u16; m];
    loop {
        let mut prob = 1.0;
        for j in 0..m {
            let (nj, kj) = (n[j] as usize, sub[j] as usize);
            if nj > 0 {
                prob *= binom[nj][kj] * keep.powi(kj as i32) * drop.powi((nj - kj) as i32);
            }
        }
        if prob > 0.0 {
            out.push((space.index_of(&sub).expect("sub-configuration enumerated"), prob));
        }
        let mut a = 0;
        loop {
            if a == m {
                return out;
            }
            if sub[a] < n[a] {
                sub[a] += 1;
                break;
            }
            sub[a] = 0;
            a += 1;
        }
    }
}

fn thin_law(space: &ConfigSpace, law: &[f64], keep: f64) -> Vec<f64> {
    let binom = binomial_table(space.n_max());
    let mut out = vec![0.0; space.len()];
    for (i, &p) in law.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (t, q) in thinned_states(space, &binom, i, keep) {
            out[t] += p * q;
        }
    }
    out
}

/// Independent Bernoulli(`keep`) retention of every point.
pub fn thinning(p: &DensityMeasure, keep: f64) -> Result<DensityMeasure> {
    if !(0.0..=1.0).contains(&keep) {
        return Err(Error::InvalidInput(format!("retention {keep} outside [0, 1]")));
    }
    if keep == 1.0 {
        return Ok(p.clone());
    }
    let law = thin_law(p.space(), &p.law(), keep);
    DensityMeasure::from_law(p.space_arc().clone(), law)
}

/// Sum of two independent laws with occupancies above `n_max` clipped.
fn convolve(space: &ConfigSpace, a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let m = space.sites();
    let mut out = vec![0.0; space.len()];
    let mut clipped = 0.0;
    let mut buf = vec![0u16; m];
    for (i, &pa) in a.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (k, &pb) in b.iter().enumerate() {
            if pb == 0.0 {
                continue;
            }
            if space.total(i) + space.total(k) > space.n_max() {
                clipped += pa * pb;
                continue;
            }
            for ((x, &u), &v) in buf.iter_mut().zip(space.state(i)).zip(space.state(k)) {
                *x = u + v;
            }
            match space.index_of(&buf) {
                Some(t) => out[t] += pa * pb,
                None => clipped += pa * pb,
            }
        }
    }
    (out, clipped)
}

/// Superposition with the default clip bound.
pub fn superpose(p: &DensityMeasure, q: &DensityMeasure) -> Result<Clipped> {
    superpose_with_bound(p, q, DEFAULT_CLIP_BOUND)
}

/// Law of the sum of independent draws from `p` and `q`.
///
/// Mass landing above `n_max` is removed and the rest renormalized; the
/// removed mass is returned as the defect and must not exceed `bound`.
pub fn superpose_with_bound(p: &DensityMeasure, q: &DensityMeasure, bound: f64) -> Result<Clipped> {
    if p.space() != q.space() {
        return Err(Error::WindowMismatch(
            "superposition of laws on different spaces".into(),
        ));
    }
    let (law, defect) = convolve(p.space(), &p.law(), &q.law());
    if defect > bound {
        return Err(Error::ClipDefectExceeded { defect, bound });
    }
    Ok(Clipped {
        measure: DensityMeasure::from_law(p.space_arc().clone(), law)?,
        defect,
    })
}

/// `η_t = η₀` thinned to `1−t` plus an independent `η₁` thinned to `t`.
pub fn thinning_interpolation(p0: &DensityMeasure, p1: &DensityMeasure, t: f64) -> Result<Clipped> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("time {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(Clipped {
            measure: p0.clone(),
            defect: 0.0,
        });
    }
    if t == 1.0 {
        return Ok(Clipped {
            measure: p1.clone(),
            defect: 0.0,
        });
    }
    superpose(&thinning(p0, 1.0 - t)?, &thinning(p1, t)?)
}

/// Velocity of the thinning interpolation with the default pair cap.
pub fn thinning_velocity(p0: &DensityMeasure, p1: &DensityMeasure, t: f64) -> Result<VelocityDensity> {
    thinning_velocity_with_cap(p0, p1, t, DEFAULT_PAIR_CAP)
}

/// Velocity of the thinning interpolation at time `t ∈ (0, 1)`.
///
/// For independent `x ~ P₀`, `y ~ P₁` let `a` keep each point of `x` with
/// probability `1−t` and `b` keep each point of `y` with probability `t`.
/// The flux along `n → n+e_j` is
/// `E[y_j·P(a + b' = n)] − E[x_j·P(a' + b = n)]`, where `b'` thins `y − e_j`
/// and `a'` thins `x − e_j`: points of `y` switch on, points of `x` switch off.
pub fn thinning_velocity_with_cap(
    p0: &DensityMeasure,
    p1: &DensityMeasure,
    t: f64,
    pair_cap: usize,
) -> Result<VelocityDensity> {
    let space = p0.space();
    if space != p1.space() {
        return Err(Error::WindowMismatch("marginals live on different spaces".into()));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidInput(format!("time {t} must lie in (0, 1)")));
    }
    let s = space.len();
    if (s as f64) * (s as f64) > pair_cap as f64 {
        return Err(Error::Sizing {
            what: "thinning velocity pairs",
            requested: (s as f64) * (s as f64),
            cap: pair_cap as f64,
        });
    }
    let m = space.sites();
    let binom = binomial_table(space.n_max());
    let (l0, l1) = (p0.law(), p1.law());

    // Thinned laws of every state and of every state with one point removed.
    let thin_all = |keep: f64| -> Vec<Vec<(usize, f64)>> {
        (0..s).map(|i| thinned_states(space, &binom, i, keep)).collect()
    };
    let a_full = thin_all(1.0 - t);
    let b_full = thin_all(t);

    let mut flux = vec![0.0; space.edge_count()];
    let mut buf = vec![0u16; m];
    let mut accumulate = |left: &[(usize, f64)], right: &[(usize, f64)], j: usize, weight: f64| {
        for &(ia, pa) in left {
            for &(ib, pb) in right {
                if space.total(ia) + space.total(ib) >= space.n_max() {
                    continue;
                }
                for ((x, &u), &v) in buf.iter_mut().zip(space.state(ia)).zip(space.state(ib)) {
                    *x = u + v;
                }
                // Pairs whose sum cannot take another point at `j` carry no flux.
                let Some(e) = space.index_of(&buf).and_then(|n| space.edge_id(n, j)) else {
                    continue;
                };
                flux[e] += weight * pa * pb;
            }
        }
    };

    for x in 0..s {
        if l0[x] == 0.0 {
            continue;
        }
        for y in 0..s {
            if l1[y] == 0.0 {
                continue;
            }
            let pxy = l0[x] * l1[y];
            for j in 0..m {
                let yj = space.state(y)[j];
                if yj > 0 {
                    let y_minus = space.remove_point(y, j).expect("site occupied");
                    accumulate(&a_full[x], &b_full[y_minus], j, pxy * yj as f64);
                }
                let xj = space.state(x)[j];
                if xj > 0 {
                    let x_minus = space.remove_point(x, j).expect("site occupied");
                    accumulate(&a_full[x_minus], &b_full[y], j, -pxy * xj as f64);
                }
            }
        }
    }
    let w = flux
        .iter()
        .enumerate()
        .map(|(e, f)| f / space.edge_weight(e))
        .collect();
    VelocityDensity::new(p0.space_arc().clone(), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{build_space, LatticeWindow};
    use crate::dynamics::{ce_residual, thinning_cepath};
    use crate::measures::{intensity, total_variation};

    #[test]
    fn thinning_endpoints() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 3).unwrap();
        let p = DensityMeasure::random(sp.clone(), 4, 1.0).unwrap();
        assert!(total_variation(&thinning(&p, 1.0).unwrap(), &p) < 1e-15);
        let empty = thinning(&p, 0.0).unwrap();
        assert!((empty.law()[0] - 1.0).abs() < 1e-14);
        let half = thinning(&p, 0.3).unwrap();
        for (a, b) in intensity(&half).iter().zip(intensity(&p)) {
            assert!((a - 0.3 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn thinned_poisson_is_poisson() {
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 16).unwrap();
        let p = DensityMeasure::poisson(sp.clone(), 2.0).unwrap();
        let q = DensityMeasure::poisson(sp, 0.8).unwrap();
        assert!(total_variation(&thinning(&p, 0.4).unwrap(), &q) < 1e-8);
    }

    #[test]
    fn superposition_of_poissons() {
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 20).unwrap();
        let a = DensityMeasure::poisson(sp.clone(), 0.5).unwrap();
        let b = DensityMeasure::poisson(sp.clone(), 0.7).unwrap();
        let c = DensityMeasure::poisson(sp, 1.2).unwrap();
        let ab = superpose(&a, &b).unwrap();
        assert!(total_variation(&ab.measure, &c) < 1e-12);
        let ba = superpose(&b, &a).unwrap();
        for (x, y) in ab.measure.rho().iter().zip(ba.measure.rho()) {
            assert!((x - y).abs() <= 1e-14 * x.abs().max(1.0));
        }
    }

    #[test]
    fn clip_bound_is_enforced() {
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 2).unwrap();
        let p = DensityMeasure::point_mass(sp.clone(), 2).unwrap();
        assert!(matches!(superpose(&p, &p), Err(Error::ClipDefectExceeded { .. })));
        let empty = DensityMeasure::point_mass(sp, 0).unwrap();
        let same = superpose(&p, &empty).unwrap();
        assert_eq!(same.defect, 0.0);
        assert!(total_variation(&same.measure, &p) < 1e-15);
    }

    #[test]
    fn two_state_velocity_by_hand() {
        // P0 = δ_1, P1 = δ_0 on {0, 1}: η_t keeps the point with probability 1−t.
        // The flux 0 → 1 is −1, so w = −1/(π(0)·v) = −2.
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 1).unwrap();
        let p0 = DensityMeasure::point_mass(sp.clone(), 1).unwrap();
        let p1 = DensityMeasure::point_mass(sp, 0).unwrap();
        let v = thinning_velocity(&p0, &p1, 0.4).unwrap();
        assert!((v.w()[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn thinning_path_solves_continuity_equation() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 4).unwrap();
        // Supports with totals at most 2, so no clipping occurs.
        let small: Vec<usize> = (0..sp.len()).filter(|&i| sp.total(i) <= 2).collect();
        let mut l0 = vec![0.0; sp.len()];
        let mut l1 = vec![0.0; sp.len()];
        for (k, &i) in small.iter().enumerate() {
            l0[i] = 1.0 + k as f64;
            l1[i] = 1.0 + ((3 * k) % 5) as f64;
        }
        let p0 = DensityMeasure::from_law(sp.clone(), l0).unwrap();
        let p1 = DensityMeasure::from_law(sp, l1).unwrap();
        let r16 = ce_residual(&thinning_cepath(&p0, &p1, 16).unwrap());
        let r32 = ce_residual(&thinning_cepath(&p0, &p1, 32).unwrap());
        assert!((r16 / r32).log2() > 1.8, "{r16} {r32}");
    }
}
