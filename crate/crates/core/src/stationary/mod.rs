//! Tiled and stationarized window families, per-volume functionals and the
//! inequality harness.
//!
//! A family is generated from one law `P` on a base window `Λ_k`. Member `r`
//! (odd) lives on the centred window `Λ_{rk}` made of `r^d` translates of the
//! base window. Tiling places independent copies of `P` on the translates;
//! stationarizing additionally averages the tiling over the `k^d` discrete
//! cell shifts and restricts to the member window.

mod checks;
mod suite;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checks::{
    check_contractivity, check_debruijn, check_evi, check_geodesic_convexity, check_hwi, check_logsobolev,
    check_talagrand, reports_to_csv, reports_to_json, specific_evi, specific_talagrand, EviOptions,
    InequalityReport, REPORT_HEADER,
};
pub use suite::{run_suite, run_suites, suite_names, Preset, SUITES};

use crate::configspace::{product, restrict, shift, ConfigSpace, LatticeWindow, SpaceOptions};
use crate::error::{Error, Result};
use crate::measures::{entropy, fisher, Clipped, DensityMeasure};
use crate::solver::{solve_w0, SolverConfig, TransportProblem};

fn check_odd(r: usize) -> Result<()> {
    if r.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "replication count must be odd, got {r}"
        )));
    }
    Ok(())
}

fn axis_vector(d: usize, a: usize, v: i64) -> Vec<i64> {
    let mut z = vec![0; d];
    z[a] = v;
    z
}

/// Combines the mass lost by successive clipping steps.
fn chain_defect(a: f64, b: f64) -> f64 {
    1.0 - (1.0 - a) * (1.0 - b)
}

/// The centred window of `r^d` translates of `base`.
pub fn tiled_window(base: &LatticeWindow, r: usize) -> Result<LatticeWindow> {
    check_odd(r)?;
    let half = ((r - 1) / 2) as i64;
    let cells: Vec<usize> = base.cells().iter().map(|c| c * r).collect();
    let origin: Vec<i64> = base
        .origin()
        .iter()
        .zip(base.cells())
        .map(|(o, &c)| o - half * c as i64)
        .collect();
    LatticeWindow::new(cells, base.h())?.with_origin(origin)
}

/// Independent copies of `P` on the `r^d` translates of its window.
///
/// The combined truncation is the sum of the copies' caps, so nothing is
/// clipped; [`tile_with_cap`] accepts a smaller cap.
pub fn tile(p: &DensityMeasure, r: usize) -> Result<Clipped> {
    tile_with_cap(p, r, None)
}

pub fn tile_with_cap(p: &DensityMeasure, r: usize, n_max: Option<usize>) -> Result<Clipped> {
    check_odd(r)?;
    let base = p.space().window().clone();
    let d = base.dim();
    let half = ((r - 1) / 2) as i64;
    let mut acc = Clipped {
        measure: p.clone(),
        defect: 0.0,
    };
    if r == 1 {
        return Ok(acc);
    }
    // One axis at a time, left to right, so every partial union is a box.
    for a in 0..d {
        let step = base.cells()[a] as i64;
        let copy = |i: i64| shift(&acc.measure, &axis_vector(d, a, i * step));
        let mut row = copy(-half)?;
        let mut defect = acc.defect;
        for i in (1 - half)..=half {
            let next = copy(i)?;
            let cap = n_max.map(|c| c.min(row.space().n_max() + next.space().n_max()));
            let joined = product(&row, &next, cap)?;
            defect = chain_defect(defect, joined.defect);
            row = joined.measure;
        }
        acc = Clipped { measure: row, defect };
    }
    Ok(acc)
}

/// Tiling of `P` averaged over the discrete cell shifts of its window and
/// restricted to `target`.
///
/// Each shifted tiling is evaluated only on `target`: the copies meeting the
/// target are restricted to their overlap and multiplied together. The result
/// uses the truncation `n_max(P)` times the largest number of overlapping
/// copies, which is exact.
pub fn stationarize_restriction(p: &DensityMeasure, target: &LatticeWindow) -> Result<Clipped> {
    let base = p.space().window().clone();
    if target.dim() != base.dim() || target.h() != base.h() {
        return Err(Error::WindowMismatch(format!(
            "{target} and {base} need equal dimension and cell side"
        )));
    }
    let d = base.dim();
    let shifts = grid(base.cells());
    let layouts: Vec<Vec<Vec<Span>>> = shifts.iter().map(|s| overlap_layout(&base, s, target)).collect();
    let max_pieces = layouts
        .iter()
        .map(|l| l.iter().map(Vec::len).product::<usize>())
        .max()
        .unwrap_or(1);
    let cap = p.space().n_max() * max_pieces;
    let site_cap = max_site_cap(p.space());
    let mut laws: Vec<DensityMeasure> = Vec::with_capacity(shifts.len());
    for layout in &layouts {
        // layout[a] lists, per axis, the copy offsets and overlap ranges.
        let combos = grid(&layout.iter().map(Vec::len).collect::<Vec<_>>());
        let mut pieces = Vec::with_capacity(combos.len());
        for idx in &combos {
            let mut z = vec![0i64; d];
            let mut origin = vec![0i64; d];
            let mut cells = vec![0usize; d];
            for a in 0..d {
                let span = layout[a][idx[a] as usize];
                z[a] = span.offset;
                origin[a] = span.lo;
                cells[a] = span.len;
            }
            let piece_window = LatticeWindow::new(cells, base.h())?.with_origin(origin)?;
            let moved = shift(p, &z)?;
            pieces.push(restrict(&moved, &piece_window)?);
        }
        let dims: Vec<usize> = layout.iter().map(Vec::len).collect();
        laws.push(embed(&combine_grid(pieces, &dims, cap)?, target, cap, site_cap)?);
    }
    let w = 1.0 / laws.len() as f64;
    let parts: Vec<(f64, &DensityMeasure)> = laws.iter().map(|m| (w, m)).collect();
    let measure = DensityMeasure::mixture(&parts)?;
    Ok(Clipped { measure, defect: 0.0 })
}

/// All multi-indices of a box with the given side lengths, last axis fastest.
fn grid(sides: &[usize]) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for &n in sides {
        out = out
            .into_iter()
            .flat_map(|pre| {
                (0..n as i64).map(move |i| {
                    let mut v = pre.clone();
                    v.push(i);
                    v
                })
            })
            .collect();
    }
    out
}

/// Along one axis: a copy's translation and its overlap `[lo, lo + len)`
/// with the target.
#[derive(Clone, Copy)]
struct Span {
    offset: i64,
    lo: i64,
    len: usize,
}

/// Per axis, the copies of `base` (tiling shifted by `s`) that meet `target`.
fn overlap_layout(base: &LatticeWindow, s: &[i64], target: &LatticeWindow) -> Vec<Vec<Span>> {
    (0..base.dim())
        .map(|a| {
            let c = base.cells()[a] as i64;
            let lo = target.origin()[a];
            let hi = lo + target.cells()[a] as i64;
            let first = (lo - base.origin()[a] - s[a]).div_euclid(c);
            let last = (hi - 1 - base.origin()[a] - s[a]).div_euclid(c);
            (first..=last)
                .map(|i| {
                    let offset = s[a] + i * c;
                    let start = (base.origin()[a] + offset).max(lo);
                    let end = (base.origin()[a] + offset + c).min(hi);
                    Span {
                        offset,
                        lo: start,
                        len: (end - start) as usize,
                    }
                })
                .collect()
        })
        .collect()
}

/// Multiplies a row-major grid of laws on adjacent boxes, axis by axis.
fn combine_grid(mut pieces: Vec<DensityMeasure>, dims: &[usize], cap: usize) -> Result<DensityMeasure> {
    let mut dims = dims.to_vec();
    // Fold the last (fastest) axis first.
    while let Some(n) = dims.pop() {
        let mut next = Vec::with_capacity(pieces.len() / n.max(1));
        for chunk in pieces.chunks(n) {
            let mut acc = chunk[0].clone();
            for q in &chunk[1..] {
                acc = product(&acc, q, Some(cap.min(acc.space().n_max() + q.space().n_max())))?.measure;
            }
            next.push(acc);
        }
        pieces = next;
    }
    pieces
        .pop()
        .ok_or_else(|| Error::InvalidInput("empty product".into()))
}

fn max_site_cap(space: &ConfigSpace) -> usize {
    (0..space.sites()).map(|j| space.site_cap(j)).max().unwrap_or(0)
}

/// Re-expresses a law on a space with a larger total cap and the uniform
/// per-site cap `site_cap`.
fn embed(
    p: &DensityMeasure,
    window: &LatticeWindow,
    n_max: usize,
    site_cap: usize,
) -> Result<DensityMeasure> {
    let space = p.space();
    let target = ConfigSpace::build_with(
        window.clone(),
        n_max,
        SpaceOptions {
            site_volumes: Some(space.site_volumes().to_vec()),
            blocks: SpaceOptions::site_caps(&vec![site_cap; space.sites()]),
            ..Default::default()
        },
    )?;
    if *target == *space {
        return Ok(p.clone());
    }
    let law = p.law();
    let mut out = vec![0.0; target.len()];
    for i in 0..space.len() {
        let t = target
            .index_of(space.state(i))
            .ok_or_else(|| Error::InvalidInput("cap below the law's support".into()))?;
        out[t] = law[i];
    }
    DensityMeasure::from_law(target, out)
}

/// How a family's members are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Tiled,
    Stationarized,
}

#[derive(Clone, Debug)]
pub struct FamilyMember {
    pub r: usize,
    pub measure: DensityMeasure,
    /// Mass clipped while building the member.
    pub defect: f64,
}

impl FamilyMember {
    pub fn window(&self) -> &LatticeWindow {
        self.measure.space().window()
    }

    pub fn volume(&self) -> f64 {
        self.window().volume()
    }

    /// Mass of the untruncated reference outside the member's state set.
    pub fn truncation_mass(&self) -> f64 {
        self.measure.space().reference().truncation_mass
    }
}

/// Laws on the growing windows `Λ_{rk}` generated from one base law.
#[derive(Clone, Debug)]
pub struct WindowFamily {
    base: DensityMeasure,
    kind: FamilyKind,
    members: Vec<FamilyMember>,
}

impl WindowFamily {
    pub fn new(p: &DensityMeasure, kind: FamilyKind, rs: &[usize]) -> Result<Self> {
        if rs.is_empty() {
            return Err(Error::InvalidInput("a family needs at least one member".into()));
        }
        let members = rs
            .iter()
            .map(|&r| {
                let c = match kind {
                    FamilyKind::Tiled => tile(p, r)?,
                    FamilyKind::Stationarized => {
                        let target = tiled_window(p.space().window(), r)?;
                        stationarize_restriction(p, &target)?
                    }
                };
                Ok(FamilyMember {
                    r,
                    measure: c.measure,
                    defect: c.defect,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            base: p.clone(),
            kind,
            members,
        })
    }

    pub fn tiled(p: &DensityMeasure, rs: &[usize]) -> Result<Self> {
        Self::new(p, FamilyKind::Tiled, rs)
    }

    pub fn stationarized(p: &DensityMeasure, rs: &[usize]) -> Result<Self> {
        Self::new(p, FamilyKind::Stationarized, rs)
    }

    pub fn base(&self) -> &DensityMeasure {
        &self.base
    }

    pub fn base_window(&self) -> &LatticeWindow {
        self.base.space().window()
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn members(&self) -> &[FamilyMember] {
        &self.members
    }

    /// Largest deviation of the restricted centre copy from the base law
    /// (tiled families) or of the member restricted to the base window from
    /// the first member (stationarized families).
    pub fn consistency(&self) -> Result<f64> {
        let reference = match self.kind {
            FamilyKind::Tiled => self.base.clone(),
            FamilyKind::Stationarized => {
                let w = self.base_window().clone();
                stationarize_restriction(&self.base, &w)?.measure
            }
        };
        let win = reference.space().window().clone();
        let target = reference.law();
        let mut worst: f64 = 0.0;
        for m in &self.members {
            let sub = restrict(&m.measure, &win)?;
            // Compare occupancy laws up to the smaller cap.
            for i in 0..sub.space().len() {
                let st = sub.space().state(i);
                let there = reference.space().index_of(st).map_or(0.0, |j| target[j]);
                worst = worst.max((sub.law()[i] - there).abs());
            }
        }
        Ok(worst)
    }
}

/// A per-volume sequence along a family.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PerVolume {
    pub r: Vec<usize>,
    pub volumes: Vec<f64>,
    pub values: Vec<f64>,
    pub sup: f64,
    /// Pairs `(i, j)` with `r_i | r_j` where the normalized value dropped,
    /// `v_j < v_i`, by more than the superadditivity tolerance.
    pub monotonicity_violations: Vec<(usize, usize)>,
}

/// Allowed drop between nested members before a violation is reported.
pub const SUPERADDITIVITY_TOLERANCE: f64 = 1e-10;

fn per_volume<F: Fn(&DensityMeasure) -> f64>(family: &WindowFamily, f: F) -> PerVolume {
    let ms = family.members();
    let r: Vec<usize> = ms.iter().map(|m| m.r).collect();
    let volumes: Vec<f64> = ms.iter().map(FamilyMember::volume).collect();
    let values: Vec<f64> = ms.iter().zip(&volumes).map(|(m, v)| f(&m.measure) / v).collect();
    let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut monotonicity_violations = Vec::new();
    for i in 0..ms.len() {
        for j in 0..ms.len() {
            if i == j || !r[j].is_multiple_of(r[i]) || r[j] == r[i] {
                continue;
            }
            let slack = SUPERADDITIVITY_TOLERANCE
                + ms[i].defect
                + ms[j].defect
                + ms[i].truncation_mass()
                + ms[j].truncation_mass();
            if values[j] < values[i] - slack {
                monotonicity_violations.push((i, j));
            }
        }
    }
    PerVolume {
        r,
        volumes,
        values,
        sup,
        monotonicity_violations,
    }
}

/// `e_n = Ent(P_n | π_n) / vol(Λ_n)` along the family.
pub fn specific_entropy(family: &WindowFamily) -> PerVolume {
    per_volume(family, entropy)
}

/// `f_n = I(P_n) / vol(Λ_n)` along the family.
pub fn specific_fisher(family: &WindowFamily) -> PerVolume {
    per_volume(family, |p| fisher(p).value)
}

/// One super-additivity comparison between nested members.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SuperadditivityRow {
    pub small: usize,
    pub large: usize,
    /// `s_large − s_small`; nonnegative when super-additivity holds.
    pub gain: f64,
}

/// Window sequence of the specific transport cost.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WsEstimate {
    pub r: Vec<usize>,
    pub volumes: Vec<f64>,
    /// `s_n = W₀²(P_n, Q_n) / vol(Λ_n)`.
    pub values: Vec<f64>,
    pub converged: Vec<bool>,
    /// Limit of `s + a/vol` fitted through the last two members.
    pub extrapolated: f64,
    pub superadditivity: Vec<SuperadditivityRow>,
}

/// Solves the transport problem on every member pair of two families.
pub fn ws_estimate(
    pf: &WindowFamily,
    qf: &WindowFamily,
    k: usize,
    config: &SolverConfig,
) -> Result<WsEstimate> {
    let (pm, qm) = (pf.members(), qf.members());
    if pm.len() != qm.len() || pm.iter().zip(qm).any(|(a, b)| a.r != b.r) {
        return Err(Error::InconsistentMarginals(
            "families have different members".into(),
        ));
    }
    let mut values = Vec::with_capacity(pm.len());
    let mut converged = Vec::with_capacity(pm.len());
    for (a, b) in pm.iter().zip(qm) {
        let (p, q) = align(&a.measure, &b.measure)?;
        let sol = solve_w0(&TransportProblem::new(p, q, k)?.with_config(config.clone()))?;
        values.push(sol.action_value / a.volume());
        converged.push(sol.diagnostics.converged);
    }
    let r: Vec<usize> = pm.iter().map(|m| m.r).collect();
    let volumes: Vec<f64> = pm.iter().map(FamilyMember::volume).collect();
    let n = values.len();
    let extrapolated = if n >= 2 && volumes[n - 1] != volumes[n - 2] {
        let (v1, v2) = (volumes[n - 2], volumes[n - 1]);
        (v2 * values[n - 1] - v1 * values[n - 2]) / (v2 - v1)
    } else {
        values[n - 1]
    };
    let mut superadditivity = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if r[j].is_multiple_of(r[i]) && r[j] != r[i] {
                superadditivity.push(SuperadditivityRow {
                    small: i,
                    large: j,
                    gain: values[j] - values[i],
                });
            }
        }
    }
    Ok(WsEstimate {
        r,
        volumes,
        values,
        converged,
        extrapolated,
        superadditivity,
    })
}

/// Brings two laws on the same window onto one space (the larger cap).
pub fn align(p: &DensityMeasure, q: &DensityMeasure) -> Result<(DensityMeasure, DensityMeasure)> {
    let (a, b) = (p.space(), q.space());
    if a.window() != b.window() {
        return Err(Error::WindowMismatch(format!("{} vs {}", a.window(), b.window())));
    }
    if a == b {
        return Ok((p.clone(), q.clone()));
    }
    let cap = a.n_max().max(b.n_max());
    let site_cap = max_site_cap(a).max(max_site_cap(b));
    Ok((
        embed(p, a.window(), cap, site_cap)?,
        embed(q, b.window(), cap, site_cap)?,
    ))
}

/// The reference law on a member's space.
pub fn reference_like(p: &DensityMeasure) -> DensityMeasure {
    DensityMeasure::reference(Arc::clone(p.space_arc()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::build_space;
    use crate::measures::intensity;

    fn sp(m: usize, n_max: usize) -> Arc<ConfigSpace> {
        build_space(LatticeWindow::interval(m).unwrap(), n_max).unwrap()
    }

    #[test]
    fn tile_of_one_is_identity() {
        let p = DensityMeasure::random(sp(2, 2), 4, 1.0).unwrap();
        let t = tile(&p, 1).unwrap();
        assert_eq!(t.measure.rho(), p.rho());
        assert_eq!(t.defect, 0.0);
        assert!(tile(&p, 2).is_err());
    }

    #[test]
    fn tile_entropy_is_additive() {
        let p = DensityMeasure::random(sp(1, 12), 9, 2.0).unwrap();
        let p = DensityMeasure::mixture(&[
            (0.5, &p),
            (0.5, &DensityMeasure::poisson(sp(1, 12), 1.3).unwrap()),
        ])
        .unwrap();
        let t = tile(&p, 3).unwrap();
        assert_eq!(t.measure.space().window().cells(), &[3]);
        assert_eq!(t.measure.space().window().origin(), &[-1]);
        let tol = 1e-9 + t.defect;
        assert!((entropy(&t.measure) / 3.0 - entropy(&p)).abs() < tol);
        let i = intensity(&t.measure);
        assert!((i[0] - i[1]).abs() < 1e-12 && (i[1] - i[2]).abs() < 1e-12);
    }

    #[test]
    fn tiled_family_is_consistent() {
        let p = DensityMeasure::random(sp(2, 2), 1, 1.0).unwrap();
        let f = WindowFamily::tiled(&p, &[1, 3]).unwrap();
        assert!(f.consistency().unwrap() < 1e-14);
    }

    #[test]
    fn stationarized_intensity_is_flat() {
        let p = DensityMeasure::random(sp(2, 3), 5, 1.0).unwrap();
        let target = LatticeWindow::interval(3).unwrap().with_origin(vec![-1]).unwrap();
        let s = stationarize_restriction(&p, &target).unwrap().measure;
        let i = intensity(&s);
        let base = intensity(&p);
        let mean = 0.5 * (base[0] + base[1]);
        for x in i {
            assert!((x - mean).abs() < 1e-12, "{x} vs {mean}");
        }
    }

    #[test]
    fn one_cell_period_is_tile_restriction() {
        let p = DensityMeasure::random(sp(1, 3), 2, 1.0).unwrap();
        let target = tiled_window(p.space().window(), 3).unwrap();
        let s = stationarize_restriction(&p, &target).unwrap().measure;
        let t = tile(&p, 3).unwrap().measure;
        assert_eq!(s.space(), t.space());
        for (a, b) in s.rho().iter().zip(t.rho()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn stationarized_reference_is_reference() {
        let p = DensityMeasure::reference(sp(2, 10));
        let target = LatticeWindow::interval(3).unwrap();
        let s = stationarize_restriction(&p, &target).unwrap().measure;
        let tm = p.space().reference().truncation_mass;
        let tv = crate::measures::total_variation(&s, &reference_like(&s));
        assert!(tv < 10.0 * tm, "{tv} {tm}");
        let exact = stationarize_restriction(&DensityMeasure::reference(sp(1, 6)), &target).unwrap();
        assert!(exact.measure.rho().iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_dimensional_tiling() {
        let w = LatticeWindow::new(vec![1, 2], 1.0).unwrap();
        let p = DensityMeasure::random(build_space(w, 1).unwrap(), 3, 1.0).unwrap();
        let t = tile(&p, 3).unwrap();
        assert_eq!(t.measure.space().window().cells(), &[3, 6]);
        assert!((entropy(&t.measure) / 9.0 - entropy(&p)).abs() < 1e-12);
        let f = WindowFamily::tiled(&p, &[1, 3]).unwrap();
        let c = f.consistency().unwrap();
        assert!(c < 1e-13, "{c}");
    }

    #[test]
    fn tiled_entropy_sequence_is_constant() {
        let p = DensityMeasure::poisson(sp(1, 12), 1.7).unwrap();
        let f = WindowFamily::tiled(&p, &[1, 3]).unwrap();
        let e = specific_entropy(&f);
        assert!((e.values[0] - e.values[1]).abs() < 1e-9, "{:?}", e.values);
        let fi = specific_fisher(&f);
        assert!((fi.values[0] - fi.values[1]).abs() < 1e-8, "{:?}", fi.values);
        assert!(e.monotonicity_violations.is_empty());
    }
}
