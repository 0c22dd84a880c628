//! Numerical checks of the functional inequalities.
//!
//! Every check evaluates both sides on the truncated model and reports
//! `pass ⇔ left ≤ right + tol`, with `slack = right + tol − left`.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::{reference_like, FamilyMember, WindowFamily};
use crate::configspace::SCHEMA;
use crate::dynamics::OuSemigroup;
use crate::error::{Error, Result};
use crate::measures::{entropy, fisher, DensityMeasure};
use crate::solver::{solve_w0, SolverConfig, TransportProblem, TransportSolution};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InequalityReport {
    pub name: String,
    pub window: String,
    pub left: f64,
    pub right: f64,
    pub slack: f64,
    pub tol: f64,
    pub pass: bool,
    /// Truncation or clipping exceeded the check's budget.
    pub inconclusive: bool,
    /// Free-form parameters of the evaluation, e.g. `t=0.5 K=32`.
    pub detail: String,
}

impl InequalityReport {
    pub fn new(name: &str, p: &DensityMeasure, left: f64, right: f64, tol: f64) -> Self {
        let slack = right + tol - left;
        Self {
            name: name.to_string(),
            window: p.space().window().to_string(),
            left,
            right,
            slack,
            tol,
            pass: left <= right + tol,
            inconclusive: false,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, d: String) -> Self {
        self.detail = d;
        self
    }

    fn flag_if(mut self, defect: f64) -> Self {
        self.inconclusive = defect > self.tol;
        self
    }
}

pub const REPORT_HEADER: &str = "name,window,left,right,slack,tol,pass";

/// CSV with a header row; reals carry 17 significant digits.
pub fn reports_to_csv(reports: &[InequalityReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},\"{}\",{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.name, r.window, r.left, r.right, r.slack, r.tol, r.pass
        ));
    }
    out
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    schema: &'a str,
    reports: &'a [InequalityReport],
}

pub fn reports_to_json(reports: &[InequalityReport]) -> String {
    serde_json::to_string_pretty(&ReportDocument {
        schema: SCHEMA,
        reports,
    })
    .expect("reports serialize")
}

fn solve(
    p: &DensityMeasure,
    q: &DensityMeasure,
    k: usize,
    config: &SolverConfig,
) -> Result<TransportSolution> {
    let sol = solve_w0(&TransportProblem::new(p.clone(), q.clone(), k)?.with_config(config.clone()))?;
    if !sol.diagnostics.converged {
        return Err(Error::NonConvergence(format!(
            "transport on {} stopped at residual {:.3e}",
            p.space().window(),
            sol.diagnostics.ce_residual
        )));
    }
    Ok(sol)
}

/// `W₀²(P, π) ≤ Ent(P|π)`, tolerance `1e-3·max(1, Ent)`. With a refinement
/// table in `config` the Richardson value is used.
pub fn check_talagrand(p: &DensityMeasure, k: usize, config: &SolverConfig) -> Result<InequalityReport> {
    let ent = entropy(p);
    let w2 = solve(p, &reference_like(p), k, config)?.extrapolated();
    Ok(
        InequalityReport::new("talagrand", p, w2, ent, 1e-3 * ent.max(1.0))
            .with_detail(format!("K={k} ratio={:.6}", w2 / ent)),
    )
}

/// `W₀(S_tP, S_tQ) ≤ e^{−t}·W₀(P, Q)` with relative tolerance `1e-2`.
pub fn check_contractivity(
    p: &DensityMeasure,
    q: &DensityMeasure,
    t: f64,
    k: usize,
    config: &SolverConfig,
) -> Result<InequalityReport> {
    let ou = OuSemigroup::new(p.space_arc().clone());
    let w = solve(p, q, k, config)?.distance();
    let wt = solve(&ou.evolve(p, t)?, &ou.evolve(q, t)?, k, config)?.distance();
    let right = (-t).exp() * w;
    Ok(
        InequalityReport::new("contractivity", p, wt, right, 1e-2 * right)
            .with_detail(format!("t={t} K={k}")),
    )
}

/// Settings of [`check_evi`].
#[derive(Clone, Debug)]
pub struct EviOptions {
    /// Finite-difference steps; the last one is used, the others bound the
    /// differencing error.
    pub steps: Vec<f64>,
    /// Relative slack factor applied to `|Ent(R)| + |Ent(S_tP)| + W₀²`.
    pub relative_tol: f64,
}

impl Default for EviOptions {
    fn default() -> Self {
        Self {
            steps: vec![1e-2, 1e-3],
            relative_tol: 5e-3,
        }
    }
}

/// `Ent(S_tP) + ½ d/dt W₀²(S_tP, R) + ½ W₀²(S_tP, R) ≤ Ent(R)`, the time
/// derivative by centred differences.
pub fn check_evi(
    p: &DensityMeasure,
    r: &DensityMeasure,
    t: f64,
    k: usize,
    config: &SolverConfig,
    opts: &EviOptions,
) -> Result<InequalityReport> {
    let parts = evi_parts(p, r, t, k, config, opts)?;
    let tol = opts.relative_tol * (parts.ent_r.abs() + parts.ent_p.abs() + parts.w2);
    Ok(
        InequalityReport::new("evi", p, parts.left(), parts.ent_r, tol).with_detail(format!(
            "t={t} K={k} dW2/dt={:.9e} fd_spread={:.3e}",
            parts.derivative, parts.fd_spread
        )),
    )
}

struct EviParts {
    ent_p: f64,
    ent_r: f64,
    w2: f64,
    derivative: f64,
    fd_spread: f64,
}

impl EviParts {
    fn left(&self) -> f64 {
        self.ent_p + 0.5 * self.derivative + 0.5 * self.w2
    }
}

fn evi_parts(
    p: &DensityMeasure,
    r: &DensityMeasure,
    t: f64,
    k: usize,
    config: &SolverConfig,
    opts: &EviOptions,
) -> Result<EviParts> {
    if opts.steps.is_empty() || opts.steps.iter().any(|&d| !(d > 0.0 && d <= t)) {
        return Err(Error::InvalidInput("difference steps must lie in (0, t]".into()));
    }
    let ou = OuSemigroup::new(p.space_arc().clone());
    let cost = |s: f64| -> Result<f64> { Ok(solve(&ou.evolve(p, s)?, r, k, config)?.action_value) };
    let pt = ou.evolve(p, t)?;
    let w2 = cost(t)?;
    let mut ds = Vec::with_capacity(opts.steps.len());
    for &d in &opts.steps {
        ds.push((cost(t + d)? - cost(t - d)?) / (2.0 * d));
    }
    let derivative = *ds.last().expect("nonempty");
    let fd_spread = ds.iter().map(|x| (x - derivative).abs()).fold(0.0, f64::max);
    Ok(EviParts {
        ent_p: entropy(&pt),
        ent_r: entropy(r),
        w2,
        derivative,
        fd_spread,
    })
}

/// `Ent(ρ_t) ≤ (1−t)Ent(P0) + t·Ent(P1) − ½t(1−t)W₀²` along the computed
/// geodesic at `t ∈ {¼, ½, ¾}`; `k` must be a multiple of four.
pub fn check_geodesic_convexity(
    p0: &DensityMeasure,
    p1: &DensityMeasure,
    k: usize,
    config: &SolverConfig,
) -> Result<Vec<InequalityReport>> {
    if !k.is_multiple_of(4) {
        return Err(Error::InvalidInput(
            "interval count must be a multiple of 4".into(),
        ));
    }
    let sol = solve(p0, p1, k, config)?;
    let w2 = sol.action_value;
    let (e0, e1) = (entropy(p0), entropy(p1));
    (1..4)
        .map(|q| {
            let t = q as f64 / 4.0;
            let mid = sol.path.density_at(q * k / 4)?;
            let right = (1.0 - t) * e0 + t * e1 - 0.5 * t * (1.0 - t) * w2;
            Ok(
                InequalityReport::new("geodesic_convexity", p0, entropy(&mid), right, 2e-3)
                    .with_detail(format!("t={t} K={k}")),
            )
        })
        .collect()
}

/// `|Ent(S_TP) − Ent(P) + ∫₀^T I(S_rP) dr| ≤ 1e-4`, the integral by
/// double-exponential quadrature.
pub fn check_debruijn(p: &DensityMeasure, horizon: f64) -> Result<InequalityReport> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let ou = OuSemigroup::new(p.space_arc().clone());
    let failure = RefCell::new(None);
    let quad = quadrature::integrate(
        |r| match ou.evolve(p, r) {
            Ok(m) => fisher(&m).value,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        0.0,
        horizon,
        1e-8,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let gap = entropy(&ou.evolve(p, horizon)?) - entropy(p) + quad.integral;
    Ok(InequalityReport::new("debruijn", p, gap.abs(), 0.0, 1e-4)
        .with_detail(format!(
            "T={horizon} quadrature_error={:.3e}",
            quad.error_estimate
        ))
        .flag_if(quad.error_estimate))
}

/// `Ent(P) ≤ W₀(P, π)·√I(P) − ½W₀²(P, π)`, tolerance `1e-3`.
pub fn check_hwi(p: &DensityMeasure, k: usize, config: &SolverConfig) -> Result<InequalityReport> {
    let fi = fisher(p);
    if !fi.in_domain {
        return Err(Error::Domain("HWI needs finite Fisher information".into()));
    }
    let w2 = solve(p, &reference_like(p), k, config)?.extrapolated();
    let right = w2.sqrt() * fi.value.sqrt() - 0.5 * w2;
    Ok(InequalityReport::new("hwi", p, entropy(p), right, 1e-3).with_detail(format!("K={k}")))
}

/// `Ent(P) ≤ I(P)`, tolerance `1e-3`.
pub fn check_logsobolev(p: &DensityMeasure) -> Result<InequalityReport> {
    let fi = fisher(p);
    if !fi.in_domain {
        return Err(Error::Domain(
            "log-Sobolev needs finite Fisher information".into(),
        ));
    }
    Ok(InequalityReport::new("logsobolev", p, entropy(p), fi.value, 1e-3))
}

fn member_defect(m: &FamilyMember) -> f64 {
    m.defect + m.truncation_mass()
}

/// Per-volume Talagrand `s_n(P, π) ≤ e_n` along a family.
pub fn specific_talagrand(
    family: &WindowFamily,
    k: usize,
    config: &SolverConfig,
) -> Result<Vec<InequalityReport>> {
    family
        .members()
        .iter()
        .map(|m| {
            let v = m.volume();
            let e = entropy(&m.measure) / v;
            let s = solve(&m.measure, &reference_like(&m.measure), k, config)?.action_value / v;
            Ok(
                InequalityReport::new("specific_talagrand", &m.measure, s, e, 1e-3 * e.max(1.0))
                    .with_detail(format!("r={} K={k}", m.r))
                    .flag_if(member_defect(m)),
            )
        })
        .collect()
}

/// Per-volume EVI along a family against the reference-generated family `R`.
pub fn specific_evi(
    pf: &WindowFamily,
    rf: &WindowFamily,
    t: f64,
    k: usize,
    config: &SolverConfig,
    opts: &EviOptions,
) -> Result<Vec<InequalityReport>> {
    if pf.members().len() != rf.members().len() {
        return Err(Error::InconsistentMarginals(
            "families have different members".into(),
        ));
    }
    pf.members()
        .iter()
        .zip(rf.members())
        .map(|(a, b)| {
            let (p, r) = super::align(&a.measure, &b.measure)?;
            let v = a.volume();
            let parts = evi_parts(&p, &r, t, k, config, opts)?;
            let tol = opts.relative_tol * (parts.ent_r.abs() + parts.ent_p.abs() + parts.w2) / v;
            Ok(
                InequalityReport::new("specific_evi", &p, parts.left() / v, parts.ent_r / v, tol)
                    .with_detail(format!("r={} t={t} K={k}", a.r))
                    .flag_if(member_defect(a).max(member_defect(b))),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{build_space, LatticeWindow};

    #[test]
    fn reference_reports_sit_on_their_budget() {
        let sp = build_space(LatticeWindow::interval(2).unwrap(), 3).unwrap();
        let pi = DensityMeasure::reference(sp);
        let cfg = SolverConfig::default();
        let mut all = vec![
            check_talagrand(&pi, 8, &cfg).unwrap(),
            check_contractivity(&pi, &pi, 0.5, 8, &cfg).unwrap(),
            check_evi(&pi, &pi, 0.1, 8, &cfg, &EviOptions::default()).unwrap(),
            check_debruijn(&pi, 1.0).unwrap(),
            check_hwi(&pi, 8, &cfg).unwrap(),
            check_logsobolev(&pi).unwrap(),
        ];
        all.extend(check_geodesic_convexity(&pi, &pi, 8, &cfg).unwrap());
        for r in &all {
            assert_eq!((r.left, r.right), (0.0, 0.0), "{}", r.name);
            assert_eq!(r.slack, r.tol, "{}", r.name);
            assert!(r.pass);
        }
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let sp = build_space(LatticeWindow::interval(1).unwrap(), 4).unwrap();
        let p = DensityMeasure::poisson(sp, 1.5).unwrap();
        let r = check_logsobolev(&p).unwrap();
        let csv = reports_to_csv(std::slice::from_ref(&r));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        let row: Vec<&str> = lines.next().unwrap().rsplitn(6, ',').collect();
        assert_eq!(row[4].parse::<f64>().unwrap(), r.left);
        assert!(reports_to_json(&[r]).contains("nlbbpp/1"));
    }
}
