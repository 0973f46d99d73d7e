//! Adapter onto the Clarabel conic solver.
//!
//! Clarabel solves `min ½xᵀPx + qᵀx` s.t. `b − Ax ∈ K`. Each LMI becomes a
//! PSD triangle cone in scaled-svec form, equalities a zero cone.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use super::problem::{residual_report, LmiProblem, Objective, ResidualReport};
use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_success(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Strictness margin for `≻ 0`.
    pub margin: f64,
    /// `Ξ22 ⪯ −δI`.
    pub delta: f64,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { margin: 1e-7, delta: 1e-7, tol_gap: 1e-8, tol_feas: 1e-8, max_iter: 200, verbose: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverDiagnostics {
    pub backend: String,
    pub raw_status: String,
    pub iterations: u32,
    /// Wall-clock seconds; left out of reports so they stay byte-stable.
    #[serde(skip)]
    pub solve_time: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub n_scalars: usize,
    pub n_rows: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LmiSolution {
    pub status: SolveStatus,
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(serialize_with = "ser_values")]
    pub values: BTreeMap<String, Mat>,
    pub objective: Option<f64>,
    pub diagnostics: SolverDiagnostics,
    pub residuals: ResidualReport,
}

fn ser_values<S: serde::Serializer>(v: &BTreeMap<String, Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let m: BTreeMap<&String, Vec<Vec<f64>>> = v.iter().map(|(k, m)| (k, crate::linalg::mat_to_rows(m))).collect();
    m.serialize(s)
}

impl LmiSolution {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.values.get(name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|m| m[(0, 0)])
    }
}

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    /// A constant equality row that cannot hold.
    trivially_infeasible: bool,
}

fn assemble(problem: &LmiProblem) -> Assembled {
    let n = problem.n_scalars();
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut bad = false;

    // equalities: 0 = c + G x  →  s = −c − G x ∈ {0}
    let mut n_eq = 0;
    for eq in &problem.equalities {
        let (r, c) = eq.expr.shape();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); r * c];
        for &(k, i, j, v) in eq.expr.terms() {
            rows[j as usize * r + i as usize].push((k, v));
        }
        let cst = eq.expr.constant_part();
        for (idx, row) in rows.into_iter().enumerate() {
            let c0 = cst[(idx % r, idx / r)];
            if row.is_empty() {
                if c0.abs() > 1e-12 {
                    bad = true;
                }
                continue;
            }
            let ri = b.len();
            for (k, v) in row {
                trip.push((ri, k, v));
            }
            b.push(-c0);
            n_eq += 1;
        }
    }
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }

    // LMIs: s = svec(C − μI + Σ x_k G_k) ⪰ 0  →  b = svec(C − μI), A = −svec(G)
    let s2 = std::f64::consts::SQRT_2;
    let mut n_nonneg = 0;
    let mut nonneg_trip = Vec::new();
    let mut nonneg_b = Vec::new();
    for l in &problem.lmis {
        let d = l.expr.nrows();
        if d == 0 {
            continue;
        }
        let cst = l.expr.constant_part();
        if d == 1 {
            for &(k, _, _, v) in l.expr.terms() {
                nonneg_trip.push((n_nonneg, k, -v));
            }
            nonneg_b.push(cst[(0, 0)] - l.margin);
            n_nonneg += 1;
            continue;
        }
        let base = b.len();
        for j in 0..d {
            for i in 0..=j {
                let v = if i == j { cst[(i, i)] - l.margin } else { 0.5 * (cst[(i, j)] + cst[(j, i)]) * s2 };
                b.push(v);
            }
        }
        for &(k, r, c, v) in l.expr.terms() {
            let (i, j) = if r <= c { (r as usize, c as usize) } else { (c as usize, r as usize) };
            let w = if i == j { v } else { 0.5 * v * s2 };
            trip.push((base + j * (j + 1) / 2 + i, k, -w));
        }
        cones.push(SupportedConeT::PSDTriangleConeT(d));
    }
    if n_nonneg > 0 {
        let base = b.len();
        trip.extend(nonneg_trip.into_iter().map(|(r, k, v)| (base + r, k, v)));
        b.extend(nonneg_b);
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }

    let m = b.len();
    trip.sort_unstable_by_key(|t| (t.1, t.0));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(trip.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(trip.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in trip {
        if last == Some((r, c)) {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    let a = CscMatrix::new(m, n, colptr, rowval, nzval);

    let mut q = vec![0.0; n];
    let (sign, obj) = match &problem.objective {
        Objective::Feasibility => (0.0, None),
        Objective::Minimize(e) => (1.0, Some(e)),
        Objective::Maximize(e) => (-1.0, Some(e)),
    };
    if let Some(e) = obj {
        for &(k, _, _, v) in e.terms() {
            q[k] += sign * v;
        }
    }
    Assembled { a, b, q, cones, trivially_infeasible: bad }
}

/// Solves the problem. Infeasibility is reported through the status.
///
/// An inexact termination whose point misses some LMI by a hair is retried
/// once with every margin raised by ten times the miss.
pub fn solve(problem: &LmiProblem, settings: &SolverSettings) -> Result<LmiSolution> {
    let first = solve_once(problem, settings)?;
    let miss = -first.residuals.worst_lmi();
    let retry = first.status == SolveStatus::NumericalFailure
        && first.diagnostics.raw_status.starts_with("Almost")
        && first.residuals.equalities.iter().all(|e| !e.violated)
        && miss.is_finite()
        && miss > 0.0;
    if !retry {
        return Ok(first);
    }
    let mut tight = problem.clone();
    for l in &mut tight.lmis {
        l.margin += 10.0 * miss;
    }
    let second = solve_once(&tight, settings)?;
    let residuals = residual_report(problem, &second.x);
    if second.status == SolveStatus::Infeasible || !residuals.all_ok() || second.x.iter().any(|v| !v.is_finite()) {
        return Ok(first);
    }
    let status = match (second.status, &problem.objective) {
        (SolveStatus::NumericalFailure, _) | (_, Objective::Feasibility) => SolveStatus::Feasible,
        (s, _) => s,
    };
    Ok(finish(problem, second.x, status, second.diagnostics, residuals))
}

fn solve_once(problem: &LmiProblem, settings: &SolverSettings) -> Result<LmiSolution> {
    let n = problem.n_scalars();
    let asm = assemble(problem);
    let n_rows = asm.b.len();
    let diag = |raw: &str, it: u32, t: f64, rp: f64, rd: f64| SolverDiagnostics {
        backend: "clarabel".into(),
        raw_status: raw.into(),
        iterations: it,
        solve_time: t,
        primal_residual: rp,
        dual_residual: rd,
        n_scalars: n,
        n_rows,
    };
    if asm.trivially_infeasible {
        return Ok(LmiSolution {
            status: SolveStatus::Infeasible,
            x: vec![0.0; n],
            values: BTreeMap::new(),
            objective: None,
            diagnostics: diag("constant equality violated", 0, 0.0, f64::NAN, f64::NAN),
            residuals: ResidualReport::default(),
        });
    }
    if n == 0 || n_rows == 0 {
        // nothing to optimize: evaluate constants
        let x = vec![0.0; n];
        let residuals = residual_report(problem, &x);
        let status = if residuals.all_ok() { SolveStatus::Feasible } else { SolveStatus::Infeasible };
        return Ok(finish(problem, x, status, diag("trivial", 0, 0.0, 0.0, 0.0), residuals));
    }

    let s = DefaultSettingsBuilder::default()
        .verbose(settings.verbose)
        .max_iter(settings.max_iter)
        .tol_gap_abs(settings.tol_gap)
        .tol_gap_rel(settings.tol_gap)
        .tol_feas(settings.tol_feas)
        .max_threads(1)
        .build()
        .map_err(|e| Error::SolverFailure(format!("settings: {e:?}")))?;
    let p = CscMatrix::zeros((n, n));
    let mut solver = DefaultSolver::new(&p, &asm.q, &asm.a, &asm.b, &asm.cones, s)
        .map_err(|e| Error::SolverFailure(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let d = diag(&format!("{:?}", sol.status), sol.iterations, sol.solve_time, sol.r_prim, sol.r_dual);
    let x = sol.x.clone();
    let residuals = residual_report(problem, &x);
    let success = if matches!(problem.objective, Objective::Feasibility) {
        SolveStatus::Feasible
    } else {
        SolveStatus::Optimal
    };
    let status = match sol.status {
        SolverStatus::Solved => success,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::NumericalFailure,
        // inaccurate terminations are accepted only if the point checks out
        _ if residuals.all_ok() && x.iter().all(|v| v.is_finite()) => SolveStatus::Feasible,
        _ => SolveStatus::NumericalFailure,
    };
    log::debug!("lmi solve: {:?} in {} iterations ({:.3}s)", sol.status, sol.iterations, sol.solve_time);
    Ok(finish(problem, x, status, d, residuals))
}

fn finish(
    problem: &LmiProblem,
    x: Vec<f64>,
    status: SolveStatus,
    diagnostics: SolverDiagnostics,
    residuals: ResidualReport,
) -> LmiSolution {
    let values = if status.is_success() {
        problem.vars().iter().enumerate().map(|(i, v)| (v.name.clone(), problem.value(super::VarId(i), &x))).collect()
    } else {
        BTreeMap::new()
    };
    let objective = if status.is_success() { problem.objective_value(&x) } else { None };
    LmiSolution { status, x, values, objective, diagnostics, residuals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::AffExpr;

    fn e2(a: f64, b: f64, c: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[a, b, b, c])
    }

    #[test]
    fn minimize_t_with_determinant_condition() {
        let mut p = LmiProblem::new();
        let (_, t) = p.scalar("t");
        let t_id = 0;
        let expr = AffExpr::scalar_times(t_id, &e2(1.0, 0.0, 1.0)).add_const(&e2(0.0, 1.0, 0.0)).unwrap();
        p.add_psd("lmi", expr, 0.0).unwrap();
        p.minimize(t).unwrap();
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.scalar("t").unwrap() - 1.0).abs() < 1e-6);
        assert!(s.residuals.all_ok());
    }

    #[test]
    fn trace_constrained_feasibility() {
        let mut p = LmiProblem::new();
        let (_, pe) = p.sym("P", 2);
        p.add_psd("P>0", pe.clone(), 1e-7).unwrap();
        let tr = pe.trace().unwrap().add_const(&Mat::from_element(1, 1, -1.0)).unwrap();
        p.add_equality("trace", tr).unwrap();
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Feasible);
        let pm = s.get("P").unwrap();
        assert!((pm.trace() - 1.0).abs() < 1e-7);
        assert!(crate::linalg::min_eig_unchecked(pm) > 0.0);
    }

    #[test]
    fn contradictory_trace_is_infeasible() {
        let mut p = LmiProblem::new();
        let (_, pe) = p.sym("P", 2);
        p.add_psd("P>=I", pe.add_const(&(-Mat::identity(2, 2))).unwrap(), 0.0).unwrap();
        let tr = pe.trace().unwrap().scale(-1.0).add_const(&Mat::from_element(1, 1, 1.0)).unwrap();
        p.add_psd("trace<=1", tr, 0.0).unwrap();
        let s = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn residuals_flag_perturbation() {
        let mut p = LmiProblem::new();
        let (_, t) = p.scalar("t");
        let expr = AffExpr::scalar_times(0, &e2(1.0, 0.0, 1.0)).add_const(&e2(0.0, 1.0, 0.0)).unwrap();
        p.add_psd("lmi", expr, 0.0).unwrap();
        p.minimize(t).unwrap();
        let exact = residual_report(&p, &[1.0]);
        assert!(exact.all_ok());
        assert!(exact.lmis[0].min_eig.abs() <= 1e-9);
        let off = residual_report(&p, &[1.0 - 1e-3]);
        assert!(!off.all_ok());
    }

    #[test]
    fn deterministic_repeat() {
        let build = || {
            let mut p = LmiProblem::new();
            let (_, pe) = p.sym("P", 3);
            p.add_psd("P>I", pe.add_const(&(-Mat::identity(3, 3))).unwrap(), 0.0).unwrap();
            p.minimize(pe.trace().unwrap()).unwrap();
            p
        };
        let a = solve(&build(), &SolverSettings::default()).unwrap();
        let b = solve(&build(), &SolverSettings::default()).unwrap();
        assert_eq!(a.x, b.x);
    }
}
