//! Declarative SDP model: named variables, affine equalities, LMIs and a
//! linear objective.

use serde::Serialize;

use super::expr::AffExpr;
use crate::error::{dim, Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarShape {
    Sym { n: usize },
    Rect { rows: usize, cols: usize },
    Scalar,
}

impl VarShape {
    pub fn scalars(&self) -> usize {
        match *self {
            VarShape::Sym { n } => n * (n + 1) / 2,
            VarShape::Rect { rows, cols } => rows * cols,
            VarShape::Scalar => 1,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Sym { n } => (n, n),
            VarShape::Rect { rows, cols } => (rows, cols),
            VarShape::Scalar => (1, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, Serialize)]
pub struct VarInfo {
    pub name: String,
    pub shape: VarShape,
    pub offset: usize,
}

#[derive(Clone, Debug)]
pub struct Equality {
    pub name: String,
    pub expr: AffExpr,
}

/// `expr ⪰ margin·I`.
#[derive(Clone, Debug)]
pub struct Lmi {
    pub name: String,
    pub expr: AffExpr,
    pub margin: f64,
}

#[derive(Clone, Debug)]
pub enum Objective {
    Feasibility,
    Minimize(AffExpr),
    Maximize(AffExpr),
}

#[derive(Clone, Debug)]
pub struct LmiProblem {
    vars: Vec<VarInfo>,
    n_scalars: usize,
    pub equalities: Vec<Equality>,
    pub lmis: Vec<Lmi>,
    pub objective: Objective,
}

impl Default for LmiProblem {
    fn default() -> Self {
        Self::new()
    }
}

/// Position of `(i, j)`, `i ≤ j`, in column-major upper-triangular storage.
fn tri(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

impl LmiProblem {
    pub fn new() -> Self {
        LmiProblem {
            vars: Vec::new(),
            n_scalars: 0,
            equalities: Vec::new(),
            lmis: Vec::new(),
            objective: Objective::Feasibility,
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn vars(&self) -> &[VarInfo] {
        &self.vars
    }

    fn declare(&mut self, name: &str, shape: VarShape) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarInfo { name: name.to_string(), shape, offset: self.n_scalars });
        self.n_scalars += shape.scalars();
        id
    }

    pub fn sym(&mut self, name: &str, n: usize) -> (VarId, AffExpr) {
        let id = self.declare(name, VarShape::Sym { n });
        (id, self.var_expr(id))
    }

    pub fn rect(&mut self, name: &str, rows: usize, cols: usize) -> (VarId, AffExpr) {
        let id = self.declare(name, VarShape::Rect { rows, cols });
        (id, self.var_expr(id))
    }

    pub fn scalar(&mut self, name: &str) -> (VarId, AffExpr) {
        let id = self.declare(name, VarShape::Scalar);
        (id, self.var_expr(id))
    }

    pub fn var_info(&self, id: VarId) -> &VarInfo {
        &self.vars[id.0]
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn var_expr(&self, id: VarId) -> AffExpr {
        let info = &self.vars[id.0];
        let o = info.offset;
        let mut terms = Vec::new();
        match info.shape {
            VarShape::Sym { n } => {
                for j in 0..n {
                    for i in 0..=j {
                        terms.push((o + tri(i, j), i as u32, j as u32, 1.0));
                        if i != j {
                            terms.push((o + tri(i, j), j as u32, i as u32, 1.0));
                        }
                    }
                }
            }
            VarShape::Rect { rows, cols } => {
                for j in 0..cols {
                    for i in 0..rows {
                        terms.push((o + j * rows + i, i as u32, j as u32, 1.0));
                    }
                }
            }
            VarShape::Scalar => terms.push((o, 0, 0, 1.0)),
        }
        let (r, c) = info.shape.dims();
        AffExpr::from_terms(r, c, terms)
    }

    /// Reads a variable's value from a flat solution vector.
    pub fn value(&self, id: VarId, x: &[f64]) -> Mat {
        self.var_expr(id).eval(x)
    }

    fn check_vars(&self, e: &AffExpr) -> Result<()> {
        match e.terms().iter().map(|t| t.0).max() {
            Some(k) if k >= self.n_scalars => Err(Error::Invalid(format!("undeclared variable index {k}"))),
            _ => Ok(()),
        }
    }

    /// `expr = 0`.
    pub fn add_equality(&mut self, name: &str, expr: AffExpr) -> Result<()> {
        self.check_vars(&expr)?;
        self.equalities.push(Equality { name: name.to_string(), expr });
        Ok(())
    }

    /// `expr ⪰ margin·I`; the symmetric part of `expr` is used.
    pub fn add_psd(&mut self, name: &str, expr: AffExpr, margin: f64) -> Result<()> {
        if expr.nrows() != expr.ncols() {
            return Err(dim(format!("LMI {name} is {:?}", expr.shape())));
        }
        self.check_vars(&expr)?;
        let margin = margin * expr.constant_part().amax().max(1.0);
        self.lmis.push(Lmi { name: name.to_string(), expr, margin });
        Ok(())
    }

    /// `expr ⪯ −margin·I`.
    pub fn add_nsd(&mut self, name: &str, expr: AffExpr, margin: f64) -> Result<()> {
        self.add_psd(name, expr.scale(-1.0), margin)
    }

    pub fn minimize(&mut self, e: AffExpr) -> Result<()> {
        self.set_objective(e, false)
    }

    pub fn maximize(&mut self, e: AffExpr) -> Result<()> {
        self.set_objective(e, true)
    }

    fn set_objective(&mut self, e: AffExpr, max: bool) -> Result<()> {
        if e.shape() != (1, 1) {
            return Err(dim("objective must be scalar"));
        }
        self.check_vars(&e)?;
        self.objective = if max { Objective::Maximize(e) } else { Objective::Minimize(e) };
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> Option<f64> {
        match &self.objective {
            Objective::Feasibility => None,
            Objective::Minimize(e) | Objective::Maximize(e) => Some(e.eval(x)[(0, 0)]),
        }
    }

    /// Variable and constraint inventory for debug dumps.
    pub fn summary(&self) -> ProblemSummary {
        ProblemSummary {
            variables: self.vars.clone(),
            n_scalars: self.n_scalars,
            equalities: self.equalities.iter().map(|e| (e.name.clone(), e.expr.nrows(), e.expr.ncols())).collect(),
            lmis: self.lmis.iter().map(|l| (l.name.clone(), l.expr.nrows(), l.margin)).collect(),
            objective: match self.objective {
                Objective::Feasibility => "feasibility",
                Objective::Minimize(_) => "minimize",
                Objective::Maximize(_) => "maximize",
            }
            .to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProblemSummary {
    pub variables: Vec<VarInfo>,
    pub n_scalars: usize,
    pub equalities: Vec<(String, usize, usize)>,
    pub lmis: Vec<(String, usize, f64)>,
    pub objective: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct LmiResidual {
    pub name: String,
    pub size: usize,
    pub min_eig: f64,
    pub margin: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EqResidual {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub residual: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ResidualReport {
    pub lmis: Vec<LmiResidual>,
    pub equalities: Vec<EqResidual>,
}

impl ResidualReport {
    pub fn all_ok(&self) -> bool {
        self.lmis.iter().all(|l| !l.violated) && self.equalities.iter().all(|e| !e.violated)
    }

    pub fn worst_lmi(&self) -> f64 {
        self.lmis.iter().map(|l| l.min_eig - l.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn worst_equality(&self) -> f64 {
        self.equalities.iter().map(|e| e.residual).fold(0.0, f64::max)
    }
}

/// Slack allowed below an LMI's margin before it counts as violated.
pub const LMI_VIOLATION_FLOOR: f64 = 1e-7;
/// Relative Frobenius tolerance for equalities.
pub const EQ_TOL: f64 = 1e-6;

/// Minimum eigenvalue and equality residual of every constraint at `x`.
pub fn residual_report(problem: &LmiProblem, x: &[f64]) -> ResidualReport {
    let lmis = problem
        .lmis
        .iter()
        .map(|l| {
            let m = l.expr.eval(x);
            let m = (&m + m.transpose()) * 0.5;
            let min_eig = crate::linalg::min_eig_unchecked(&m);
            let slack = 10.0 * l.margin.max(LMI_VIOLATION_FLOOR);
            LmiResidual {
                name: l.name.clone(),
                size: m.nrows(),
                min_eig,
                margin: l.margin,
                violated: !(min_eig >= -slack),
            }
        })
        .collect();
    let equalities = problem
        .equalities
        .iter()
        .map(|e| {
            let r = e.expr.eval(x).norm();
            EqResidual {
                name: e.name.clone(),
                rows: e.expr.nrows(),
                cols: e.expr.ncols(),
                residual: r,
                violated: !(r <= EQ_TOL * e.expr.scale_hint().max(1.0)),
            }
        })
        .collect();
    ResidualReport { lmis, equalities }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_variable_layout() {
        let mut p = LmiProblem::new();
        let (id, e) = p.sym("P", 2);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(e.eval(&x), Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        assert_eq!(p.value(id, &x), e.eval(&x));
        let (_, r) = p.rect("Y", 1, 2);
        assert_eq!(r.eval(&[0.0, 0.0, 0.0, 5.0, 6.0]), Mat::from_row_slice(1, 2, &[5.0, 6.0]));
    }

    #[test]
    fn empty_report() {
        let r = residual_report(&LmiProblem::new(), &[]);
        assert!(r.lmis.is_empty() && r.equalities.is_empty() && r.all_ok());
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut p = LmiProblem::new();
        let e = AffExpr::scalar_times(3, &Mat::identity(1, 1));
        assert!(p.add_psd("x", e, 0.0).is_err());
    }
}
