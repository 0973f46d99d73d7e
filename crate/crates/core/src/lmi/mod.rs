//! SDP modelling, the S-procedure expansion and the solver adapter.

mod expr;
mod problem;
mod solver;
mod sproc;

pub use expr::AffExpr;
pub use problem::{
    residual_report, EqResidual, Equality, Lmi, LmiProblem, LmiResidual, Objective, ProblemSummary, ResidualReport,
    VarId, VarInfo, VarShape, EQ_TOL, LMI_VIOLATION_FLOOR,
};
pub use solver::{solve, LmiSolution, SolveStatus, SolverDiagnostics, SolverSettings};
pub use sproc::{grid_min_eig, sproc_expand, DeltaBlock, LftSpec, Multiplier, SprocOptions};
