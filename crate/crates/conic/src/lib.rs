//! Semidefinite programming for the design subproblems.
//!
//! Problems are built with [`SdpProblem`] over real symmetric PSD, complex
//! Hermitian PSD and free vector variables, then solved by a primal-dual
//! interior-point method after the Hermitian-to-real embedding of [`realify`].

mod ipm;
mod problem;
mod realify;
mod standard;

pub use ipm::SolverSettings;
pub use problem::{AffineExpr, Coef, Constraint, SdpProblem, VarId, VarKind, VarSpec, VarValue};
pub use realify::{embed_hermitian, extract_hermitian, realify, RealifyMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub values: Vec<VarValue>,
    pub objective: f64,
    /// Relative primal residual of the scaled standard form.
    pub primal_residual: f64,
    /// Relative dual residual of the scaled standard form.
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn real(&self, v: VarId) -> &DMatrix<f64> {
        self.values[v.index()].as_real().expect("not a real symmetric variable")
    }

    pub fn hermitian(&self, v: VarId) -> &DMatrix<Complex64> {
        self.values[v.index()].as_complex().expect("not a Hermitian variable")
    }

    pub fn vector(&self, v: VarId) -> &DVector<f64> {
        self.values[v.index()].as_vector().expect("not a free vector variable")
    }
}

/// Solves `problem`; non-optimal outcomes are reported through the status.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, ConicError> {
    problem.validate()?;
    let (real, map) = realify(problem);
    let sf = standard::StandardForm::compile(&real)?;
    let out = ipm::solve_standard(&sf, settings);
    let lp = if sf.lp_block().is_some() { out.lp } else { DVector::zeros(0) };
    let values = map.restore(&sf.values(&out.psd, &lp));
    let objective = problem.objective().eval(&values);
    Ok(SdpSolution {
        status: out.status,
        values,
        objective,
        primal_residual: out.primal_residual,
        dual_residual: out.dual_residual,
        gap: out.gap,
        iterations: out.iterations,
    })
}

/// Dumps the realified standard form in SDPA sparse text format.
pub fn to_sdpa(problem: &SdpProblem) -> Result<String, ConicError> {
    problem.validate()?;
    let (real, _) = realify(problem);
    Ok(standard::StandardForm::compile(&real)?.to_sdpa())
}
