//! Problem builder: matrix and vector variables, affine expressions, constraints.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::ConicError;

/// Kind of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Real symmetric positive semidefinite matrix.
    RealSymmetric,
    /// Complex Hermitian positive semidefinite matrix.
    Hermitian,
    /// Unconstrained real vector.
    Free,
}

/// Handle to a variable inside one [`SdpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct VarSpec {
    pub name: String,
    pub kind: VarKind,
    pub dim: usize,
}

/// Coefficient of a variable inside an affine expression.
///
/// For a matrix variable `X` the contribution is `Re Σ conj(C_ij) X_ij`, which is
/// `Re tr(Cᴴ X)`. For a free vector the contribution is `cᵀx`.
#[derive(Debug, Clone)]
pub enum Coef {
    Dense(DMatrix<Complex64>),
    Entries(Vec<(usize, usize, Complex64)>),
    Vector(DVector<f64>),
}

impl Coef {
    pub fn identity(n: usize) -> Self {
        Coef::Entries((0..n).map(|i| (i, i, Complex64::new(1.0, 0.0))).collect())
    }

    pub fn entry(i: usize, j: usize, v: f64) -> Self {
        Coef::Entries(vec![(i, j, Complex64::new(v, 0.0))])
    }

    pub fn real(m: &DMatrix<f64>) -> Self {
        Coef::Dense(m.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Coef::Dense(m) => Coef::Dense(m * Complex64::new(s, 0.0)),
            Coef::Entries(e) => Coef::Entries(e.iter().map(|&(i, j, v)| (i, j, v * s)).collect()),
            Coef::Vector(v) => Coef::Vector(v * s),
        }
    }
}

/// `Σ terms + constant`, always real valued.
#[derive(Debug, Clone, Default)]
pub struct AffineExpr {
    pub terms: Vec<(VarId, Coef)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        AffineExpr { terms: Vec::new(), constant: c }
    }

    pub fn term(mut self, v: VarId, c: Coef) -> Self {
        self.terms.push((v, c));
        self
    }

    pub fn add_term(&mut self, v: VarId, c: Coef) {
        self.terms.push((v, c));
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        AffineExpr {
            terms: self.terms.iter().map(|(v, c)| (*v, c.scaled(s))).collect(),
            constant: self.constant * s,
        }
    }

    pub fn add(mut self, other: &AffineExpr) -> Self {
        self.terms.extend(other.terms.iter().cloned());
        self.constant += other.constant;
        self
    }
}

#[derive(Debug, Clone)]
pub enum Constraint {
    /// `expr = 0`
    Eq(AffineExpr),
    /// `expr ≥ 0`
    Ge(AffineExpr),
    /// `M − margin·I ⪰ 0` where `M` is symmetric and given by its upper triangle
    /// in row-major order.
    Lmi { dim: usize, upper: Vec<AffineExpr>, margin: f64 },
}

/// Linear objective, affine constraints and LMIs over PSD and free variables.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub(crate) vars: Vec<VarSpec>,
    pub(crate) objective: AffineExpr,
    pub(crate) constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: &str, kind: VarKind, dim: usize) -> VarId {
        self.vars.push(VarSpec { name: name.to_string(), kind, dim });
        VarId(self.vars.len() - 1)
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn var(&self, v: VarId) -> &VarSpec {
        &self.vars[v.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &AffineExpr {
        &self.objective
    }

    pub fn minimize(&mut self, obj: AffineExpr) {
        self.objective = obj;
    }

    pub fn add_eq(&mut self, e: AffineExpr) {
        self.constraints.push(Constraint::Eq(e));
    }

    pub fn add_ge(&mut self, e: AffineExpr) {
        self.constraints.push(Constraint::Ge(e));
    }

    /// `M(x) − margin·I ⪰ 0`; `entry(i, j)` is called for `i ≤ j` only.
    pub fn add_lmi(&mut self, dim: usize, margin: f64, mut entry: impl FnMut(usize, usize) -> AffineExpr) {
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                upper.push(entry(i, j));
            }
        }
        self.constraints.push(Constraint::Lmi { dim, upper, margin });
    }

    /// `M(x) + delta·I ⪯ 0`, the strict negative-definite form used for `D̃ ≺ 0`.
    pub fn add_negative_definite(&mut self, dim: usize, delta: f64, mut entry: impl FnMut(usize, usize) -> AffineExpr) {
        self.add_lmi(dim, delta, |i, j| entry(i, j).scaled(-1.0));
    }

    pub fn has_complex(&self) -> bool {
        self.vars.iter().any(|v| v.kind == VarKind::Hermitian)
    }

    fn check_expr(&self, e: &AffineExpr, what: &str) -> Result<(), ConicError> {
        if !e.constant.is_finite() {
            return Err(ConicError::InvalidProblem(format!("{what}: non-finite constant")));
        }
        for (v, c) in &e.terms {
            let spec = self
                .vars
                .get(v.0)
                .ok_or_else(|| ConicError::InvalidProblem(format!("{what}: unknown variable {}", v.0)))?;
            let n = spec.dim;
            let ok = match (spec.kind, c) {
                (VarKind::Free, Coef::Vector(x)) => x.len() == n && x.iter().all(|a| a.is_finite()),
                (VarKind::Free, _) => false,
                (_, Coef::Vector(_)) => false,
                (_, Coef::Dense(m)) => m.nrows() == n && m.ncols() == n && m.iter().all(|a| a.re.is_finite() && a.im.is_finite()),
                (_, Coef::Entries(es)) => es.iter().all(|&(i, j, a)| i < n && j < n && a.re.is_finite() && a.im.is_finite()),
            };
            if !ok {
                return Err(ConicError::InvalidProblem(format!(
                    "{what}: coefficient does not match variable '{}' ({:?}, dim {n})",
                    spec.name, spec.kind
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        self.check_expr(&self.objective, "objective")?;
        for (k, c) in self.constraints.iter().enumerate() {
            match c {
                Constraint::Eq(e) | Constraint::Ge(e) => self.check_expr(e, &format!("constraint {k}"))?,
                Constraint::Lmi { dim, upper, margin } => {
                    if *dim == 0 || upper.len() != dim * (dim + 1) / 2 || !margin.is_finite() {
                        return Err(ConicError::InvalidProblem(format!("constraint {k}: malformed LMI")));
                    }
                    for e in upper {
                        self.check_expr(e, &format!("constraint {k}"))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Value of one solved variable.
#[derive(Debug, Clone, PartialEq)]
pub enum VarValue {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
    Vector(DVector<f64>),
}

impl VarValue {
    pub fn as_real(&self) -> Option<&DMatrix<f64>> {
        match self {
            VarValue::Real(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_complex(&self) -> Option<&DMatrix<Complex64>> {
        match self {
            VarValue::Complex(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            VarValue::Vector(v) => Some(v),
            _ => None,
        }
    }
}

fn coef_value(c: &Coef, x: &VarValue) -> f64 {
    match (c, x) {
        (Coef::Vector(a), VarValue::Vector(v)) => a.dot(v),
        (Coef::Dense(a), VarValue::Real(m)) => a.iter().zip(m.iter()).map(|(a, b)| a.re * b).sum(),
        (Coef::Dense(a), VarValue::Complex(m)) => a.iter().zip(m.iter()).map(|(a, b)| (a.conj() * b).re).sum(),
        (Coef::Entries(es), VarValue::Real(m)) => es.iter().map(|&(i, j, a)| a.re * m[(i, j)]).sum(),
        (Coef::Entries(es), VarValue::Complex(m)) => es.iter().map(|&(i, j, a)| (a.conj() * m[(i, j)]).re).sum(),
        _ => f64::NAN,
    }
}

impl AffineExpr {
    /// Evaluates the expression at a full assignment of variable values.
    pub fn eval(&self, values: &[VarValue]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| coef_value(c, &values[v.0])).sum::<f64>()
    }
}
