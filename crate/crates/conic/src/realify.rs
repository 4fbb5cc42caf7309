//! Hermitian-to-real embedding.
//!
//! An `n×n` Hermitian `H` maps to the `2n×2n` real symmetric
//! `[[Re H, −Im H], [Im H, Re H]]`. Eigenvalues are preserved with doubled
//! multiplicity, so `tr_real = 2·tr_complex`. A functional `Re tr(Cᴴ H)` becomes
//! `⟨C̃, S⟩` with `C̃ = ½[[Re C, −Im C], [Im C, Re C]]`, so objective values are
//! unchanged by the embedding.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::problem::{AffineExpr, Coef, Constraint, SdpProblem, VarId, VarKind, VarValue};

pub fn embed_hermitian(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            s[(i, j)] = z.re;
            s[(i + n, j + n)] = z.re;
            s[(i + n, j)] = z.im;
            s[(i, j + n)] = -z.im;
        }
    }
    s
}

/// Inverse of [`embed_hermitian`]; averages the redundant copies.
pub fn extract_hermitian(s: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = s.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(
            0.5 * (s[(i, j)] + s[(i + n, j + n)]),
            0.5 * (s[(i + n, j)] - s[(i, j + n)]),
        )
    })
}

fn embed_coef(c: &Coef, n: usize) -> Coef {
    match c {
        Coef::Dense(m) => {
            let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
            for i in 0..n {
                for j in 0..n {
                    let z = m[(i, j)] * 0.5;
                    r[(i, j)] = z.re;
                    r[(i + n, j + n)] = z.re;
                    r[(i + n, j)] = z.im;
                    r[(i, j + n)] = -z.im;
                }
            }
            Coef::real(&r)
        }
        Coef::Entries(es) => {
            let mut out = Vec::with_capacity(4 * es.len());
            for &(i, j, z) in es {
                let h = z * 0.5;
                if h.re != 0.0 {
                    out.push((i, j, Complex64::new(h.re, 0.0)));
                    out.push((i + n, j + n, Complex64::new(h.re, 0.0)));
                }
                if h.im != 0.0 {
                    out.push((i + n, j, Complex64::new(h.im, 0.0)));
                    out.push((i, j + n, Complex64::new(-h.im, 0.0)));
                }
            }
            Coef::Entries(out)
        }
        Coef::Vector(v) => Coef::Vector(v.clone()),
    }
}

/// Records how variables of the original problem map into the realified one.
#[derive(Debug, Clone)]
pub struct RealifyMap {
    kinds: Vec<VarKind>,
}

impl RealifyMap {
    /// Maps solved values of the realified problem back to the original variables.
    pub fn restore(&self, values: &[VarValue]) -> Vec<VarValue> {
        self.kinds
            .iter()
            .zip(values)
            .map(|(k, v)| match (k, v) {
                (VarKind::Hermitian, VarValue::Real(s)) => VarValue::Complex(extract_hermitian(s)),
                _ => v.clone(),
            })
            .collect()
    }

    /// Maps original variable values into the realified problem's variables.
    pub fn embed(&self, values: &[VarValue]) -> Vec<VarValue> {
        values
            .iter()
            .map(|v| match v {
                VarValue::Complex(h) => VarValue::Real(embed_hermitian(h)),
                _ => v.clone(),
            })
            .collect()
    }
}

fn map_expr(e: &AffineExpr, dims: &[(VarKind, usize)]) -> AffineExpr {
    AffineExpr {
        terms: e
            .terms
            .iter()
            .map(|(v, c)| {
                let (k, n) = dims[v.0];
                let c = match k {
                    VarKind::Hermitian => embed_coef(c, n),
                    VarKind::RealSymmetric => match c {
                        Coef::Dense(m) => Coef::Dense(m.map(|z| Complex64::new(z.re, 0.0))),
                        Coef::Entries(es) => Coef::Entries(es.iter().map(|&(i, j, z)| (i, j, Complex64::new(z.re, 0.0))).collect()),
                        Coef::Vector(x) => Coef::Vector(x.clone()),
                    },
                    VarKind::Free => c.clone(),
                };
                (VarId(v.0), c)
            })
            .collect(),
        constant: e.constant,
    }
}

/// Rewrites every Hermitian variable as its real symmetric embedding.
pub fn realify(p: &SdpProblem) -> (SdpProblem, RealifyMap) {
    let dims: Vec<(VarKind, usize)> = p.vars.iter().map(|v| (v.kind, v.dim)).collect();
    let mut out = SdpProblem::new();
    for v in &p.vars {
        match v.kind {
            VarKind::Hermitian => out.add_var(&v.name, VarKind::RealSymmetric, 2 * v.dim),
            k => out.add_var(&v.name, k, v.dim),
        };
    }
    out.objective = map_expr(&p.objective, &dims);
    out.constraints = p
        .constraints
        .iter()
        .map(|c| match c {
            Constraint::Eq(e) => Constraint::Eq(map_expr(e, &dims)),
            Constraint::Ge(e) => Constraint::Ge(map_expr(e, &dims)),
            Constraint::Lmi { dim, upper, margin } => Constraint::Lmi {
                dim: *dim,
                upper: upper.iter().map(|e| map_expr(e, &dims)).collect(),
                margin: *margin,
            },
        })
        .collect();
    (out, RealifyMap { kinds: p.vars.iter().map(|v| v.kind).collect() })
}
