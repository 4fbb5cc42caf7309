//! Small dense helpers shared by the bound and design code.

use nalgebra::{Matrix2, SymmetricEigen};

use crate::{CMat, CVec, Error, Result, C64};

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `tr(A B)` without forming the product.
pub fn tr_prod(a: &CMat, b: &CMat) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// `Re tr(Cᴴ X) = Re Σ conj(C_ij) X_ij`.
pub fn re_inner(cm: &CMat, x: &CMat) -> f64 {
    cm.iter().zip(x.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in descending order.
pub fn herm_eig_desc(m: &CMat) -> (Vec<f64>, Vec<CVec>) {
    let e = SymmetricEigen::new(hermitian_part(m));
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = idx.iter().map(|&i| e.eigenvectors.column(i).into_owned()).collect();
    (vals, vecs)
}

pub fn min_eig(m: &CMat) -> f64 {
    herm_eig_desc(m).0.last().copied().unwrap_or(0.0)
}

/// Inverse of a real 2×2 through the adjugate, rejecting near-singular input.
pub fn inv2(m: &Matrix2<f64>, what: &str) -> Result<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.norm_squared();
    if !det.is_finite() || det.abs() <= 1e-14 * scale || scale == 0.0 {
        return Err(Error::DegenerateDesign(format!("{what} is singular (det {det:e})")));
    }
    Ok(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

pub fn sym2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric 2×2, ascending.
pub fn eig2(m: &Matrix2<f64>) -> (f64, f64) {
    let s = sym2(m);
    let mean = 0.5 * (s[(0, 0)] + s[(1, 1)]);
    let d = 0.5 * (s[(0, 0)] - s[(1, 1)]);
    let r = (d * d + s[(0, 1)] * s[(0, 1)]).sqrt();
    (mean - r, mean + r)
}

/// Projects every entry onto the unit circle; zeros map to 1.
pub fn unit_modulus(v: &CVec) -> CVec {
    v.map(|z| {
        let n = z.norm();
        if n > 0.0 {
            z / n
        } else {
            c(1.0)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_2x2() {
        let m = Matrix2::new(2.0, 1.0, 1.0, 3.0);
        let i = inv2(&m, "m").unwrap();
        assert!((m * i - Matrix2::identity()).norm() < 1e-14);
        assert!(inv2(&Matrix2::new(1.0, 2.0, 2.0, 4.0), "m").is_err());
    }

    #[test]
    fn eig2_matches_general_solver() {
        let m = Matrix2::new(1.5, -0.3, -0.3, 0.2);
        let (a, b) = eig2(&m);
        let e = SymmetricEigen::new(m).eigenvalues;
        let (lo, hi) = (e.min(), e.max());
        assert!((a - lo).abs() < 1e-14 && (b - hi).abs() < 1e-14);
    }
}
