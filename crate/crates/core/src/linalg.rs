//! Small dense-matrix helpers on top of `nalgebra`.
//!
//! Every norm reported by this crate is the spectral (operator) norm. For
//! symmetric input it is computed from the symmetric eigendecomposition; for
//! general input from the largest singular value.

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

pub fn identity(dim: usize) -> Mat {
    Mat::identity(dim, dim)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Spectral norm of a general square matrix.
pub fn op_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut vals: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(m: &Mat) -> f64 {
    sym_eigenvalues(m)
        .into_iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Norm of the antisymmetric defect `m - m^T`.
pub fn asymmetry(m: &Mat) -> f64 {
    op_norm(&(m - m.transpose()))
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// Determinant by LU with partial pivoting.
pub fn det(m: &Mat) -> f64 {
    m.clone().lu().determinant()
}

/// Signed log-determinant: returns `(sign, ln|det|)`.
pub fn log_det(m: &Mat) -> (f64, f64) {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if d < 0.0 {
            sign = -sign;
        }
        acc += d.abs().ln();
    }
    (sign, acc)
}

pub fn inverse(m: &Mat) -> Option<Mat> {
    m.clone().lu().try_inverse()
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &Mat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Relative distance `|a - b| / max(|b|, floor)` in spectral norm.
pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    let denom = op_norm(b).max(f64::MIN_POSITIVE);
    op_norm(&(a - b)) / denom
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `k coth(k t)`, continued by `1/t` at `k = 0`.
pub fn k_coth(k: f64, t: f64) -> f64 {
    let x = k * t;
    if x.abs() < 1e-8 {
        // k coth(kt) = 1/t + k^2 t / 3 + O(k^4 t^3)
        1.0 / t + k * k * t / 3.0
    } else {
        k / x.tanh()
    }
}
