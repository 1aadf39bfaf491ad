//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    symmetrize(m).cholesky().is_some()
}

/// `M^p` for symmetric PSD `M` through its eigendecomposition; eigenvalues
/// must stay above `floor` when `p < 0`.
pub fn sym_power(m: &DMatrix<f64>, p: f64, floor: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            if p < 0.0 {
                return Err(Error::NumericalFailure(format!(
                    "eigenvalue {v:e} below floor {floor:e}"
                )));
            }
            *v = v.max(0.0);
        }
        *v = v.powf(p);
    }
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose())))
}

/// `||a - b||_F / max(||b||_F, 1e-300)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Row-major nested vectors, for serialization.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch("ragged or empty matrix".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}
