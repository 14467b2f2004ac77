//! Small dense linear-algebra helpers shared by the control and analysis code.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Eigenvalues in `[-SQRT_CLAMP, 0)` are treated as zero when taking square roots.
pub const SQRT_CLAMP: f64 = 1e-12;

/// Induced 2-norm (largest singular value). Empty matrices have norm zero.
pub fn induced_two_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let svd = SVD::new(m.clone(), false, false);
    svd.singular_values.iter().copied().fold(0.0, f64::max)
}

/// Smallest singular value of a (possibly rectangular) matrix.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let svd = SVD::new(m.clone(), false, false);
    svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Returns `None` if an eigenvalue is below `-SQRT_CLAMP`.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -SQRT_CLAMP {
            return None;
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))?;
    Some(symmetrize(&chol.inverse()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    nalgebra::Cholesky::new(symmetrize(m)).is_some()
}

/// `|M^{1/2} x|` for a symmetric PSD weight, computed as `sqrt(xᵀ M x)`.
pub fn weighted_norm(weight: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * weight * x)[(0, 0)].max(0.0).sqrt()
}

/// Horizontal concatenation `[a, b]`.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hstack row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Vertical concatenation of two vectors.
pub fn vstack_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Row-major nested vectors into a dense matrix. Ragged input yields `None`.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `base^exponent` evaluated as `exp(exponent * ln base)`.
pub fn pow_log(base: f64, exponent: f64) -> f64 {
    (exponent * base.ln()).exp()
}
