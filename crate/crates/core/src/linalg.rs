//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Induced 2-norm (largest singular value). Zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// `M^{-1/2}` for a symmetric positive-definite matrix.
pub fn inverse_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `I_k ⊗ m`.
pub fn block_diagonal(m: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * copies, c * copies);
    for i in 0..copies {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

/// `vᵀ M v`.
pub fn quadratic_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Euclidean distance between two slices of equal length.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Row-major nested vectors into a matrix. Rows must have equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
