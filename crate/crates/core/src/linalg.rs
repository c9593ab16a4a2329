use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric PSD matrix, computed once and shared by
/// the budget solve, the pseudo-inverse fits and the instrument projection.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues, negative round-off clipped to zero.
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// Eigenvalues at or below this are treated as zero by pseudo-inverses.
    pub rank_tol: f64,
}

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        let eig = m.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let rank_tol = m.nrows().max(1) as f64 * f64::EPSILON * max * 16.0;
        Ok(Self {
            values: eig.eigenvalues.map(|v| v.max(0.0)),
            vectors: eig.eigenvectors,
            rank_tol,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values.max()
    }

    /// Coordinates `Q^T v` in the eigenbasis.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(v)
    }

    /// `Q diag(d) Q^T B`.
    pub fn apply_diag(&self, d: &DVector<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = self.vectors.tr_mul(b);
        for (mut row, di) in c.row_iter_mut().zip(d.iter()) {
            row *= *di;
        }
        &self.vectors * c
    }
}

/// Eigenvalues in descending order.
pub fn eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Solves the symmetric positive definite system `A x = B` by Cholesky with
/// one step of iterative refinement.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not numerically positive definite".into()))?;
    let mut x = chol.solve(b);
    let r = b - a * &x;
    x += chol.solve(&r);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    Ok(x)
}
