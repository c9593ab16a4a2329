//! Kernel ridge regression and the penalty that puts the fit on the boundary
//! of a norm ball.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spd_solve, SymEigen};

/// What to do at `rho = 0` when the Gram matrix is singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroPenalty {
    /// Fail with [`Error::Singular`].
    #[default]
    Strict,
    /// Minimum-norm solution through the pseudo-inverse.
    PseudoInverse,
}

/// Coefficients `a = (C + rho I)^{-1} y` of `f = sum_i a_i C(X_i, .)`.
pub fn fit_ridge(gram: &DMatrix<f64>, y: &DVector<f64>, rho: f64, zero: ZeroPenalty) -> Result<DVector<f64>> {
    check_system(gram, y)?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("ridge penalty must be finite and non-negative, got {rho}")));
    }
    if rho > 0.0 {
        let mut a = gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += rho;
        }
        let b = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        return Ok(spd_solve(&a, &b)?.column(0).into_owned());
    }
    let eig = SymEigen::new(gram)?;
    if zero == ZeroPenalty::Strict && eig.values.iter().any(|&k| k <= eig.rank_tol) {
        return Err(Error::Singular("Gram matrix is singular at zero penalty".into()));
    }
    Ok(ridge_from_eigen(&eig, y, 0.0))
}

/// Ridge coefficients through a cached eigendecomposition. At `rho = 0`
/// directions with eigenvalue below the rank tolerance are dropped.
pub fn ridge_from_eigen(eig: &SymEigen, y: &DVector<f64>, rho: f64) -> DVector<f64> {
    let d = eig.values.map(|k| {
        if rho > 0.0 {
            1.0 / (k + rho)
        } else if k > eig.rank_tol {
            1.0 / k
        } else {
            0.0
        }
    });
    let c = eig.coords(y).component_mul(&d);
    &eig.vectors * c
}

/// `g(rho) = a(rho)^T C a(rho) = sum_i c_i^2 k_i / (k_i + rho)^2` where
/// `c = Q^T y`.
pub fn budget_norm_sq(eig: &SymEigen, coords: &DVector<f64>, rho: f64) -> f64 {
    coords
        .iter()
        .zip(eig.values.iter())
        .map(|(c, &k)| {
            if rho > 0.0 {
                c * c * k / ((k + rho) * (k + rho))
            } else if k > eig.rank_tol {
                c * c / k
            } else {
                0.0
            }
        })
        .sum()
}

/// Smallest `rho >= 0` with `a(rho)^T C a(rho) <= budget^2`; zero when the
/// unpenalised fit is already inside the ball. Bisection to relative width
/// `rel_tol`.
pub fn solve_rho_for_budget(eig: &SymEigen, y: &DVector<f64>, budget: f64, rel_tol: f64) -> Result<f64> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::Domain(format!("budget must be positive, got {budget}")));
    }
    if y.len() != eig.dim() {
        return Err(Error::Dimension(format!("{} responses for a {}-point Gram", y.len(), eig.dim())));
    }
    let coords = eig.coords(y);
    let target = budget * budget;
    if budget_norm_sq(eig, &coords, 0.0) <= target {
        return Ok(0.0);
    }
    // g(rho) <= k_max |y|^2 / rho^2, so this upper end is feasible
    let mut hi = eig.max_value().sqrt() * y.norm() / budget;
    let mut lo = 0.0;
    for _ in 0..2000 {
        if hi - lo <= rel_tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if budget_norm_sq(eig, &coords, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Ridge fit constrained to `a^T C a <= budget^2`.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub coeffs: DVector<f64>,
    pub rho: f64,
    /// `sqrt(a^T C a)`.
    pub norm: f64,
    pub fitted: DVector<f64>,
}

pub fn fit_constrained_ridge(gram: &DMatrix<f64>, eig: &SymEigen, y: &DVector<f64>, budget: f64) -> Result<RidgeFit> {
    check_system(gram, y)?;
    let rho = solve_rho_for_budget(eig, y, budget, 1e-12)?;
    let coeffs = if rho > 0.0 {
        fit_ridge(gram, y, rho, ZeroPenalty::Strict)?
    } else {
        ridge_from_eigen(eig, y, 0.0)
    };
    let fitted = gram * &coeffs;
    let norm = coeffs.dot(&fitted).max(0.0).sqrt();
    Ok(RidgeFit { coeffs, rho, norm, fitted })
}

fn check_system(gram: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if !gram.is_square() || gram.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{}x{} Gram with {} responses",
            gram.nrows(),
            gram.ncols(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_gram_budget_two() {
        // |y| = 4 with C = I: |y|^2 / (1 + rho)^2 = 4 gives rho = 1
        let c = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![2.0, 2.0, 2.0, 2.0]);
        let eig = SymEigen::new(&c).unwrap();
        let fit = fit_constrained_ridge(&c, &eig, &y, 2.0).unwrap();
        assert_relative_eq!(fit.rho, 1.0, max_relative = 1e-10);
        assert_relative_eq!(fit.norm, 2.0, max_relative = 1e-10);
        for a in fit.coeffs.iter() {
            assert_relative_eq!(*a, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn slack_budget_returns_zero_penalty() {
        let c = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let eig = SymEigen::new(&c).unwrap();
        assert_eq!(solve_rho_for_budget(&eig, &y, 5.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn singular_gram_needs_pseudo_inverse() {
        let c = DMatrix::from_element(3, 3, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_ridge(&c, &y, 0.0, ZeroPenalty::Strict), Err(Error::Singular(_))));
        let a = fit_ridge(&c, &y, 0.0, ZeroPenalty::PseudoInverse).unwrap();
        // pinv of the all-ones matrix is J / 9
        for v in a.iter() {
            assert_relative_eq!(*v, 6.0 / 9.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn normal_equations_hold() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 0.7]);
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let a = fit_ridge(&c, &y, 0.25, ZeroPenalty::Strict).unwrap();
        let r = &c * &a + &a * 0.25 - &y;
        assert!(r.norm() <= 1e-12 * y.norm());
    }

    #[test]
    fn negative_penalty_rejected() {
        let c = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(fit_ridge(&c, &y, -1.0, ZeroPenalty::Strict), Err(Error::Domain(_))));
    }
}
