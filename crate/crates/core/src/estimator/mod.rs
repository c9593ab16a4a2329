//! Ridge and Frank-Wolfe estimators in RKHS balls.

mod greedy;
mod model;
mod ridge;

pub use greedy::{greedy_direction, greedy_direction_series, greedy_fit, line_search, GramDirection, GreedyBasis, SeriesDirection};
pub use model::{predict, FittedModel, IterationRecord, Representation, RepresenterComponent, SeriesComponent};
pub use ridge::{
    budget_norm_sq, fit_constrained_ridge, fit_ridge, ridge_from_eigen, solve_rho_for_budget, RidgeFit, ZeroPenalty,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernel::{gram_matrix_with, Kernel};
use crate::linalg::SymEigen;
use crate::loss::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Ball of the summed kernel's RKHS.
    Hk,
    /// Sum of per-component norms.
    #[default]
    Lk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    RidgeClosedForm,
    #[default]
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    LineSearch,
    TwoOverMPlusTwo,
    OneOverM,
}

/// Radius of the constraint ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    Fixed(f64),
    /// This multiple of the sample standard deviation of the response.
    ResponseSd(f64),
}

impl Default for BudgetRule {
    fn default() -> Self {
        BudgetRule::ResponseSd(10.0)
    }
}

impl BudgetRule {
    pub fn resolve(self, data: &Dataset) -> Result<f64> {
        let b = match self {
            BudgetRule::Fixed(b) => b,
            BudgetRule::ResponseSd(m) => m * data.response_sd(),
        };
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Domain(format!("budget must be finite and positive, got {b}")));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub budget: BudgetRule,
    pub norm: NormKind,
    pub solver: Solver,
    pub iterations: usize,
    pub step: StepRule,
    pub line_search_tol: f64,
    pub rho_tol: f64,
    /// Use explicit series features when every component admits them.
    pub series_path: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            budget: BudgetRule::default(),
            norm: NormKind::Lk,
            solver: Solver::Greedy,
            iterations: 500,
            step: StepRule::LineSearch,
            line_search_tol: 1e-6,
            rho_tol: 1e-12,
            series_path: true,
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    pub fn ridge(budget: BudgetRule) -> Self {
        Self { budget, norm: NormKind::Hk, solver: Solver::RidgeClosedForm, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        {
            let (BudgetRule::Fixed(b) | BudgetRule::ResponseSd(b)) = self.budget;
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Domain(format!("budget must be finite and positive, got {b}")));
            }
        }
        if self.solver == Solver::RidgeClosedForm && self.norm == NormKind::Lk {
            return Err(Error::InvalidArgument("the closed-form ridge solver fits the HK ball only".into()));
        }
        if !(self.line_search_tol > 0.0) || !(self.rho_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Fits `kernel` to `data` with the solver selected in `config`.
pub fn fit(data: &Dataset, loss: &dyn Loss, kernel: &Kernel, config: &FitConfig) -> Result<FittedModel> {
    config.validate()?;
    match config.solver {
        Solver::Greedy => greedy_fit(data, loss, &GreedyBasis::from_kernel(kernel, config.series_path), config),
        Solver::RidgeClosedForm => {
            let gram = gram_matrix_with(kernel, &data.x, config.exec)?;
            let eig = SymEigen::new(&gram)?;
            ridge_model(data, loss, kernel, &gram, &eig, config)
        }
    }
}

/// Constrained ridge fit from a Gram matrix and its cached eigendecomposition.
pub fn ridge_model(
    data: &Dataset,
    loss: &dyn Loss,
    kernel: &Kernel,
    gram: &DMatrix<f64>,
    eig: &SymEigen,
    config: &FitConfig,
) -> Result<FittedModel> {
    if !matches!(loss.name(), "square" | "rescaled_square") {
        return Err(Error::InvalidArgument(format!(
            "closed-form ridge needs a square loss, got {}",
            loss.name()
        )));
    }
    let budget = config.budget.resolve(data)?;
    let rho = solve_rho_for_budget(eig, &data.y, budget, config.rho_tol)?;
    let coeffs = if rho > 0.0 {
        fit_ridge(gram, &data.y, rho, ZeroPenalty::Strict)?
    } else {
        ridge_from_eigen(eig, &data.y, 0.0)
    };
    let fitted = gram * &coeffs;
    let norm_hk = coeffs.dot(&fitted).max(0.0).sqrt();
    let pieces = kernel.components();
    let norm_lk = if pieces.len() > 1 {
        let mut total = 0.0;
        for p in &pieces {
            let g = gram_matrix_with(p, &data.x, config.exec)?;
            total += coeffs.dot(&(g * &coeffs)).max(0.0).sqrt();
        }
        total
    } else {
        norm_hk
    };
    let risk = data.y.iter().zip(fitted.iter()).map(|(&y, &t)| loss.value(y, t)).sum::<f64>() / data.n() as f64;
    Ok(FittedModel {
        representation: Representation::Representer {
            anchors: data.x.clone(),
            components: vec![RepresenterComponent { kernel: kernel.clone(), coeffs }],
        },
        norm_hk,
        norm_lk,
        budget,
        ridge_rho: rho,
        fitted,
        trace: vec![IterationRecord { iteration: 0, component: 0, tau: 1.0, risk }],
    })
}
