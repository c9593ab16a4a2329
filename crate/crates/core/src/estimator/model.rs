use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::kernel::{cross_gram, Kernel, SeriesKernel};

/// `f = sum_i a_i C(X_i, .)` for one kernel piece.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepresenterComponent {
    pub kernel: Kernel,
    pub coeffs: DVector<f64>,
}

/// `f(x) = sum_v c_v lambda_v phi_v(x_coord)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesComponent {
    pub coord: usize,
    pub kernel: SeriesKernel,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Representation {
    Representer { anchors: Covariates, components: Vec<RepresenterComponent> },
    Series { components: Vec<SeriesComponent> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Component chosen by the greedy step.
    pub component: usize,
    pub tau: f64,
    /// Empirical risk after the update.
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub representation: Representation,
    /// `sqrt(sum_k |f_k|^2)`.
    pub norm_hk: f64,
    /// `sum_k |f_k|`.
    pub norm_lk: f64,
    pub budget: f64,
    /// Penalty of the constrained ridge fit; zero for greedy fits.
    pub ridge_rho: f64,
    /// Values at the training covariates.
    pub fitted: DVector<f64>,
    pub trace: Vec<IterationRecord>,
}

impl FittedModel {
    pub fn predict(&self, x: &Covariates) -> Result<DVector<f64>> {
        predict(self, x)
    }

    pub fn risk(&self) -> Option<f64> {
        self.trace.last().map(|r| r.risk)
    }
}

pub fn predict(model: &FittedModel, x: &Covariates) -> Result<DVector<f64>> {
    match &model.representation {
        Representation::Representer { anchors, components } => {
            if x.ncols() != anchors.ncols() {
                return Err(Error::Dimension(format!(
                    "model was fitted on {} covariates, got {}",
                    anchors.ncols(),
                    x.ncols()
                )));
            }
            let mut out: DVector<f64> = DVector::zeros(x.nrows());
            for c in components {
                out += cross_gram(&c.kernel, x, anchors)? * &c.coeffs;
            }
            Ok(out)
        }
        Representation::Series { components } => {
            let mut out: DVector<f64> = DVector::zeros(x.nrows());
            for c in components {
                if c.coord >= x.ncols() {
                    return Err(Error::Dimension(format!(
                        "model uses covariate {} but points have {}",
                        c.coord,
                        x.ncols()
                    )));
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let xi = x.get(i, c.coord);
                    *o += c.coeffs.iter().enumerate().map(|(v, a)| a * c.kernel.scaled_feature(v, xi)).sum::<f64>();
                }
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prediction".into()));
            }
            Ok(out)
        }
    }
}
