use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{sample_variance, Covariates, Dataset};
use crate::error::{Error, Result};

const BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Design {
    Lin3,
    LinAll,
    NonLinear,
    Bivariate,
}

impl Design {
    pub fn min_covariates(self) -> usize {
        match self {
            Design::Lin3 => 3,
            Design::LinAll => 10,
            Design::NonLinear => 4,
            Design::Bivariate => 2,
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin3" => Ok(Design::Lin3),
            "linall" => Ok(Design::LinAll),
            "nonlinear" => Ok(Design::NonLinear),
            "bivariate" => Ok(Design::Bivariate),
            _ => Err(Error::InvalidArgument(format!("unknown design {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationShape {
    /// `corr(X_k, X_l) = rho^|k - l|`.
    #[default]
    Geometric,
    /// Equal pairwise correlation `rho`.
    Equi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Set values outside `[-2, 2]` to the nearest endpoint.
    #[default]
    Clip,
    /// Redraw rows until every entry falls inside `[-2, 2]`.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub design: Design,
    pub n: usize,
    pub k: usize,
    pub pair_corr: f64,
    #[serde(default)]
    pub correlation: CorrelationShape,
    pub snr: f64,
    #[serde(default)]
    pub truncation: Truncation,
}

impl DgpSpec {
    pub fn new(design: Design, n: usize, pair_corr: f64, snr: f64) -> Self {
        Self {
            design,
            n,
            k: 10,
            pair_corr,
            correlation: CorrelationShape::Geometric,
            snr,
            truncation: Truncation::Clip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("sample size {} is too small", self.n)));
        }
        if self.k < self.design.min_covariates() {
            return Err(Error::InvalidArgument(format!(
                "design {:?} needs at least {} covariates, got {}",
                self.design,
                self.design.min_covariates(),
                self.k
            )));
        }
        if !(self.snr > 0.0) || !self.snr.is_finite() {
            return Err(Error::Domain(format!("signal to noise ratio must be positive, got {}", self.snr)));
        }
        if !(self.pair_corr.abs() < 1.0) || correlation_matrix(self.k, self.pair_corr, self.correlation).cholesky().is_none() {
            return Err(Error::Domain(format!(
                "correlation {} is not positive definite for {} covariates",
                self.pair_corr, self.k
            )));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        self.validate()?;
        let x = gen_covariates(self.n, self.k, self.pair_corr, self.correlation, self.truncation, rng)?;
        let resp = gen_response(&x, self.design, self.snr, rng)?;
        Dataset::new(resp.y, x)
    }
}

/// Correlation matrix of the latent normal vector.
pub fn correlation_matrix(k: usize, pair_corr: f64, shape: CorrelationShape) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            match shape {
                CorrelationShape::Geometric => pair_corr.powi(a.abs_diff(b) as i32),
                CorrelationShape::Equi => pair_corr,
            }
        }
    })
}

/// `n x k` draws of a correlated standard normal vector truncated to `[-2, 2]`.
pub fn gen_covariates<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    pair_corr: f64,
    shape: CorrelationShape,
    truncation: Truncation,
    rng: &mut R,
) -> Result<Covariates> {
    if !(pair_corr.abs() < 1.0) {
        return Err(Error::Domain(format!("pair correlation must lie in (-1, 1), got {pair_corr}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("at least one covariate is required".into()));
    }
    let l = correlation_matrix(k, pair_corr, shape)
        .cholesky()
        .ok_or_else(|| Error::Domain(format!("correlation {pair_corr} is not positive definite for {k} covariates")))?
        .unpack();
    let mut data = Vec::with_capacity(n * k);
    let mut z = DVector::zeros(k);
    for _ in 0..n {
        loop {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let row = &l * &z;
            match truncation {
                Truncation::Clip => {
                    data.extend(row.iter().map(|v| v.clamp(-BOUND, BOUND)));
                    break;
                }
                Truncation::Reject => {
                    if row.iter().all(|v| v.abs() <= BOUND) {
                        data.extend(row.iter());
                        break;
                    }
                }
            }
        }
    }
    Covariates::from_row_major(n, k, data)
}

#[derive(Debug, Clone)]
pub struct Response {
    pub y: DVector<f64>,
    pub noise_sd: f64,
    pub mu: DVector<f64>,
}

/// Regression function of `design` at `x` plus Gaussian noise at the given
/// sample signal to noise ratio.
pub fn gen_response<R: Rng + ?Sized>(x: &Covariates, design: Design, snr: f64, rng: &mut R) -> Result<Response> {
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(Error::Domain(format!("signal to noise ratio must be positive, got {snr}")));
    }
    if x.ncols() < design.min_covariates() {
        return Err(Error::Dimension(format!(
            "design {design:?} needs {} covariates, got {}",
            design.min_covariates(),
            x.ncols()
        )));
    }
    let n = x.nrows();
    let mut mu: DVector<f64> = match design {
        Design::Lin3 => DVector::from_fn(n, |i, _| (0..3).map(|k| x.get(i, k)).sum::<f64>() / 3.0),
        Design::LinAll => DVector::from_fn(n, |i, _| (0..10).map(|k| x.get(i, k)).sum::<f64>() / 10.0),
        Design::NonLinear => {
            let b: Vec<f64> = (1..=9)
                .map(|v| {
                    let c = 20.0 / v as f64;
                    Uniform::new_inclusive(-c, c).expect("finite bounds").sample(rng)
                })
                .collect();
            DVector::from_fn(n, |i, _| {
                let u = x.get(i, 3) / 2.0;
                x.get(i, 0) + b.iter().enumerate().map(|(v, bv)| bv * u.powi(v as i32 + 1)).sum::<f64>()
            })
        }
        Design::Bivariate => DVector::from_fn(n, |i, _| {
            let (a, c) = (x.get(i, 0), x.get(i, 1));
            0.5 * a + 1.5 * c - 4.0 * c * c + 3.0 * c * c * c
        }),
    };
    let var = sample_variance(mu.as_slice());
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Degenerate(format!("regression function has sample variance {var}")));
    }
    let noise_sd = match design {
        Design::Bivariate => {
            mu *= (snr / var).sqrt();
            1.0
        }
        _ => (var / snr).sqrt(),
    };
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(rng);
        mu[i] + noise_sd * e
    });
    Ok(Response { y, noise_sd, mu })
}
