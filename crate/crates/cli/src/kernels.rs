//! Kernel terms as written in a run manifest.

use rkhs_spectest::hypothesis::{FeatureColumn, InstrumentSpec, ProjectionTarget};
use rkhs_spectest::kernel::Selector;
use rkhs_spectest::{Kernel, SeriesKernel};
use serde::{Deserialize, Serialize};

use crate::config::InstrumentChoice;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKernel {
    Constant,
    Linear,
    /// `sum_v v^-decay (st)^v`, v = 1..degree, one copy per coordinate.
    Polynomial,
    /// As `polynomial` without the linear term.
    PolynomialNoLinear,
    Gaussian,
}

/// One kernel term. Series kernels (`linear`, `polynomial*`) are additive
/// over `coords`; `gaussian` acts jointly on them. No `coords` means all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub kernel: BaseKernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn one() -> f64 {
    1.0
}

fn default_lengthscale() -> f64 {
    0.75
}

fn default_degree() -> u32 {
    10
}

fn default_decay() -> f64 {
    2.2
}

impl TermSpec {
    fn coords(&self, k: usize) -> Result<Vec<usize>> {
        let c = self.coords.clone().unwrap_or_else(|| (0..k).collect());
        if let Some(bad) = c.iter().find(|&&j| j >= k) {
            return Err(CliError::Config(format!("coordinate {bad} out of range for {k} covariates")));
        }
        Ok(c)
    }

    fn series(&self) -> Result<Option<SeriesKernel>> {
        Ok(match self.kernel {
            BaseKernel::Linear => Some(SeriesKernel::linear(self.scale)?),
            BaseKernel::Polynomial => Some(self.polynomial()?),
            BaseKernel::PolynomialNoLinear => {
                let p = self.polynomial()?;
                if p.len() < 2 {
                    return Err(CliError::Config("polynomial_no_linear needs degree >= 2".into()));
                }
                Some(SeriesKernel::new(p.weights()[1..].to_vec(), p.features()[1..].to_vec(), p.decay())?)
            }
            _ => None,
        })
    }

    fn polynomial(&self) -> Result<SeriesKernel> {
        let p = SeriesKernel::polynomial(self.degree, self.decay)?;
        let w = p.weights().iter().map(|w| w * self.scale).collect();
        Ok(SeriesKernel::new(w, p.features().to_vec(), p.decay())?)
    }

    /// Per-coordinate series pieces, or `None` for joint kernels.
    fn series_pieces(&self, k: usize) -> Result<Option<Vec<(usize, SeriesKernel)>>> {
        match self.series()? {
            Some(s) => Ok(Some(self.coords(k)?.into_iter().map(|c| (c, s.clone())).collect())),
            None => Ok(None),
        }
    }

    pub fn build(&self, k: usize) -> Result<Kernel> {
        if let Some(pieces) = self.series_pieces(k)? {
            return Ok(Kernel::sum(pieces.into_iter().map(|(c, s)| Kernel::Series(s).on(Selector::coord(c)))));
        }
        let base = match self.kernel {
            BaseKernel::Constant => Kernel::constant(self.scale)?,
            BaseKernel::Gaussian => Kernel::gaussian(self.lengthscale)?.scaled(self.scale),
            _ => unreachable!("series kernels handled above"),
        };
        Ok(match &self.coords {
            None => base,
            Some(_) => base.on(Selector::Coords(self.coords(k)?)),
        })
    }
}

pub fn build_sum(terms: &[TermSpec], k: usize) -> Result<Kernel> {
    let parts = terms.iter().map(|t| t.build(k)).collect::<Result<Vec<_>>>()?;
    Ok(if parts.len() == 1 { parts.into_iter().next().expect("one term") } else { Kernel::sum(parts) })
}

fn all_series(terms: &[TermSpec], k: usize) -> Result<Option<Vec<(usize, SeriesKernel)>>> {
    let mut out = Vec::new();
    for t in terms {
        match t.series_pieces(k)? {
            Some(p) => out.extend(p),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

fn columns(pieces: Vec<(usize, SeriesKernel)>) -> Vec<FeatureColumn> {
    pieces
        .into_iter()
        .flat_map(|(coord, kernel)| (0..kernel.len()).map(move |term| FeatureColumn { coord, kernel: kernel.clone(), term }))
        .collect()
}

/// Instruments and projection target for explicit null/alternative terms.
pub fn custom_test_setup(
    null: &[TermSpec],
    alternative: &[TermSpec],
    k: usize,
    choice: InstrumentChoice,
    sections: Option<usize>,
) -> Result<(InstrumentSpec, ProjectionTarget)> {
    let alt_series = all_series(alternative, k)?;
    let instruments = match (choice, alt_series) {
        (InstrumentChoice::Auto | InstrumentChoice::Series, Some(p)) => InstrumentSpec::SeriesFeatures(columns(p)),
        (InstrumentChoice::Series, None) => {
            return Err(CliError::Config("series instruments need a series alternative kernel".into()))
        }
        _ => InstrumentSpec::SampleSections { kernel: build_sum(alternative, k)?, count: sections },
    };
    let projection = match all_series(null, k)? {
        Some(p) => ProjectionTarget::Features(columns(p)),
        None => ProjectionTarget::NullGram,
    };
    Ok((instruments, projection))
}
