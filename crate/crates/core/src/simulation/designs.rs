//! Restricted kernels, instruments and projections for each null hypothesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{BudgetRule, FitConfig};
use crate::hypothesis::{FeatureColumn, InstrumentSpec, ProjectionTarget};
use crate::kernel::{Kernel, NullAltSplit, SeriesKernel, Selector};

/// Polynomial series degree and weight decay of the additive alternative.
pub const SERIES_DEGREE: u32 = 10;
pub const SERIES_DECAY: f64 = 2.2;
/// Lengthscale of the Gaussian pieces in the bivariate designs.
pub const GAUSSIAN_LENGTHSCALE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Linear in the first one, two, three or ten covariates.
    Lin1,
    Lin2,
    Lin3,
    LinAll,
    /// Linear in the first covariate, additive polynomial in the rest.
    LinPoly,
    /// Bivariate: linear plus a Gaussian piece in the second covariate.
    Lin1NonLin,
    /// Bivariate: linear in both covariates.
    BivLinAll,
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin1" => Ok(Hypothesis::Lin1),
            "lin2" => Ok(Hypothesis::Lin2),
            "lin3" => Ok(Hypothesis::Lin3),
            "linall" => Ok(Hypothesis::LinAll),
            "linpoly" => Ok(Hypothesis::LinPoly),
            "lin1nonlin" => Ok(Hypothesis::Lin1NonLin),
            "bivlinall" => Ok(Hypothesis::BivLinAll),
            _ => Err(Error::UnknownHypothesis(s.to_string())),
        }
    }
}

impl Hypothesis {
    pub fn is_bivariate(self) -> bool {
        matches!(self, Hypothesis::Lin1NonLin | Hypothesis::BivLinAll)
    }

    fn linear_count(self) -> Option<usize> {
        match self {
            Hypothesis::Lin1 => Some(1),
            Hypothesis::Lin2 => Some(2),
            Hypothesis::Lin3 => Some(3),
            Hypothesis::LinAll => Some(10),
            _ => None,
        }
    }
}

/// Which covariates the polynomial test functions of the linear hypotheses
/// are built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentCoverage {
    /// Powers 2..10 of every covariate.
    #[default]
    AllCovariates,
    /// Powers 2..10 of the covariates that enter the null only.
    NullCovariatesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetupOptions {
    pub coverage: InstrumentCoverage,
    /// Number of kernel-section instruments in the bivariate designs; all
    /// sample points when unset.
    pub sections: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct HypothesisSetup {
    pub split: NullAltSplit,
    pub instruments: InstrumentSpec,
    pub projection: ProjectionTarget,
    /// Greedy fit for the additive designs, constrained ridge for the
    /// bivariate ones; both with budget ten response standard deviations.
    pub default_fit: FitConfig,
}

fn poly() -> SeriesKernel {
    SeriesKernel::polynomial(SERIES_DEGREE, SERIES_DECAY).expect("valid polynomial series")
}

/// Terms `v = 2..=10` of the polynomial series.
fn poly_without_linear() -> Result<SeriesKernel> {
    let p = poly();
    SeriesKernel::new(p.weights()[1..].to_vec(), p.features()[1..].to_vec(), p.decay())
}

fn feature(coord: usize, term: usize) -> FeatureColumn {
    FeatureColumn { coord, kernel: poly(), term }
}

fn series_on(k: SeriesKernel, coord: usize) -> Kernel {
    Kernel::Series(k).on(Selector::coord(coord))
}

pub fn null_kernel_for(h: Hypothesis, k: usize, opts: &SetupOptions) -> Result<HypothesisSetup> {
    let need = match h {
        Hypothesis::LinPoly => 2,
        _ if h.is_bivariate() => 2,
        _ => h.linear_count().expect("linear hypothesis"),
    };
    if k < need {
        return Err(Error::InvalidArgument(format!("{h:?} needs at least {need} covariates, got {k}")));
    }
    if h.is_bivariate() {
        return bivariate(h, opts);
    }
    let greedy = FitConfig::default();
    if h == Hypothesis::LinPoly {
        let r0 = Kernel::sum(
            std::iter::once(Kernel::linear(1.0)?.on(Selector::coord(0))).chain((1..k).map(|c| series_on(poly(), c))),
        );
        let r1 = series_on(poly_without_linear()?, 0);
        let instruments = (1..SERIES_DEGREE as usize).map(|v| feature(0, v)).collect();
        let projection = std::iter::once(feature(0, 0))
            .chain((1..k).flat_map(|c| (0..SERIES_DEGREE as usize).map(move |v| feature(c, v))))
            .collect();
        return Ok(HypothesisSetup {
            split: NullAltSplit { r0, r1 },
            instruments: InstrumentSpec::SeriesFeatures(instruments),
            projection: ProjectionTarget::Features(projection),
            default_fit: greedy,
        });
    }
    let j = h.linear_count().expect("linear hypothesis");
    let r0 = Kernel::sum((0..j).map(|c| Kernel::linear(1.0).map(|l| l.on(Selector::coord(c)))).collect::<Result<Vec<_>>>()?);
    let mut r1 = Vec::with_capacity(k);
    for c in 0..k {
        r1.push(if c < j { series_on(poly_without_linear()?, c) } else { series_on(poly(), c) });
    }
    let covered = match opts.coverage {
        InstrumentCoverage::AllCovariates => k,
        InstrumentCoverage::NullCovariatesOnly => j,
    };
    let instruments = (0..covered)
        .flat_map(|c| (1..SERIES_DEGREE as usize).map(move |v| feature(c, v)))
        .collect();
    let projection = (0..j).map(|c| feature(c, 0)).collect();
    Ok(HypothesisSetup {
        split: NullAltSplit { r0, r1: Kernel::sum(r1) },
        instruments: InstrumentSpec::SeriesFeatures(instruments),
        projection: ProjectionTarget::Features(projection),
        default_fit: greedy,
    })
}

fn bivariate(h: Hypothesis, opts: &SetupOptions) -> Result<HypothesisSetup> {
    let affine = Kernel::sum([Kernel::constant(1.0)?, Kernel::linear(1.0)?.on(Selector::Coords(vec![0, 1]))]).scaled(0.5);
    let gauss = |coords: Vec<usize>| -> Result<Kernel> {
        Ok(Kernel::gaussian(GAUSSIAN_LENGTHSCALE)?.on(Selector::Coords(coords)).scaled(0.5))
    };
    let (r0, r1) = match h {
        Hypothesis::Lin1NonLin => (Kernel::sum([affine, gauss(vec![1])?]), gauss(vec![0])?),
        _ => (affine, gauss(vec![0, 1])?),
    };
    Ok(HypothesisSetup {
        instruments: InstrumentSpec::SampleSections { kernel: r1.clone(), count: opts.sections },
        split: NullAltSplit { r0, r1 },
        projection: ProjectionTarget::NullGram,
        default_fit: FitConfig::ridge(BudgetRule::ResponseSd(10.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(spec: &InstrumentSpec) -> usize {
        match spec {
            InstrumentSpec::SeriesFeatures(c) => c.len(),
            _ => 0,
        }
    }

    #[test]
    fn lin3_sets() {
        let s = null_kernel_for(Hypothesis::Lin3, 10, &SetupOptions::default()).unwrap();
        assert_eq!(count(&s.instruments), 90);
        let lit = SetupOptions { coverage: InstrumentCoverage::NullCovariatesOnly, sections: None };
        let s = null_kernel_for(Hypothesis::Lin3, 10, &lit).unwrap();
        assert_eq!(count(&s.instruments), 27);
        let x = [0.3, -0.2, 0.5, 1.0, 0.1, 0.0, 0.2, 0.3, -1.0, 0.4];
        let y = [0.1, 0.4, -0.5, 0.2, 0.7, 1.0, 0.0, -0.3, 0.5, 0.6];
        assert!((s.split.r0.eval(&x, &y).unwrap() - (0.03 - 0.08 - 0.25)).abs() < 1e-15);
        match crate::estimator::GreedyBasis::from_kernel(&s.split.r0, true) {
            crate::estimator::GreedyBasis::Series(c) => {
                assert_eq!(c.iter().map(|(k, _)| *k).collect::<Vec<_>>(), vec![0, 1, 2])
            }
            _ => panic!("series basis expected"),
        }
        match s.projection {
            ProjectionTarget::Features(c) => assert_eq!(c.len(), 3),
            _ => panic!("feature projection expected"),
        }
    }

    #[test]
    fn linear_split_adds_up_to_the_full_polynomial() {
        let s = null_kernel_for(Hypothesis::Lin2, 3, &SetupOptions::default()).unwrap();
        let x = [0.3, -1.2, 0.8];
        let y = [1.1, 0.4, -0.6];
        let full: f64 = (0..3).map(|c| poly().eval_scalar(x[c], y[c])).sum();
        assert!((s.split.full().eval(&x, &y).unwrap() - full).abs() < 1e-14);
    }

    #[test]
    fn linpoly_sets() {
        let s = null_kernel_for(Hypothesis::LinPoly, 10, &SetupOptions::default()).unwrap();
        assert_eq!(count(&s.instruments), 9);
        match s.projection {
            ProjectionTarget::Features(c) => assert_eq!(c.len(), 91),
            _ => panic!("feature projection expected"),
        }
    }

    #[test]
    fn bivariate_kernels() {
        let s = null_kernel_for(Hypothesis::BivLinAll, 2, &SetupOptions::default()).unwrap();
        let a = [0.5, -1.0];
        let b = [1.0, 0.25];
        assert!((s.split.r0.eval(&a, &b).unwrap() - 0.5 * (1.0 + 0.5 - 0.25)).abs() < 1e-15);
        let d2: f64 = 0.25 + 1.5625;
        let g = 0.5 * (-0.5 * d2 / (0.75 * 0.75)).exp();
        assert!((s.split.r1.eval(&a, &b).unwrap() - g).abs() < 1e-15);
    }

    #[test]
    fn unknown_names() {
        assert!(matches!("Lin4".parse::<Hypothesis>(), Err(Error::UnknownHypothesis(_))));
        assert_eq!("linall".parse::<Hypothesis>().unwrap(), Hypothesis::LinAll);
    }
}
