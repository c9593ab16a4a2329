use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::designs::{null_kernel_for, Hypothesis, SetupOptions};
use super::dgp::{CorrelationShape, DgpSpec};
use crate::error::{Error, Result};
use crate::estimator::FitConfig;
use crate::exec::Exec;
use crate::hypothesis::{run_test, CovarianceVariant, ProjRho, TestSpec, WeightSource};
use crate::loss::LossKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub null: Hypothesis,
    pub replicates: usize,
    pub sizes: Vec<f64>,
    pub loss: LossKind,
    /// Overrides the hypothesis' default restricted fit.
    pub fit: Option<FitConfig>,
    pub setup: SetupOptions,
    pub proj_rho: ProjRho,
    pub covariance: CovarianceVariant,
    pub null_draws: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl McConfig {
    pub fn new(dgp: DgpSpec, null: Hypothesis, replicates: usize) -> Self {
        Self {
            dgp,
            null,
            replicates,
            sizes: vec![0.05],
            loss: LossKind::RescaledSquare,
            fit: None,
            setup: SetupOptions::default(),
            proj_rho: ProjRho::default(),
            covariance: CovarianceVariant::ProductForm,
            null_draws: 10_000,
            seed: 0,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("at least one replicate is required".into()));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::Domain("nominal sizes must lie in (0, 1)".into()));
        }
        if self.null_draws == 0 {
            return Err(Error::InvalidArgument("at least one null draw is required".into()));
        }
        Ok(())
    }

    /// The test run on each replicate (seed filled in per replicate).
    pub fn test_spec(&self) -> Result<TestSpec> {
        let setup = null_kernel_for(self.null, self.dgp.k, &self.setup)?;
        let mut fit = self.fit.clone().unwrap_or(setup.default_fit);
        fit.validate()?;
        // replicates already run in parallel
        fit.exec = Exec::Sequential;
        Ok(TestSpec {
            null_kernel: setup.split.r0,
            instruments: setup.instruments,
            projection: setup.projection,
            fit,
            proj_rho: self.proj_rho,
            weights: WeightSource::Estimated,
            covariance: self.covariance,
            null_draws: self.null_draws,
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub naive_statistic: f64,
    pub naive_p_value: f64,
}

/// Data and test of replicate `r`, drawn from the stream `(seed, r)`.
pub fn run_replicate(config: &McConfig, spec: &TestSpec, r: usize) -> Result<ReplicateOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(r as u64);
    let data = config.dgp.generate(&mut rng)?;
    let mut spec = spec.clone();
    spec.seed = rng.next_u64();
    let res = run_test(&data, &config.loss, &spec)?;
    Ok(ReplicateOutcome {
        statistic: res.statistic,
        p_value: res.p_value,
        naive_statistic: res.naive.statistic,
        naive_p_value: res.naive.p_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub design: String,
    pub null: String,
    pub n: usize,
    pub rho: f64,
    pub snr: f64,
    pub size: f64,
    pub freq_no_pi: f64,
    pub freq_pi: f64,
    /// `sqrt(f (1 - f) / replicates)` of the projected column.
    pub mc_se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    pub rows: Vec<RejectionRow>,
    pub correlation: CorrelationShape,
    pub outcomes: Vec<ReplicateOutcome>,
    /// Replicates aborted by an error, with the message.
    pub failures: Vec<(usize, String)>,
}

pub const CSV_HEADER: &str = "design,null,n,rho,snr,size,freq_no_pi,freq_pi,mc_se,replicates";

impl RejectionTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.design, r.null, r.n, r.rho, r.snr, r.size, r.freq_no_pi, r.freq_pi, r.mc_se, r.replicates
            );
        }
        s
    }

    pub fn to_aligned_text(&self) -> String {
        let shape = match self.correlation {
            CorrelationShape::Geometric => "rho^|k-l|",
            CorrelationShape::Equi => "equal pairwise",
        };
        let mut s = format!("correlation: {shape}\n");
        let _ = writeln!(
            s,
            "{:<10} {:<11} {:>6} {:>5} {:>5} {:>5} {:>6} {:>6} {:>7} {:>5}",
            "design", "null", "n", "rho", "snr", "size", "no-pi", "pi", "mc-se", "reps"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<11} {:>6} {:>5.2} {:>5.2} {:>5.2} {:>6.3} {:>6.3} {:>7.4} {:>5}",
                r.design, r.null, r.n, r.rho, r.snr, r.size, r.freq_no_pi, r.freq_pi, r.mc_se, r.replicates
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "failed replicates: {}", self.failures.len());
        }
        s
    }
}

/// Rejection frequencies of the projected and naive tests over independent
/// replicates. Failed replicates are excluded from the frequencies and listed.
pub fn run_monte_carlo(config: &McConfig) -> Result<RejectionTable> {
    config.validate()?;
    let spec = config.test_spec()?;
    let results = config.exec.map(config.replicates, |r| run_replicate(config, &spec, r));
    let mut outcomes = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} replicates failed; first error: {}",
            failures.len(),
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        )));
    }
    let done = outcomes.len();
    let rows = config
        .sizes
        .iter()
        .map(|&size| {
            let freq = |f: &dyn Fn(&ReplicateOutcome) -> f64| {
                outcomes.iter().filter(|o| f(o) <= size).count() as f64 / done as f64
            };
            let freq_pi = freq(&|o| o.p_value);
            RejectionRow {
                design: format!("{:?}", config.dgp.design),
                null: format!("{:?}", config.null),
                n: config.dgp.n,
                rho: config.dgp.pair_corr,
                snr: config.dgp.snr,
                size,
                freq_no_pi: freq(&|o| o.naive_p_value),
                freq_pi,
                mc_se: (freq_pi * (1.0 - freq_pi) / done as f64).sqrt(),
                replicates: done,
            }
        })
        .collect();
    Ok(RejectionTable { rows, correlation: config.dgp.correlation, outcomes, failures })
}
