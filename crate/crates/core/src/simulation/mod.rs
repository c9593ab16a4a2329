//! Simulated designs and the Monte Carlo study of size and power.

mod designs;
mod dgp;
mod monte_carlo;

pub use designs::{
    null_kernel_for, Hypothesis, HypothesisSetup, InstrumentCoverage, SetupOptions, GAUSSIAN_LENGTHSCALE, SERIES_DECAY,
    SERIES_DEGREE,
};
pub use dgp::{correlation_matrix, gen_covariates, gen_response, CorrelationShape, Design, DgpSpec, Response, Truncation};
pub use monte_carlo::{run_monte_carlo, run_replicate, McConfig, RejectionRow, RejectionTable, ReplicateOutcome, CSV_HEADER};
