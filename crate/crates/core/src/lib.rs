//! Kernel ridge and Frank-Wolfe estimation in additive RKHS models, with a
//! projected-instrument specification test and its Monte Carlo harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod hypothesis;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod simulation;

pub use data::{Covariates, Dataset};
pub use error::{Error, Result};
pub use exec::Exec;
pub use kernel::{Kernel, NullAltSplit, SeriesKernel};
pub use loss::{Loss, LossKind};
