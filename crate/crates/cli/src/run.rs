//! Executes a resolved configuration and renders the result.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rkhs_spectest::estimator::{fit, FittedModel};
use rkhs_spectest::hypothesis::{run_test, TestResult, TestSpec};
use rkhs_spectest::simulation::{null_kernel_for, run_monte_carlo, RejectionTable};
use rkhs_spectest::{Exec, Kernel};
use serde::Serialize;

use crate::config::{Command, Format, RunConfig};
use crate::data::{ingest_csv, Ingested, Scaler};
use crate::error::{CliError, Result};
use crate::kernels::{build_sum, custom_test_setup};

#[derive(Debug, Clone)]
pub enum Outcome {
    Fit { model: FittedModel, scalers: Vec<Scaler> },
    Test { result: TestResult, scalers: Vec<Scaler> },
    Simulate(RejectionTable),
}

pub fn execute(config: &RunConfig) -> Result<Outcome> {
    let fit_config = {
        let mut f = config.model.fit.clone().expect("resolved config");
        f.exec = exec_for(config);
        f
    };
    match config.command {
        Command::Simulate => {
            let mut mc = config.mc_config().expect("validated simulate config");
            mc.exec = exec_for(config);
            Ok(Outcome::Simulate(run_monte_carlo(&mc)?))
        }
        Command::Fit => {
            let Ingested { dataset, scalers } = ingest(config)?;
            let kernel = match config.model.hypothesis {
                Some(h) => null_kernel_for(h, dataset.dim(), &config.setup_options())?.split.full(),
                None => {
                    let mut terms = config.model.null.clone();
                    terms.extend(config.model.alternative.iter().cloned());
                    build_sum(&terms, dataset.dim())?
                }
            };
            let model = fit(&dataset, &config.model.loss, &kernel, &fit_config)?;
            Ok(Outcome::Fit { model, scalers })
        }
        Command::Test => {
            let Ingested { dataset, scalers } = ingest(config)?;
            let k = dataset.dim();
            let (null_kernel, instruments, projection): (Kernel, _, _) = match config.model.hypothesis {
                Some(h) => {
                    let s = null_kernel_for(h, k, &config.setup_options())?;
                    (s.split.r0, s.instruments, s.projection)
                }
                None => {
                    let (i, p) = custom_test_setup(
                        &config.model.null,
                        &config.model.alternative,
                        k,
                        config.test.instruments,
                        config.test.sections,
                    )?;
                    (build_sum(&config.model.null, k)?, i, p)
                }
            };
            let mut spec = TestSpec::new(null_kernel, instruments, projection);
            spec.fit = fit_config;
            spec.proj_rho = config.test.proj_rho;
            spec.covariance = config.test.covariance;
            spec.null_draws = config.test.null_draws;
            spec.seed = config.seed.unwrap_or_default();
            let result = run_test(&dataset, &config.model.loss, &spec)?;
            Ok(Outcome::Test { result, scalers })
        }
    }
}

fn exec_for(config: &RunConfig) -> Exec {
    if config.threads == Some(1) {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn ingest(config: &RunConfig) -> Result<Ingested> {
    let d = config.data.as_ref().expect("validated data config");
    ingest_csv(&d.path, &d.response, d.covariates.as_deref(), d.standardize)
}

#[derive(Serialize)]
struct WithScalers<'a, T> {
    #[serde(flatten)]
    inner: &'a T,
    #[serde(skip_serializing_if = "<[Scaler]>::is_empty")]
    scalers: &'a [Scaler],
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialise");
    s.push('\n');
    s
}

pub fn render(outcome: &Outcome, format: Format) -> String {
    match (outcome, format) {
        (Outcome::Simulate(t), Format::Csv) => t.to_csv(),
        (Outcome::Simulate(t), Format::AlignedText) => t.to_aligned_text(),
        (Outcome::Simulate(t), Format::Json) => json(t),
        (Outcome::Fit { model, scalers }, Format::Json) => json(&WithScalers { inner: model, scalers }),
        (Outcome::Fit { model, .. }, Format::Csv) => {
            let mut s = String::from("index,fitted\n");
            for (i, v) in model.fitted.iter().enumerate() {
                let _ = writeln!(s, "{i},{v}");
            }
            s
        }
        (Outcome::Fit { model, scalers }, Format::AlignedText) => {
            let mut s = String::new();
            let rows = [
                ("n", model.fitted.len().to_string()),
                ("budget", model.budget.to_string()),
                ("norm_hk", model.norm_hk.to_string()),
                ("norm_lk", model.norm_lk.to_string()),
                ("ridge_rho", model.ridge_rho.to_string()),
                ("iterations", model.trace.len().to_string()),
                ("risk", model.risk().map_or("-".into(), |r| r.to_string())),
            ];
            for (k, v) in rows {
                let _ = writeln!(s, "{k:<12}{v}");
            }
            scaler_lines(&mut s, scalers);
            s
        }
        (Outcome::Test { result, scalers }, Format::Json) => json(&WithScalers { inner: result, scalers }),
        (Outcome::Test { result: r, .. }, Format::Csv) => format!(
            "statistic,p_value,naive_statistic,naive_p_value,instruments,n,proj_rho,draws,seed\n{},{},{},{},{},{},{},{},{}\n",
            r.statistic, r.p_value, r.naive.statistic, r.naive.p_value, r.instruments, r.n, r.proj_rho, r.draws, r.seed
        ),
        (Outcome::Test { result: r, scalers }, Format::AlignedText) => {
            let mut s = String::new();
            let top: Vec<String> = r.spectrum.iter().take(5).map(|w| format!("{w:.6e}")).collect();
            let rows = [
                ("statistic", r.statistic.to_string()),
                ("p_value", r.p_value.to_string()),
                ("naive_stat", r.naive.statistic.to_string()),
                ("naive_p", r.naive.p_value.to_string()),
                ("instruments", r.instruments.to_string()),
                ("n", r.n.to_string()),
                ("proj_rho", r.proj_rho.to_string()),
                ("draws", r.draws.to_string()),
                ("seed", r.seed.to_string()),
                ("eigenvalues", top.join(" ")),
                ("scaling", r.scaling_note.clone()),
            ];
            for (k, v) in rows {
                let _ = writeln!(s, "{k:<12}{v}");
            }
            scaler_lines(&mut s, scalers);
            s
        }
    }
}

fn scaler_lines(s: &mut String, scalers: &[Scaler]) {
    for sc in scalers {
        let _ = writeln!(s, "scaler      {} mean={} sd={}", sc.column, sc.mean, sc.sd);
    }
}

/// Path of the resolved-config file written next to `out`.
pub fn config_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".config.toml");
    PathBuf::from(p)
}

/// Writes the rendered result and the resolved config. Without an output
/// path the result goes to `stdout` and the config is returned for the caller
/// to print elsewhere.
pub fn emit(config: &RunConfig, body: &str) -> Result<Option<String>> {
    let echoed = config.to_toml_string()?;
    match &config.output.path {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| CliError::io(path, e))?;
            let cp = config_path(path);
            std::fs::write(&cp, &echoed).map_err(|e| CliError::io(cp, e))?;
            Ok(None)
        }
        None => Ok(Some(echoed)),
    }
}
