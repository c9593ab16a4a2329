//! CSV ingestion.

use std::path::Path;

use nalgebra::DVector;
use rkhs_spectest::{Covariates, Dataset};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Affine map applied to a covariate column: `(x - mean) / sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub scalers: Vec<Scaler>,
}

/// Reads a headed numeric CSV. `covariates = None` takes every column except
/// the response, in file order. Rows with missing or NaN cells are rejected
/// and reported by their 1-based data row number.
pub fn ingest_csv(path: &Path, response: &str, covariates: Option<&[String]>, standardize: bool) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::Data(format!("{}: empty file", path.display())));
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: no column named '{name}'", path.display())))
    };
    let y_col = find(response)?;
    let x_names: Vec<String> = match covariates {
        Some(c) => c.to_vec(),
        None => header.iter().filter(|h| h.as_str() != response).cloned().collect(),
    };
    if x_names.is_empty() {
        return Err(CliError::Data(format!("{}: no covariate columns", path.display())));
    }
    let x_cols = x_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut missing = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = i + 1;
        let cell = |c: usize| -> Result<f64> {
            let s = &record[c];
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.parse::<f64>().map_err(|_| {
                CliError::Data(format!("{}: row {row}, column '{}': '{s}' is not a number", path.display(), header[c]))
            })
        };
        let yi = cell(y_col)?;
        let xi = x_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        if yi.is_nan() || xi.iter().any(|v| v.is_nan()) {
            missing.push(row);
            continue;
        }
        y.push(yi);
        x.extend(xi);
    }
    if !missing.is_empty() {
        let rows: Vec<String> = missing.iter().map(usize::to_string).collect();
        return Err(CliError::Data(format!("{}: missing or NaN values in rows {}", path.display(), rows.join(", "))));
    }
    if y.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let n = y.len();
    let k = x_cols.len();
    let mut scalers = Vec::new();
    if standardize {
        for (c, name) in x_names.iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|i| x[i * k + c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = rkhs_spectest::data::sample_variance(&col).sqrt();
            if !(sd > 0.0) {
                return Err(CliError::Data(format!("column '{name}' is constant and cannot be standardized")));
            }
            for i in 0..n {
                x[i * k + c] = (x[i * k + c] - mean) / sd;
            }
            scalers.push(Scaler { column: name.clone(), mean, sd });
        }
    }
    let mut dataset = Dataset::new(DVector::from_vec(y), Covariates::from_row_major(n, k, x)?)?;
    dataset.response_name = response.to_string();
    dataset.covariate_names = x_names;
    Ok(Ingested { dataset, scalers })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        },
        _ => CliError::Data(format!("{}: {e}", path.display())),
    }
}
