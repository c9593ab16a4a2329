use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` points of fixed dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {nrows}x{ncols} design",
                data.len()
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { nrows: rows.len(), ncols, data })
    }

    /// Single-coordinate points.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self { nrows: values.len(), ncols: 1, data: values.to_vec() }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.data[i * self.ncols + k]).collect()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.ncols + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The first `count` rows.
    pub fn head(&self, count: usize) -> Self {
        let count = count.min(self.nrows);
        Self {
            nrows: count,
            ncols: self.ncols,
            data: self.data[..count * self.ncols].to_vec(),
        }
    }
}

/// Observations `(Y_i, X_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: Covariates,
    pub response_name: String,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: Covariates) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::Dimension(format!(
                "{} responses but {} covariate rows",
                y.len(),
                x.nrows()
            )));
        }
        let covariate_names = (1..=x.ncols()).map(|k| format!("x{k}")).collect();
        Ok(Self { y, x, response_name: "y".into(), covariate_names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Sample standard deviation of the response (n - 1 denominator).
    pub fn response_sd(&self) -> f64 {
        sample_variance(self.y.as_slice()).sqrt()
    }
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}
