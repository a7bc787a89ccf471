use serde::{Deserialize, Serialize};

use crate::diffcore::sequential_sum;
use crate::error::{Error, Result};

/// Regression errors. `mape` averages `|err| / |truth|` over points with a
/// nonzero truth; `mape_excluded` counts the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
    pub mape_excluded: usize,
}

pub fn compute_metrics(y_hat: &[f64], y_true: &[f64]) -> Result<Metrics> {
    if y_hat.len() != y_true.len() {
        return Err(Error::contract(format!(
            "metrics need equal lengths, got {} and {}",
            y_hat.len(),
            y_true.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::contract("metrics of an empty prediction set"));
    }
    let n = y_true.len();
    let err = || y_hat.iter().zip(y_true).map(|(p, t)| p - t);
    let mse = sequential_sum(err().map(|e| e * e)) / n as f64;
    let mae = sequential_sum(err().map(f64::abs)) / n as f64;
    let included: Vec<f64> = y_hat
        .iter()
        .zip(y_true)
        .filter(|(_, t)| **t != 0.0)
        .map(|(p, t)| (p - t).abs() / t.abs())
        .collect();
    let mape = if included.is_empty() {
        0.0
    } else {
        sequential_sum(included.iter().copied()) / included.len() as f64
    };
    Ok(Metrics {
        n,
        mse,
        mae,
        mape,
        mape_excluded: n - included.len(),
    })
}
