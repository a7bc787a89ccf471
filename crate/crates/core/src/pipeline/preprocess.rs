use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::data::{PointSet, Scale};
use crate::diffcore::sequential_sum;
use crate::error::{Error, Result};

/// Statistics fitted on the training split and reused for every other split
/// and at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub feature_names: Vec<String>,
    /// Indices (into the input features) that survive the zero-variance filter.
    pub kept: Vec<usize>,
    pub dropped: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub coord_min: [f64; 2],
    pub coord_max: [f64; 2],
    /// Mean and standard deviation of the log target over the training split;
    /// the network regresses the standardized log target.
    pub log_target_mean: f64,
    pub log_target_sd: f64,
}

/// A point set in model space plus unit-square coordinates for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Raw coordinates, standardized kept features, natural-log target.
    pub points: PointSet,
    pub unit_coords: Array2<f64>,
}

impl Prepared {
    pub fn subset(&self, idx: &[usize]) -> Prepared {
        Prepared {
            points: self.points.subset(idx),
            unit_coords: self.unit_coords.select(Axis(0), idx),
        }
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = sequential_sum(values.clone()) / n;
    let var = sequential_sum(values.map(|v| (v - mean) * (v - mean))) / n;
    (mean, var.sqrt())
}

fn is_degenerate(mean: f64, sd: f64) -> bool {
    sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0)
}

impl TransformRecord {
    /// Fits feature standardization, coordinate extents and log-target
    /// moments on the rows `train`.
    pub fn fit(ps: &PointSet, train: &[usize]) -> Result<Self> {
        if ps.scale != Scale::Raw {
            return Err(Error::contract("transform must be fitted on raw data"));
        }
        if train.len() < 2 {
            return Err(Error::contract("transform needs at least two training rows"));
        }
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut feature_mean = Vec::new();
        let mut feature_sd = Vec::new();
        for c in 0..ps.n_features() {
            let col = ps.features.column(c);
            let (m, s) = mean_sd(train.iter().map(|&r| col[r]));
            if is_degenerate(m, s) {
                log::warn!("dropping zero-variance feature `{}`", ps.names[c]);
                dropped.push(ps.names[c].clone());
            } else {
                kept.push(c);
                feature_mean.push(m);
                feature_sd.push(s);
            }
        }
        let mut coord_min = [f64::INFINITY; 2];
        let mut coord_max = [f64::NEG_INFINITY; 2];
        for &r in train {
            for d in 0..2 {
                coord_min[d] = coord_min[d].min(ps.coords[[r, d]]);
                coord_max[d] = coord_max[d].max(ps.coords[[r, d]]);
            }
        }
        let (log_target_mean, log_target_sd) = mean_sd(train.iter().map(|&r| ps.target[r].ln()));
        if is_degenerate(log_target_mean, log_target_sd) {
            return Err(Error::contract("training target is constant"));
        }
        Ok(Self {
            feature_names: ps.names.clone(),
            kept,
            dropped,
            feature_mean,
            feature_sd,
            coord_min,
            coord_max,
            log_target_mean,
            log_target_sd,
        })
    }

    pub fn kept_names(&self) -> Vec<String> {
        self.kept.iter().map(|&c| self.feature_names[c].clone()).collect()
    }

    /// Maps raw data into model space. Applying to data that is already in
    /// model space is an error.
    pub fn apply(&self, ps: &PointSet) -> Result<Prepared> {
        if ps.scale != Scale::Raw {
            return Err(Error::contract("point set has already been transformed"));
        }
        if ps.names != self.feature_names {
            return Err(Error::contract(format!(
                "feature mismatch: transform expects {} features {:?}, data has {} {:?}",
                self.feature_names.len(),
                self.feature_names,
                ps.names.len(),
                ps.names
            )));
        }
        let n = ps.len();
        let mut features = Array2::zeros((n, self.kept.len()));
        for (k, &c) in self.kept.iter().enumerate() {
            let (m, s) = (self.feature_mean[k], self.feature_sd[k]);
            for r in 0..n {
                features[[r, k]] = (ps.features[[r, c]] - m) / s;
            }
        }
        let unit_coords = Array2::from_shape_fn((n, 2), |(r, d)| {
            let span = self.coord_max[d] - self.coord_min[d];
            let span = if span > 0.0 { span } else { 1.0 };
            (ps.coords[[r, d]] - self.coord_min[d]) / span
        });
        let points = PointSet {
            coords: ps.coords.clone(),
            features,
            target: ps.target.iter().map(|t| t.ln()).collect(),
            names: self.kept_names(),
            scale: Scale::Model,
        };
        Ok(Prepared { points, unit_coords })
    }

    pub fn standardize_log(&self, log_target: f64) -> f64 {
        (log_target - self.log_target_mean) / self.log_target_sd
    }

    pub fn unstandardize_log(&self, z: f64) -> f64 {
        z * self.log_target_sd + self.log_target_mean
    }

    /// Log-scale prediction back to the raw target scale.
    pub fn invert(&self, log_value: f64) -> f64 {
        log_value.exp()
    }
}

/// Fits the transform on `train` rows and applies it to the whole set.
pub fn preprocess(ps: &PointSet, train: &[usize]) -> Result<(Prepared, TransformRecord)> {
    let record = TransformRecord::fit(ps, train)?;
    let prepared = record.apply(ps)?;
    Ok((prepared, record))
}
