//! Local Moran's I over a batch graph.
//!
//! With `z_i = y_i - mean(y)` and `m2 = (1/n) Σ z_k²`,
//! `I_i = (z_i / m2) Σ_j w_ij z_j`, where `w` are row-standardized weights
//! over the in-neighbours of `i`.

use serde::{Deserialize, Serialize};

use crate::diffcore::sequential_sum;
use crate::error::{Error, Result};
use crate::spatialgraph::{row_standardized_weights, SpatialGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScheme {
    RowStandardizedKnn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoran {
    pub values: Vec<f64>,
    pub weight_scheme: WeightScheme,
}

impl LocalMoran {
    pub fn mean(&self) -> f64 {
        sequential_sum(self.values.iter().copied()) / self.values.len() as f64
    }
}

pub fn local_moran(y: &[f64], g: &SpatialGraph) -> Result<LocalMoran> {
    let n = y.len();
    if n < 2 {
        return Err(Error::contract(format!("local Moran's I needs n >= 2, got {n}")));
    }
    if n != g.n_nodes() {
        return Err(Error::Dimension {
            op: "local_moran",
            left: (g.n_nodes(), 1),
            right: (n, 1),
        });
    }
    let mean = sequential_sum(y.iter().copied()) / n as f64;
    let z: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let m2 = sequential_sum(z.iter().map(|v| v * v)) / n as f64;
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m2.is_nan() || m2 <= 0.0 || m2.sqrt() <= 1e-12 * scale {
        return Err(Error::contract("constant field: local Moran's I needs nonzero variance"));
    }
    let w = row_standardized_weights(g)?;
    let values = (0..n)
        .map(|i| {
            let lag = sequential_sum(g.in_edges(i).map(|e| w[e] * z[g.sources()[e]]));
            z[i] / m2 * lag
        })
        .collect();
    Ok(LocalMoran {
        values,
        weight_scheme: WeightScheme::RowStandardizedKnn,
    })
}

/// Auxiliary-task targets for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct MoranTarget {
    pub values: Vec<f64>,
    /// Set when the batch was constant and zero targets were substituted.
    pub constant_fallback: bool,
}

/// Local Moran's I of a batch computed on that batch's own graph. A constant
/// batch yields zero targets and a warning instead of an error.
pub fn moran_target_for_batch(y_batch: &[f64], g_batch: &SpatialGraph) -> Result<MoranTarget> {
    match local_moran(y_batch, g_batch) {
        Ok(m) => Ok(MoranTarget {
            values: m.values,
            constant_fallback: false,
        }),
        Err(Error::Contract(msg)) if msg.starts_with("constant field") => {
            log::warn!("constant target batch of {} points; Moran targets set to zero", y_batch.len());
            Ok(MoranTarget {
                values: vec![0.0; y_batch.len()],
                constant_fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
