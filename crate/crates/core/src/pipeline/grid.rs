use std::fmt::Write;

use ndarray::ArrayView2;

use crate::diffcore::sequential_sum;
use crate::error::{Error, Result};

/// Per-cell means of a value field over the coordinate bounding box.
/// Row index follows the second coordinate, column index the first.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub grid_n: usize,
    pub min: [f64; 2],
    pub max: [f64; 2],
    /// Row-major, `None` for empty cells.
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

fn cell_of(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let c = ((v - lo) / (hi - lo) * n as f64).floor();
    (c.max(0.0) as usize).min(n - 1)
}

pub fn spatial_variance_grid(coords: ArrayView2<'_, f64>, values: &[f64], grid_n: usize) -> Result<SpatialGrid> {
    if grid_n < 2 {
        return Err(Error::contract(format!("grid_n must be at least 2, got {grid_n}")));
    }
    if coords.dim() != (values.len(), 2) {
        return Err(Error::Dimension {
            op: "spatial_variance_grid",
            left: (values.len(), 2),
            right: coords.dim(),
        });
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for row in coords.rows() {
        for d in 0..2 {
            min[d] = min[d].min(row[d]);
            max[d] = max[d].max(row[d]);
        }
    }
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); grid_n * grid_n];
    for (row, &v) in coords.rows().into_iter().zip(values) {
        let c = cell_of(row[0], min[0], max[0], grid_n);
        let r = cell_of(row[1], min[1], max[1], grid_n);
        sums[r * grid_n + c].push(v);
    }
    let count = sums.iter().map(Vec::len).collect();
    let mean = sums
        .iter()
        .map(|s| (!s.is_empty()).then(|| sequential_sum(s.iter().copied()) / s.len() as f64))
        .collect();
    Ok(SpatialGrid {
        grid_n,
        min,
        max,
        mean,
        count,
    })
}

impl SpatialGrid {
    /// Population variance of the non-empty cell means; lower values mean a
    /// smoother field.
    pub fn cell_variance(&self) -> f64 {
        let v: Vec<f64> = self.mean.iter().flatten().copied().collect();
        if v.is_empty() {
            return 0.0;
        }
        let m = sequential_sum(v.iter().copied()) / v.len() as f64;
        sequential_sum(v.iter().map(|x| (x - m) * (x - m))) / v.len() as f64
    }

    /// `row,col,value,count` lines; empty cells carry `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value,count\n");
        for r in 0..self.grid_n {
            for c in 0..self.grid_n {
                let i = r * self.grid_n + c;
                let value = self.mean[i].map_or_else(|| "NA".to_string(), |v| v.to_string());
                writeln!(out, "{r},{c},{value},{}", self.count[i]).expect("write to string");
            }
        }
        out
    }
}
