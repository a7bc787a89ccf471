//! Operator by auxiliary-weight grid, repeated over seeds.

use std::fmt::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gnnops::OperatorKind;
use crate::pipeline::{spatial_variance_grid, Metrics, PointSet, SpatialGrid};
use crate::train::{fit, predict};

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub operators: Vec<OperatorKind>,
    pub lambdas: Vec<f64>,
    /// Run `s` of a cell uses seed `base.seed + s`.
    pub n_seeds: usize,
    pub grid_n: usize,
}

impl SweepSpec {
    pub fn new(base: TrainConfig) -> Self {
        Self {
            base,
            operators: OperatorKind::ALL.to_vec(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            n_seeds: 3,
            grid_n: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(Error::config("operators", "empty list"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::config("lambdas", "empty list"));
        }
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be positive"));
        }
        if self.grid_n < 2 {
            return Err(Error::config("grid_n", "must be at least 2"));
        }
        for &lambda in &self.lambdas {
            self.run_config(self.operators[0], lambda, 0).validate()?;
        }
        Ok(())
    }

    pub fn run_config(&self, operator: OperatorKind, lambda: f64, s: usize) -> TrainConfig {
        TrainConfig {
            operator,
            lambda,
            seed: self.base.seed + s as u64,
            ..self.base.clone()
        }
    }

    fn runs(&self) -> Vec<(OperatorKind, f64, usize)> {
        let mut out = Vec::new();
        for &op in &self.operators {
            for &lambda in &self.lambdas {
                for s in 0..self.n_seeds {
                    out.push((op, lambda, s));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config_hash: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub eval: Metrics,
    pub eval_raw: Metrics,
    /// Cell means of eval-split log predictions.
    pub pred_grid: SpatialGrid,
    /// Cell means of eval-split log truths over the same cells.
    pub true_grid: SpatialGrid,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub operator: OperatorKind,
    pub lambda: f64,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation; `NaN` for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    pub fn display(&self) -> String {
        if self.mean.is_nan() {
            "n/a".into()
        } else {
            format!("{:.4}±{:.4}", self.mean, self.std)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: String,
    pub operator: OperatorKind,
    pub lambda: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mse: MeanStd,
    pub mae: MeanStd,
    pub mape: MeanStd,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

fn run_one(spec: &SweepSpec, data: &PointSet, op: OperatorKind, lambda: f64, s: usize) -> Result<RunSummary> {
    let config = spec.run_config(op, lambda, s);
    let run = fit(&config, data)?;
    let eval_set = run.record.apply(data)?.subset(&run.split.eval);
    let pred = predict(&run.model, &run.record, config.k, &eval_set)?;
    let coords = eval_set.points.coords.view();
    Ok(RunSummary {
        config_hash: config.hash(),
        best_epoch: run.best_epoch,
        epochs_run: run.history.len(),
        eval: run.eval,
        eval_raw: run.eval_raw,
        pred_grid: spatial_variance_grid(coords, &pred.log_pred, spec.grid_n)?,
        true_grid: spatial_variance_grid(coords, &eval_set.points.target, spec.grid_n)?,
    })
}

/// Trains every cell and seed. A failing run is recorded and the sweep
/// carries on.
pub fn run_sweep(spec: &SweepSpec, data: &PointSet) -> Result<SweepResult> {
    spec.validate()?;
    let runs: Vec<RunRecord> = spec
        .runs()
        .into_par_iter()
        .map(|(op, lambda, s)| {
            let outcome = run_one(spec, data, op, lambda, s).map_err(|e| {
                log::error!("{op} lambda={lambda} seed={}: {e}", spec.base.seed + s as u64);
                e.to_string()
            });
            RunRecord {
                operator: op,
                lambda,
                seed: spec.base.seed + s as u64,
                outcome,
            }
        })
        .collect();
    let cells = summarize(&runs);
    Ok(SweepResult { runs, cells })
}

pub fn summarize(runs: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    for r in runs {
        if cells.iter().any(|c| c.operator == r.operator && c.lambda == r.lambda) {
            continue;
        }
        let same: Vec<&RunRecord> = runs
            .iter()
            .filter(|x| x.operator == r.operator && x.lambda == r.lambda)
            .collect();
        let ok: Vec<&RunSummary> = same.iter().filter_map(|x| x.outcome.as_ref().ok()).collect();
        let stat = |f: fn(&Metrics) -> f64| MeanStd::of(&ok.iter().map(|s| f(&s.eval)).collect::<Vec<_>>());
        cells.push(CellSummary {
            method: r.operator.model_name().into(),
            operator: r.operator,
            lambda: r.lambda,
            n_ok: ok.len(),
            n_failed: same.len() - ok.len(),
            mse: stat(|m| m.mse),
            mae: stat(|m| m.mae),
            mape: stat(|m| m.mape),
        });
    }
    cells
}

impl SweepResult {
    pub fn table_markdown(&self) -> String {
        let mut out = String::from("| Method | λ | MSE | MAE | MAPE |\n|---|---|---|---|---|\n");
        for c in &self.cells {
            writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                c.method,
                c.lambda,
                c.mse.display(),
                c.mae.display(),
                c.mape.display()
            )
            .expect("write to string");
        }
        out
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from("method,lambda,n_ok,n_failed,mse_mean,mse_std,mae_mean,mae_std,mape_mean,mape_std\n");
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.method, c.lambda, c.n_ok, c.n_failed, c.mse.mean, c.mse.std, c.mae.mean, c.mae.std, c.mape.mean, c.mape.std
            )
            .expect("write to string");
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "operator,lambda,seed,status,config_hash,best_epoch,epochs_run,mse,mae,mape,raw_mse,raw_mae,raw_mape,error\n",
        );
        for r in &self.runs {
            let line = match &r.outcome {
                Ok(s) => format!(
                    "{},{},{},ok,{},{},{},{},{},{},{},{},{},",
                    r.operator,
                    r.lambda,
                    r.seed,
                    s.config_hash,
                    s.best_epoch,
                    s.epochs_run,
                    s.eval.mse,
                    s.eval.mae,
                    s.eval.mape,
                    s.eval_raw.mse,
                    s.eval_raw.mae,
                    s.eval_raw.mape
                ),
                Err(e) => format!(
                    "{},{},{},failed,,,,,,,,,,\"{}\"",
                    r.operator,
                    r.lambda,
                    r.seed,
                    e.replace('"', "'")
                ),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Cell-mean variance of predictions against that of the truth on the
    /// same eval points; a ratio below one means the predicted field is
    /// smoother than the data.
    pub fn smoothing_csv(&self) -> String {
        let mut out = String::from("operator,lambda,seed,pred_cell_variance,true_cell_variance,ratio\n");
        for r in &self.runs {
            if let Ok(s) = &r.outcome {
                let p = s.pred_grid.cell_variance();
                let t = s.true_grid.cell_variance();
                writeln!(out, "{},{},{},{p},{t},{}", r.operator, r.lambda, r.seed, p / t).expect("write to string");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[0.25]).std, 0.0);
        assert_eq!(MeanStd::of(&[0.123456, 0.123456]).display(), "0.1235±0.0000");
        assert_eq!(MeanStd::of(&[]).display(), "n/a");
    }

    #[test]
    fn run_grid_order() {
        let mut spec = SweepSpec::new(TrainConfig::default());
        spec.n_seeds = 2;
        let runs = spec.runs();
        assert_eq!(runs.len(), 4 * 3 * 2);
        assert_eq!(runs[0], (OperatorKind::ALL[0], 0.25, 0));
        assert_eq!(runs[1], (OperatorKind::ALL[0], 0.25, 1));
        assert_eq!(spec.run_config(OperatorKind::Gat, 0.75, 1).seed, 1);
    }

    #[test]
    fn failed_runs_are_counted() {
        let failed = RunRecord {
            operator: OperatorKind::Gcn,
            lambda: 0.5,
            seed: 0,
            outcome: Err("boom".into()),
        };
        let cells = summarize(&[failed]);
        assert_eq!(cells.len(), 1);
        assert_eq!((cells[0].n_ok, cells[0].n_failed), (0, 1));
        assert_eq!(cells[0].mse.display(), "n/a");
    }
}
