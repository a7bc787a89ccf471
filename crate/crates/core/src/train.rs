//! Minibatch training with early stopping, and full-graph prediction.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::model::{train_step, Adam, Batch, PeGnnModel};
use crate::pipeline::{compute_metrics, preprocess, split, Metrics, PointSet, Prepared, Split, TransformRecord};
use crate::spatialgraph::{knn_graph, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean composite loss over the epoch's batches.
    pub train_loss: f64,
    /// Log-scale metrics on the test split after the epoch.
    pub test: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub config: TrainConfig,
    pub record: TransformRecord,
    /// Parameters from the epoch with the lowest test MAE.
    pub model: PeGnnModel,
    pub split: Split,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Batches whose target was constant and got zero Moran targets.
    pub constant_batches: usize,
    pub eval: Metrics,
    pub eval_raw: Metrics,
}

/// Predictions for a set of points, all on the natural-log target scale
/// except `moran_pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub log_pred: Vec<f64>,
    pub moran_pred: Vec<f64>,
}

/// Runs the model on one kNN graph spanning every point of `prepared`.
pub fn predict(model: &PeGnnModel, record: &TransformRecord, k: usize, prepared: &Prepared) -> Result<Prediction> {
    let g = knn_graph(prepared.points.coords.view(), k, Metric::Euclidean)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (y_hat, i_hat) = model.forward(
        &mut tape,
        &vars,
        prepared.points.features.view(),
        prepared.unit_coords.view(),
        &g,
    )?;
    let log_pred: Vec<f64> = tape.value(y_hat).iter().map(|&z| record.unstandardize_log(z)).collect();
    if let Some(i) = log_pred.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite prediction at point {i}")));
    }
    Ok(Prediction {
        log_pred,
        moran_pred: tape.value(i_hat).iter().copied().collect(),
    })
}

pub fn raw_metrics(record: &TransformRecord, log_pred: &[f64], log_true: &[f64]) -> Result<Metrics> {
    let p: Vec<f64> = log_pred.iter().map(|&v| record.invert(v)).collect();
    let t: Vec<f64> = log_true.iter().map(|&v| record.invert(v)).collect();
    compute_metrics(&p, &t)
}

fn make_batch(prepared: &Prepared, record: &TransformRecord, idx: &[usize]) -> Batch {
    Batch {
        features: prepared.points.features.select(Axis(0), idx),
        coords: prepared.points.coords.select(Axis(0), idx),
        unit_coords: prepared.unit_coords.select(Axis(0), idx),
        target: idx
            .iter()
            .map(|&i| record.standardize_log(prepared.points.target[i]))
            .collect(),
    }
}

/// Splits, fits the transform on the training rows, and trains until the
/// epoch budget runs out or test MAE stalls for `patience` epochs.
pub fn fit(config: &TrainConfig, data: &PointSet) -> Result<TrainedRun> {
    config.validate()?;
    let split = split(data.len(), &config.split_spec())?;
    let (prepared, record) = preprocess(data, &split.train)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut model = PeGnnModel::new(config.model_config(record.kept.len()), &mut init_rng)?;
    let mut opt = Adam::new(config.lr);
    let test_set = prepared.subset(&split.test);

    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut constant_batches = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = make_batch(&prepared, &record, chunk);
            let step = train_step(&mut model, &batch, config.k, &mut opt)?;
            loss_sum += step.loss;
            n_batches += 1;
            constant_batches += usize::from(step.constant_fallback);
        }
        let pred = predict(&model, &record, config.k, &test_set)?;
        let test = compute_metrics(&pred.log_pred, &test_set.points.target)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            test,
        });
        log::debug!("epoch {epoch}: loss {:.6} test mae {:.6}", loss_sum / n_batches.max(1) as f64, test.mae);
        if test.mae < best.0 {
            best = (test.mae, epoch, model.clone());
        } else if epoch - best.1 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, model) = best;

    let eval_set = prepared.subset(&split.eval);
    let pred = predict(&model, &record, config.k, &eval_set)?;
    let eval = compute_metrics(&pred.log_pred, &eval_set.points.target)?;
    let eval_raw = raw_metrics(&record, &pred.log_pred, &eval_set.points.target)?;
    if constant_batches > 0 {
        log::warn!("{constant_batches} batches had a constant target; their Moran targets were zero");
    }
    Ok(TrainedRun {
        config: config.clone(),
        record,
        model,
        split,
        history,
        best_epoch,
        stopped_early,
        constant_batches,
        eval,
        eval_raw,
    })
}
