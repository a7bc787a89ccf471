//! The positional-encoder GNN: coordinate embedding concatenated to node
//! features, a shared trunk of message-passing layers, and two linear heads
//! (main target and local Moran's I) trained on a λ-weighted loss.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Tensor};
use crate::error::{Error, Result};
use crate::gnnops::{LayerVars, OperatorKind, OperatorLayer};
use crate::init;
use crate::moran::moran_target_for_batch;
use crate::posenc::{PosEncoder, PosEncoderVars};
use crate::spatialgraph::{knn_graph, Metric, SpatialGraph};

/// Architecture and loss settings fixed for the lifetime of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub operator: OperatorKind,
    pub n_features: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_scales: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub lambda: f64,
    /// When false the coordinate embedding is replaced by zeros (ablation).
    pub use_posenc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: init::uniform(rng, in_dim, out_dim, in_dim),
            bias: init::uniform(rng, 1, out_dim, in_dim),
        }
    }

    fn bind(&self, tape: &mut Tape) -> (Tensor, Tensor) {
        (tape.param(self.weight.clone()), tape.param(self.bias.clone()))
    }
}

fn apply_linear(tape: &mut Tape, vars: (Tensor, Tensor), x: Tensor) -> Result<Tensor> {
    let h = tape.matmul(x, vars.0)?;
    tape.add(h, vars.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeGnnModel {
    pub config: ModelConfig,
    pub posenc: PosEncoder,
    pub layers: Vec<OperatorLayer>,
    pub head_main: Linear,
    pub head_moran: Linear,
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub posenc: PosEncoderVars,
    pub layers: Vec<LayerVars>,
    pub head_main: (Tensor, Tensor),
    pub head_moran: (Tensor, Tensor),
}

impl ModelVars {
    /// Same order as [`PeGnnModel::parameters`].
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = self.posenc.tensors();
        for l in &self.layers {
            out.extend(l.0.iter().copied());
        }
        out.extend([self.head_main.0, self.head_main.1]);
        out.extend([self.head_moran.0, self.head_moran.1]);
        out
    }
}

/// Named groups of parameters, used for reporting and gradient inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    PosEncoder,
    Layer(usize),
    HeadMain,
    HeadMoran,
}

impl PeGnnModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        validate_config(&config)?;
        let posenc = PosEncoder::new(
            config.n_scales,
            config.sigma_min,
            config.sigma_max,
            config.embed_dim,
            rng,
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        let mut in_dim = config.n_features + config.embed_dim;
        for _ in 0..config.n_layers {
            layers.push(OperatorLayer::new(config.operator, in_dim, config.hidden_dim, rng));
            in_dim = config.hidden_dim;
        }
        let head_main = Linear::new(config.hidden_dim, 1, rng);
        let head_moran = Linear::new(config.hidden_dim, 1, rng);
        Ok(Self {
            config,
            posenc,
            layers,
            head_main,
            head_moran,
        })
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out = self.posenc.parameters();
        for l in &self.layers {
            out.extend(l.weights.iter());
        }
        out.extend([&self.head_main.weight, &self.head_main.bias]);
        out.extend([&self.head_moran.weight, &self.head_moran.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.posenc.parameters_mut();
        for l in &mut self.layers {
            out.extend(l.weights.iter_mut());
        }
        out.extend([&mut self.head_main.weight, &mut self.head_main.bias]);
        out.extend([&mut self.head_moran.weight, &mut self.head_moran.bias]);
        out
    }

    /// Group of every entry in [`parameters`](Self::parameters).
    pub fn parameter_groups(&self) -> Vec<ParamGroup> {
        let mut out = vec![ParamGroup::PosEncoder; 4];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(std::iter::repeat_n(ParamGroup::Layer(i), l.weights.len()));
        }
        out.extend([ParamGroup::HeadMain; 2]);
        out.extend([ParamGroup::HeadMoran; 2]);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            posenc: self.posenc.bind(tape),
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            head_main: self.head_main.bind(tape),
            head_moran: self.head_moran.bind(tape),
        }
    }

    /// Returns `(y_hat, i_hat)`, both `n x 1`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        features: ArrayView2<'_, f64>,
        unit_coords: ArrayView2<'_, f64>,
        g: &SpatialGraph,
    ) -> Result<(Tensor, Tensor)> {
        let n = features.nrows();
        if features.ncols() != self.config.n_features {
            return Err(Error::Dimension {
                op: "PeGnnModel::forward",
                left: (n, self.config.n_features),
                right: features.dim(),
            });
        }
        if unit_coords.dim() != (n, 2) || g.n_nodes() != n {
            return Err(Error::Dimension {
                op: "PeGnnModel::forward",
                left: (n, 2),
                right: (unit_coords.nrows(), g.n_nodes()),
            });
        }
        let emb = if self.config.use_posenc {
            self.posenc.encode(tape, &vars.posenc, unit_coords)?
        } else {
            tape.constant(Array2::zeros((n, self.config.embed_dim)))
        };
        let x = tape.constant(features.to_owned());
        let mut h = tape.concat_cols(x, emb)?;
        for (i, (layer, lv)) in self.layers.iter().zip(&vars.layers).enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, lv, h, g)?;
        }
        let y_hat = apply_linear(tape, vars.head_main, h)?;
        let i_hat = apply_linear(tape, vars.head_moran, h)?;
        Ok((y_hat, i_hat))
    }
}

pub fn validate_config(c: &ModelConfig) -> Result<()> {
    let positive = [
        ("embed_dim", c.embed_dim),
        ("hidden_dim", c.hidden_dim),
        ("n_layers", c.n_layers),
        ("n_scales", c.n_scales),
    ];
    for (field, v) in positive {
        if v == 0 {
            return Err(Error::config(field, "must be positive"));
        }
    }
    if !(0.0..=1.0).contains(&c.lambda) {
        return Err(Error::config("lambda", format!("must lie in [0, 1], got {}", c.lambda)));
    }
    if !(c.sigma_min > 0.0 && c.sigma_min < c.sigma_max && c.sigma_max.is_finite()) {
        return Err(Error::config("sigma_min", "need 0 < sigma_min < sigma_max"));
    }
    Ok(())
}

fn mse(tape: &mut Tape, pred: Tensor, target: &[f64]) -> Result<Tensor> {
    if pred.shape() != (target.len(), 1) {
        return Err(Error::contract(format!(
            "prediction shape {:?} does not match {} targets",
            pred.shape(),
            target.len()
        )));
    }
    let t = tape.constant(Array2::from_shape_vec((target.len(), 1), target.to_vec()).expect("column"));
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// `MSE(y_hat, y) + λ · MSE(i_hat, I)`, both mean-reduced.
pub fn loss(
    tape: &mut Tape,
    y_hat: Tensor,
    y_true: &[f64],
    i_hat: Tensor,
    i_true: &[f64],
    lambda: f64,
) -> Result<Tensor> {
    if y_true.len() != i_true.len() || y_true.is_empty() {
        return Err(Error::contract(format!(
            "loss needs equal non-empty lengths, got {} and {}",
            y_true.len(),
            i_true.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("lambda {lambda} outside [0, 1]")));
    }
    let main = mse(tape, y_hat, y_true)?;
    let aux = mse(tape, i_hat, i_true)?;
    let aux = tape.scale(aux, lambda);
    tape.add(main, aux)
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

/// One minibatch in model space.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    /// Coordinates as given; the kNN graph is built on these.
    pub coords: Array2<f64>,
    /// Coordinates scaled to the unit square, fed to the positional encoder.
    pub unit_coords: Array2<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub constant_fallback: bool,
}

/// Gradients of the composite loss for one batch, in parameter order.
pub fn batch_gradients(model: &PeGnnModel, batch: &Batch, k: usize) -> Result<(f64, bool, Vec<Matrix>)> {
    let g = knn_graph(batch.coords.view(), k, Metric::Euclidean)?;
    let moran = moran_target_for_batch(&batch.target, &g)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let (y_hat, i_hat) = model.forward(
        &mut tape,
        &vars,
        batch.features.view(),
        batch.unit_coords.view(),
        &g,
    )?;
    let l = loss(
        &mut tape,
        y_hat,
        &batch.target,
        i_hat,
        &moran.values,
        model.config.lambda,
    )?;
    let value = tape.value(l)[[0, 0]];
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {value}")));
    }
    tape.backward(l)?;
    let grads = vars
        .tensors()
        .into_iter()
        .zip(model.parameters())
        .map(|(t, p)| tape.grad(t).cloned().unwrap_or_else(|| Array2::zeros(p.dim())))
        .collect();
    Ok((value, moran.constant_fallback, grads))
}

/// Builds the batch graph and Moran targets, runs forward and backward, and
/// applies one optimizer update.
pub fn train_step(model: &mut PeGnnModel, batch: &Batch, k: usize, opt: &mut Adam) -> Result<StepOutcome> {
    let (loss, constant_fallback, grads) = batch_gradients(model, batch, k)?;
    opt.update(model.parameters_mut(), &grads);
    Ok(StepOutcome {
        loss,
        constant_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(op: OperatorKind, lambda: f64) -> ModelConfig {
        ModelConfig {
            operator: op,
            n_features: 3,
            embed_dim: 6,
            hidden_dim: 5,
            n_layers: 2,
            n_scales: 3,
            sigma_min: 0.05,
            sigma_max: 1.0,
            lambda,
            use_posenc: true,
        }
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        let features = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let target = (0..n)
            .map(|i| (3.0 * coords[[i, 0]]).sin() + 0.5 * features[[i, 1]])
            .collect();
        Batch {
            unit_coords: coords.clone(),
            coords,
            features,
            target,
        }
    }

    #[test]
    fn loss_hand_values() {
        let mut tape = Tape::new();
        let y = tape.constant(Array2::from_elem((3, 1), 2.0));
        let i = tape.constant(Array2::from_elem((3, 1), 3.0));
        let l = loss(&mut tape, y, &[1.0; 3], i, &[1.0; 3], 0.5).unwrap();
        assert_eq!(tape.value(l)[[0, 0]], 3.0);

        let l = loss(&mut tape, y, &[2.0; 3], i, &[3.0; 3], 0.75).unwrap();
        assert_eq!(tape.value(l)[[0, 0]], 0.0);

        let l = loss(&mut tape, y, &[1.5, 2.0, 0.0], i, &[0.0; 3], 0.0).unwrap();
        let main = (0.25 + 0.0 + 4.0) / 3.0;
        assert_eq!(tape.value(l)[[0, 0]], main);
    }

    #[test]
    fn loss_rejects_mismatched_lengths() {
        let mut tape = Tape::new();
        let y = tape.constant(Array2::zeros((3, 1)));
        assert!(matches!(
            loss(&mut tape, y, &[0.0; 3], y, &[0.0; 2], 0.5),
            Err(Error::Contract(_))
        ));
        assert!(loss(&mut tape, y, &[0.0; 2], y, &[0.0; 2], 0.5).is_err());
    }

    #[test]
    fn zero_weights_predict_zero() {
        let mut m = PeGnnModel::new(config(OperatorKind::Sage, 0.5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for p in m.parameters_mut() {
            p.fill(0.0);
        }
        let b = batch(12, 2);
        let g = knn_graph(b.coords.view(), 3, Metric::Euclidean).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let (y, i) = m
            .forward(&mut tape, &vars, b.features.view(), b.unit_coords.view(), &g)
            .unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
        assert!(tape.value(i).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        for op in OperatorKind::ALL {
            let m = PeGnnModel::new(config(op, 0.5), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let b = batch(15, 3);
            let g = knn_graph(b.coords.view(), 4, Metric::Euclidean).unwrap();
            let run = || {
                let mut tape = Tape::new();
                let vars = m.bind(&mut tape);
                let (y, i) = m
                    .forward(&mut tape, &vars, b.features.view(), b.unit_coords.view(), &g)
                    .unwrap();
                (tape.value(y).clone(), tape.value(i).clone())
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn feature_count_mismatch() {
        let m = PeGnnModel::new(config(OperatorKind::Gcn, 0.5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = batch(10, 2);
        let g = knn_graph(b.coords.view(), 3, Metric::Euclidean).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape);
        let wide = Array2::zeros((10, 4));
        assert!(matches!(
            m.forward(&mut tape, &vars, wide.view(), b.unit_coords.view(), &g),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = config(OperatorKind::Gat, 1.5);
        assert!(matches!(validate_config(&c), Err(Error::Config { .. })));
        c.lambda = 0.5;
        c.hidden_dim = 0;
        assert!(validate_config(&c).is_err());
    }

    #[test]
    fn lambda_zero_gives_zero_moran_head_gradient() {
        for op in OperatorKind::ALL {
            let m = PeGnnModel::new(config(op, 0.0), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let (_, _, grads) = batch_gradients(&m, &batch(20, 6), 4).unwrap();
            for (g, group) in grads.iter().zip(m.parameter_groups()) {
                if group == ParamGroup::HeadMoran {
                    assert!(g.iter().all(|&v| v == 0.0), "{op}");
                }
            }
        }
    }

    #[test]
    fn every_group_receives_gradient() {
        for op in OperatorKind::ALL {
            let m = PeGnnModel::new(config(op, 0.5), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
            let (_, _, grads) = batch_gradients(&m, &batch(20, 8), 4).unwrap();
            let groups = m.parameter_groups();
            for want in [ParamGroup::PosEncoder, ParamGroup::Layer(0), ParamGroup::Layer(1), ParamGroup::HeadMain, ParamGroup::HeadMoran] {
                let norm: f64 = grads
                    .iter()
                    .zip(&groups)
                    .filter(|(_, g)| **g == want)
                    .map(|(m, _)| m.iter().map(|v| v * v).sum::<f64>())
                    .sum();
                assert!(norm > 0.0, "{op}: {want:?} has zero gradient");
            }
        }
    }

    #[test]
    fn training_reduces_loss() {
        let mut m = PeGnnModel::new(config(OperatorKind::Sage, 0.5), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let mut opt = Adam::new(1e-2);
        let b = batch(40, 9);
        let losses: Vec<f64> = (0..50)
            .map(|_| train_step(&mut m, &b, 5, &mut opt).unwrap().loss)
            .collect();
        let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let windows: Vec<f64> = losses.windows(10).map(avg).collect();
        assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{windows:?}");
        assert!(windows.last().unwrap() < &windows[0]);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let mut m =
                PeGnnModel::new(config(OperatorKind::Transformer, 0.25), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
            let mut opt = Adam::new(1e-3);
            let b = batch(30, 11);
            for _ in 0..10 {
                train_step(&mut m, &b, 5, &mut opt).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Array2::from_elem((1, 2), 1.0);
        let mut opt = Adam::new(0.1);
        opt.update(vec![&mut p], &[ndarray::array![[2.0, -3.0]]]);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-7);
        assert!((p[[0, 1]] - 1.1).abs() < 1e-7);
        assert_eq!(opt.steps_taken(), 1);
    }
}
