//! Message-passing operators over a [`SpatialGraph`].
//!
//! Node features are rows of an `n x in_dim` tensor and every weight is
//! stored `in x out` and applied on the right (`X W`), which is the row-major
//! form of `W x_i` for each node. Operators carry no bias terms.
//!
//! * GCN: `x'_i = Θᵀ Σ_{j ∈ N(i) ∪ {i}} e_ji / sqrt(d_j d_i) x_j`, with
//!   `d_i = 1 + Σ_{j ∈ N(i)} e_ji` and `e_ii = 1`.
//! * SAGE: `x'_i = W1 x_i + W2 mean_{j ∈ N(i)} x_j`.
//! * Transformer: `x'_i = W1 x_i + Σ_{j ∈ N(i)} α_ij W2 x_j` with `α` the
//!   softmax over `N(i)` of `(W3 x_i)ᵀ(W4 x_j) / sqrt(d)`.
//! * GAT: `x'_i = Σ_{j ∈ N(i) ∪ {i}} α_ij Θ x_j` with `α` the softmax over
//!   `N(i) ∪ {i}` of `LeakyReLU(aᵀ[Θ x_i ‖ Θ x_j])`.
//!
//! All attention is single-head.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, SegmentReduce, Tape, Tensor};
use crate::error::{Error, Result};
use crate::init;
use crate::spatialgraph::SpatialGraph;

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Gcn,
    Sage,
    Transformer,
    Gat,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::Gcn,
        OperatorKind::Sage,
        OperatorKind::Transformer,
        OperatorKind::Gat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::Gcn => "gcn",
            OperatorKind::Sage => "sage",
            OperatorKind::Transformer => "transformer",
            OperatorKind::Gat => "gat",
        }
    }

    /// Name of the positional-encoder model built on this operator.
    pub fn model_name(self) -> &'static str {
        match self {
            OperatorKind::Gcn => "PEGCN",
            OperatorKind::Sage => "PEGraphSAGE",
            OperatorKind::Transformer => "PETransformer",
            OperatorKind::Gat => "PEGAT",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gcn" => Ok(OperatorKind::Gcn),
            "sage" | "graphsage" => Ok(OperatorKind::Sage),
            "transformer" => Ok(OperatorKind::Transformer),
            "gat" => Ok(OperatorKind::Gat),
            other => Err(Error::config(
                "operator",
                format!("unknown operator `{other}` (gcn, sage, transformer, gat)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorLayer {
    pub kind: OperatorKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Weight matrices in canonical order: gcn `[Θ]`, sage `[W1, W2]`,
    /// transformer `[W1, W2, W3, W4]`, gat `[Θ, a]`.
    pub weights: Vec<Matrix>,
    pub negative_slope: f64,
}

/// Layer weights bound to a tape, same order as [`OperatorLayer::weights`].
#[derive(Debug, Clone)]
pub struct LayerVars(pub Vec<Tensor>);

/// Output of a forward pass plus, for the attention operators, the
/// coefficients aligned with [`attention_pairs`].
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub out: Tensor,
    pub attention: Option<Tensor>,
}

impl OperatorLayer {
    pub fn new(kind: OperatorKind, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut w = |rows, cols| init::uniform(rng, rows, cols, rows);
        let weights = match kind {
            OperatorKind::Gcn => vec![w(in_dim, out_dim)],
            OperatorKind::Sage => vec![w(in_dim, out_dim), w(in_dim, out_dim)],
            OperatorKind::Transformer => (0..4).map(|_| w(in_dim, out_dim)).collect(),
            OperatorKind::Gat => vec![w(in_dim, out_dim), w(2 * out_dim, 1)],
        };
        Self {
            kind,
            in_dim,
            out_dim,
            weights,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
        }
    }

    /// Checks weight shapes against `in_dim`/`out_dim`.
    pub fn validate(&self) -> Result<()> {
        let (i, o) = (self.in_dim, self.out_dim);
        let expected: Vec<(usize, usize)> = match self.kind {
            OperatorKind::Gcn => vec![(i, o)],
            OperatorKind::Sage => vec![(i, o); 2],
            OperatorKind::Transformer => vec![(i, o); 4],
            OperatorKind::Gat => vec![(i, o), (2 * o, 1)],
        };
        if expected.len() != self.weights.len() {
            return Err(Error::contract(format!(
                "{} layer needs {} weight matrices, has {}",
                self.kind,
                expected.len(),
                self.weights.len()
            )));
        }
        for (w, e) in self.weights.iter().zip(expected) {
            if w.dim() != e {
                return Err(Error::Dimension {
                    op: "OperatorLayer::validate",
                    left: e,
                    right: w.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars(self.weights.iter().map(|w| tape.param(w.clone())).collect())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        x: Tensor,
        g: &SpatialGraph,
    ) -> Result<Tensor> {
        Ok(self.forward_with_attention(tape, vars, x, g)?.out)
    }

    pub fn forward_with_attention(
        &self,
        tape: &mut Tape,
        vars: &LayerVars,
        x: Tensor,
        g: &SpatialGraph,
    ) -> Result<LayerOutput> {
        if x.rows() != g.n_nodes() || x.cols() != self.in_dim {
            return Err(Error::Dimension {
                op: "operator forward",
                left: (g.n_nodes(), self.in_dim),
                right: x.shape(),
            });
        }
        let w = &vars.0;
        match self.kind {
            OperatorKind::Gcn => gcn_forward(tape, w[0], x, g).map(no_attention),
            OperatorKind::Sage => sage_forward(tape, w[0], w[1], x, g).map(no_attention),
            OperatorKind::Transformer => {
                transformer_forward(tape, [w[0], w[1], w[2], w[3]], self.out_dim, x, g)
            }
            OperatorKind::Gat => gat_forward(tape, w[0], w[1], self.negative_slope, x, g),
        }
    }
}

fn no_attention(out: Tensor) -> LayerOutput {
    LayerOutput {
        out,
        attention: None,
    }
}

/// `(source, target)` pairs the attention coefficients of `kind` refer to:
/// graph edges for the transformer, graph edges followed by one self pair
/// per node for GAT.
pub fn attention_pairs(kind: OperatorKind, g: &SpatialGraph) -> Vec<(usize, usize)> {
    let mut pairs: Vec<_> = g.edges().collect();
    if kind == OperatorKind::Gat {
        pairs.extend((0..g.n_nodes()).map(|i| (i, i)));
    }
    pairs
}

pub fn gcn_forward(tape: &mut Tape, theta: Tensor, x: Tensor, g: &SpatialGraph) -> Result<Tensor> {
    let n = g.n_nodes();
    let mut deg = vec![1.0; n];
    for (e, &t) in g.targets().iter().enumerate() {
        deg[t] += g.weight(e);
    }
    let edge_norm = Array2::from_shape_fn((g.n_edges(), 1), |(e, _)| {
        g.weight(e) / (deg[g.sources()[e]] * deg[g.targets()[e]]).sqrt()
    });
    let self_norm = Array2::from_shape_fn((n, 1), |(i, _)| 1.0 / deg[i]);

    let h = tape.matmul(x, theta)?;
    let msgs = tape.gather_rows(h, g.sources())?;
    let coef = tape.constant(edge_norm);
    let msgs = tape.mul(msgs, coef)?;
    let agg = tape.segment_reduce(SegmentReduce::Sum, msgs, g.targets(), n)?;
    let coef = tape.constant(self_norm);
    let own = tape.mul(h, coef)?;
    tape.add(agg, own)
}

pub fn sage_forward(
    tape: &mut Tape,
    w_self: Tensor,
    w_neigh: Tensor,
    x: Tensor,
    g: &SpatialGraph,
) -> Result<Tensor> {
    g.require_in_neighbors("sage")?;
    let own = tape.matmul(x, w_self)?;
    let xj = tape.gather_rows(x, g.sources())?;
    let mean = tape.segment_reduce(SegmentReduce::Mean, xj, g.targets(), g.n_nodes())?;
    let neigh = tape.matmul(mean, w_neigh)?;
    tape.add(own, neigh)
}

/// `w` is `[W1 (skip), W2 (value), W3 (query), W4 (key)]`.
pub fn transformer_forward(
    tape: &mut Tape,
    w: [Tensor; 4],
    key_dim: usize,
    x: Tensor,
    g: &SpatialGraph,
) -> Result<LayerOutput> {
    g.require_in_neighbors("transformer")?;
    let [w_skip, w_value, w_query, w_key] = w;
    let q = tape.matmul(x, w_query)?;
    let k = tape.matmul(x, w_key)?;
    let v = tape.matmul(x, w_value)?;
    let qi = tape.gather_rows(q, g.targets())?;
    let kj = tape.gather_rows(k, g.sources())?;
    let qk = tape.mul(qi, kj)?;
    let scores = tape.row_sum(qk);
    let scores = tape.scale(scores, 1.0 / (key_dim as f64).sqrt());
    let alpha = tape.segment_softmax(scores, g.targets(), g.n_nodes())?;
    let vj = tape.gather_rows(v, g.sources())?;
    let msgs = tape.mul(vj, alpha)?;
    let agg = tape.segment_reduce(SegmentReduce::Sum, msgs, g.targets(), g.n_nodes())?;
    let own = tape.matmul(x, w_skip)?;
    let out = tape.add(own, agg)?;
    Ok(LayerOutput {
        out,
        attention: Some(alpha),
    })
}

pub fn gat_forward(
    tape: &mut Tape,
    theta: Tensor,
    att: Tensor,
    negative_slope: f64,
    x: Tensor,
    g: &SpatialGraph,
) -> Result<LayerOutput> {
    let n = g.n_nodes();
    let mut src = g.sources().to_vec();
    let mut dst = g.targets().to_vec();
    src.extend(0..n);
    dst.extend(0..n);

    let h = tape.matmul(x, theta)?;
    let hi = tape.gather_rows(h, &dst)?;
    let hj = tape.gather_rows(h, &src)?;
    let pair = tape.concat_cols(hi, hj)?;
    let logits = tape.matmul(pair, att)?;
    let logits = tape.leaky_relu(logits, negative_slope);
    let alpha = tape.segment_softmax(logits, &dst, n)?;
    let msgs = tape.mul(hj, alpha)?;
    let out = tape.segment_reduce(SegmentReduce::Sum, msgs, &dst, n)?;
    Ok(LayerOutput {
        out,
        attention: Some(alpha),
    })
}
