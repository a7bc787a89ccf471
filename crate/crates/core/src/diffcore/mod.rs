//! Dense 2-D tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! are methods on the tape; they return lightweight [`Tensor`] handles and
//! append a node holding the result together with what the backward rule
//! needs. The tape is rebuilt for every forward pass, so graphs whose
//! topology changes per minibatch need no special handling.
//!
//! ```
//! use ndarray::array;
//! use pegnn::diffcore::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[3.0]]);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap()[[0, 0]], 6.0);
//! ```

mod segment;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub use segment::SegmentReduce;

/// Row-major matrix of 64-bit reals.
pub type Matrix = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Exp,
    Log,
    LeakyRelu(f64),
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(self, ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul)
    }
}

/// How the right operand of a binary op is stretched to the left shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    /// `1 x cols`, repeated down the rows.
    Row,
    /// `rows x 1`, repeated across the columns.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary {
        kind: ElementwiseOp,
        a: usize,
        b: usize,
        broadcast: Broadcast,
    },
    Unary {
        kind: ElementwiseOp,
        a: usize,
    },
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    ConcatCols(usize, usize),
    Gather {
        src: usize,
        index: Vec<usize>,
    },
    Segment {
        kind: SegmentReduce,
        src: usize,
        ids: Vec<usize>,
        /// Segment sizes (sum/mean) or, for max, the source row chosen per
        /// output cell in row-major order (`usize::MAX` for empty segments).
        aux: Vec<usize>,
    },
    SegmentSoftmax {
        src: usize,
        ids: Vec<usize>,
        n_segments: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of every operation in one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Tensor {
        let (rows, cols) = value.dim();
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Tensor { id, rows, cols }
    }

    fn node(&self, t: Tensor) -> &Node {
        &self.nodes[t.id]
    }

    fn any_grad(&self, ts: &[Tensor]) -> bool {
        ts.iter().any(|t| self.nodes[t.id].requires_grad)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Tensor {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, false)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.node(t).value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.node(t).requires_grad
    }

    /// Accumulated gradient of a trainable leaf, `None` before any backward
    /// pass reached it or for tensors that do not require gradients.
    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        if !self.node(t).requires_grad {
            return None;
        }
        self.grads[t.id].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a.id, b.id), rg))
    }

    pub fn elementwise(
        &mut self,
        kind: ElementwiseOp,
        a: Tensor,
        b: Option<Tensor>,
    ) -> Result<Tensor> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(Error::contract(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(Error::contract(format!("{kind:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(ElementwiseOp::Mul, a, b)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.unary(ElementwiseOp::Relu, a).expect("relu is total")
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        self.unary(ElementwiseOp::LeakyRelu(slope), a)
            .expect("leaky_relu is total")
    }

    pub fn exp(&mut self, a: Tensor) -> Tensor {
        self.unary(ElementwiseOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(ElementwiseOp::Log, a)
    }

    fn binary(&mut self, kind: ElementwiseOp, a: Tensor, b: Tensor) -> Result<Tensor> {
        let broadcast = if a.shape() == b.shape() {
            Broadcast::None
        } else if b.rows == 1 && b.cols == a.cols {
            Broadcast::Row
        } else if b.cols == 1 && b.rows == a.rows {
            Broadcast::Col
        } else {
            return Err(Error::Dimension {
                op: "elementwise",
                left: a.shape(),
                right: b.shape(),
            });
        };
        let av = self.value(a);
        let bv = self.value(b);
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Sub => |x, y| x - y,
            ElementwiseOp::Mul => |x, y| x * y,
            _ => unreachable!("binary called with unary kind"),
        };
        let mut out = av.clone();
        match broadcast {
            Broadcast::None => out.zip_mut_with(bv, |x, &y| *x = f(*x, y)),
            Broadcast::Row => {
                for mut row in out.rows_mut() {
                    row.zip_mut_with(&bv.row(0), |x, &y| *x = f(*x, y));
                }
            }
            Broadcast::Col => {
                for (mut row, &y) in out.rows_mut().into_iter().zip(bv.column(0)) {
                    row.mapv_inplace(|x| f(x, y));
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            out,
            Op::Binary {
                kind,
                a: a.id,
                b: b.id,
                broadcast,
            },
            rg,
        ))
    }

    fn unary(&mut self, kind: ElementwiseOp, a: Tensor) -> Result<Tensor> {
        let av = self.value(a);
        let out = match kind {
            ElementwiseOp::Relu => av.mapv(|x| x.max(0.0)),
            ElementwiseOp::LeakyRelu(s) => av.mapv(|x| if x > 0.0 { x } else { s * x }),
            ElementwiseOp::Exp => av.mapv(f64::exp),
            ElementwiseOp::Log => {
                if let Some(bad) = av.iter().find(|&&x| x.is_nan() || x <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        msg: format!("non-positive entry {bad}"),
                    });
                }
                av.mapv(f64::ln)
            }
            _ => unreachable!("unary called with binary kind"),
        };
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::Unary { kind, a: a.id }, rg))
    }

    pub fn scale(&mut self, a: Tensor, factor: f64) -> Tensor {
        let out = self.value(a) * factor;
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a.id, factor), rg)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = sequential_sum(self.value(a).iter().copied());
        let rg = self.any_grad(&[a]);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a.id), rg)
    }

    /// Mean of all entries as a `1 x 1` tensor.
    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a);
        let m = sequential_sum(v.iter().copied()) / v.len() as f64;
        let rg = self.any_grad(&[a]);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a.id), rg)
    }

    /// Per-row sum, `n x c -> n x 1`.
    pub fn row_sum(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a);
        let out = Array2::from_shape_fn((v.nrows(), 1), |(r, _)| {
            sequential_sum(v.row(r).iter().copied())
        });
        let rg = self.any_grad(&[a]);
        self.push(out, Op::RowSum(a.id), rg)
    }

    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.rows != b.rows {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a.id, b.id), rg))
    }

    /// Row `r` of the result is row `index[r]` of `src`.
    pub fn gather_rows(&mut self, src: Tensor, index: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = index.iter().find(|&&i| i >= src.rows) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                bound: src.rows,
            });
        }
        let out = self.value(src).select(Axis(0), index);
        let rg = self.any_grad(&[src]);
        Ok(self.push(
            out,
            Op::Gather {
                src: src.id,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn segment_reduce(
        &mut self,
        kind: SegmentReduce,
        src: Tensor,
        segment_ids: &[usize],
        n_segments: usize,
    ) -> Result<Tensor> {
        segment::check_ids("segment_reduce", segment_ids, src.rows, n_segments)?;
        let (out, aux) = segment::reduce_forward(kind, self.value(src), segment_ids, n_segments);
        let rg = self.any_grad(&[src]);
        Ok(self.push(
            out,
            Op::Segment {
                kind,
                src: src.id,
                ids: segment_ids.to_vec(),
                aux,
            },
            rg,
        ))
    }

    /// Softmax of a column of scores within each segment.
    pub fn segment_softmax(
        &mut self,
        scores: Tensor,
        segment_ids: &[usize],
        n_segments: usize,
    ) -> Result<Tensor> {
        if scores.cols != 1 && scores.rows > 0 {
            return Err(Error::Dimension {
                op: "segment_softmax",
                left: scores.shape(),
                right: (segment_ids.len(), 1),
            });
        }
        segment::check_ids("segment_softmax", segment_ids, scores.rows, n_segments)?;
        let out = segment::softmax_forward(self.value(scores), segment_ids, n_segments);
        let rg = self.any_grad(&[scores]);
        Ok(self.push(
            out,
            Op::SegmentSoftmax {
                src: scores.id,
                ids: segment_ids.to_vec(),
                n_segments,
            },
            rg,
        ))
    }

    /// Propagates d(loss)/d(node) back to every trainable leaf, adding into
    /// whatever gradient those leaves already hold.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if loss.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                loss.shape()
            )));
        }
        if loss.id >= self.nodes.len() || self.nodes[loss.id].value.dim() != (1, 1) {
            return Err(Error::contract("loss tensor is not on this tape"));
        }

        let mut adj: Vec<Option<Matrix>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    match &mut self.grads[id] {
                        Some(acc) => *acc += &g,
                        slot => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].requires_grad {
                        let ga = g.dot(&self.nodes[b].value.t());
                        accumulate(&mut adj, a, ga);
                    }
                    if self.nodes[b].requires_grad {
                        let gb = self.nodes[a].value.t().dot(&g);
                        accumulate(&mut adj, b, gb);
                    }
                }
                Op::Binary {
                    kind,
                    a,
                    b,
                    broadcast,
                } => {
                    let (a, b, kind, broadcast) = (*a, *b, *kind, *broadcast);
                    let bv = expand(&self.nodes[b].value, broadcast, g.dim());
                    if self.nodes[a].requires_grad {
                        let ga = match kind {
                            ElementwiseOp::Mul => &g * &bv,
                            _ => g.clone(),
                        };
                        accumulate(&mut adj, a, ga);
                    }
                    if self.nodes[b].requires_grad {
                        let gb_full = match kind {
                            ElementwiseOp::Add => g.clone(),
                            ElementwiseOp::Sub => -&g,
                            ElementwiseOp::Mul => &g * &self.nodes[a].value,
                            _ => unreachable!(),
                        };
                        accumulate(&mut adj, b, reduce_broadcast(gb_full, broadcast));
                    }
                }
                Op::Unary { kind, a } => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let y = &node.value;
                    let local = match *kind {
                        ElementwiseOp::Relu => x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                        ElementwiseOp::LeakyRelu(s) => x.mapv(|v| if v > 0.0 { 1.0 } else { s }),
                        ElementwiseOp::Exp => y.clone(),
                        ElementwiseOp::Log => x.mapv(|v| 1.0 / v),
                        _ => unreachable!(),
                    };
                    accumulate(&mut adj, a, g * local);
                }
                Op::Scale(a, f) => {
                    let (a, f) = (*a, *f);
                    accumulate(&mut adj, a, g * f);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let dim = self.nodes[a].value.dim();
                    accumulate(&mut adj, a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let a = *a;
                    let dim = self.nodes[a].value.dim();
                    let n = (dim.0 * dim.1) as f64;
                    accumulate(&mut adj, a, Array2::from_elem(dim, g[[0, 0]] / n));
                }
                Op::RowSum(a) => {
                    let a = *a;
                    let dim = self.nodes[a].value.dim();
                    let ga = Array2::from_shape_fn(dim, |(r, _)| g[[r, 0]]);
                    accumulate(&mut adj, a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let split = self.nodes[a].value.ncols();
                    if self.nodes[a].requires_grad {
                        accumulate(&mut adj, a, g.slice(ndarray::s![.., ..split]).to_owned());
                    }
                    if self.nodes[b].requires_grad {
                        accumulate(&mut adj, b, g.slice(ndarray::s![.., split..]).to_owned());
                    }
                }
                Op::Gather { src, index } => {
                    let src = *src;
                    let mut gs = Array2::zeros(self.nodes[src].value.dim());
                    for (r, &i) in index.iter().enumerate() {
                        let mut dst = gs.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut adj, src, gs);
                }
                Op::Segment { kind, src, ids, aux } => {
                    let src = *src;
                    let rows = self.nodes[src].value.nrows();
                    let gs = segment::reduce_backward(*kind, &g, ids, aux, rows);
                    accumulate(&mut adj, src, gs);
                }
                Op::SegmentSoftmax {
                    src,
                    ids,
                    n_segments,
                } => {
                    let src = *src;
                    let gs = segment::softmax_backward(&node.value, &g, ids, *n_segments);
                    accumulate(&mut adj, src, gs);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: usize, g: Matrix) {
    match &mut adj[id] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

fn expand(b: &Matrix, broadcast: Broadcast, dim: (usize, usize)) -> Matrix {
    match broadcast {
        Broadcast::None => b.clone(),
        Broadcast::Row => Array2::from_shape_fn(dim, |(_, c)| b[[0, c]]),
        Broadcast::Col => Array2::from_shape_fn(dim, |(r, _)| b[[r, 0]]),
    }
}

fn reduce_broadcast(g: Matrix, broadcast: Broadcast) -> Matrix {
    match broadcast {
        Broadcast::None => g,
        Broadcast::Row => {
            let mut out = Array2::zeros((1, g.ncols()));
            for row in g.rows() {
                let mut acc = out.row_mut(0);
                acc += &row;
            }
            out
        }
        Broadcast::Col => Array2::from_shape_fn((g.nrows(), 1), |(r, _)| {
            sequential_sum(g.row(r).iter().copied())
        }),
    }
}

/// Left-to-right summation; fixed order keeps results bit-reproducible.
pub(crate) fn sequential_sum(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |acc, x| acc + x)
}
