//! Segment (scatter) kernels: reduce or normalize rows grouped by an id
//! vector. These realize the permutation-invariant neighborhood aggregation
//! used by every message-passing operator.

use ndarray::Array2;

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentReduce {
    Sum,
    Mean,
    Max,
}

pub(super) fn check_ids(
    op: &'static str,
    ids: &[usize],
    rows: usize,
    n_segments: usize,
) -> Result<()> {
    if ids.len() != rows {
        return Err(Error::Dimension {
            op,
            left: (rows, 0),
            right: (ids.len(), 0),
        });
    }
    match ids.iter().find(|&&s| s >= n_segments) {
        Some(&bad) => Err(Error::Index {
            op,
            index: bad,
            bound: n_segments,
        }),
        None => Ok(()),
    }
}

pub(super) fn reduce_forward(
    kind: SegmentReduce,
    src: &Matrix,
    ids: &[usize],
    n_segments: usize,
) -> (Matrix, Vec<usize>) {
    let cols = src.ncols();
    let mut out = Array2::zeros((n_segments, cols));
    let mut counts = vec![0usize; n_segments];
    for &s in ids {
        counts[s] += 1;
    }
    match kind {
        SegmentReduce::Sum | SegmentReduce::Mean => {
            for (row, &s) in src.rows().into_iter().zip(ids) {
                let mut acc = out.row_mut(s);
                acc += &row;
            }
            if kind == SegmentReduce::Mean {
                for (mut row, &c) in out.rows_mut().into_iter().zip(&counts) {
                    if c > 0 {
                        row /= c as f64;
                    }
                }
            }
            (out, counts)
        }
        SegmentReduce::Max => {
            let mut arg = vec![usize::MAX; n_segments * cols];
            for (r, (row, &s)) in src.rows().into_iter().zip(ids).enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    let slot = &mut arg[s * cols + c];
                    // strict comparison keeps the first maximal row
                    if *slot == usize::MAX || v > out[[s, c]] {
                        *slot = r;
                        out[[s, c]] = v;
                    }
                }
            }
            (out, arg)
        }
    }
}

pub(super) fn reduce_backward(
    kind: SegmentReduce,
    g: &Matrix,
    ids: &[usize],
    aux: &[usize],
    src_rows: usize,
) -> Matrix {
    let cols = g.ncols();
    let mut gs = Array2::zeros((src_rows, cols));
    match kind {
        SegmentReduce::Sum => {
            for (r, &s) in ids.iter().enumerate() {
                let mut dst = gs.row_mut(r);
                dst += &g.row(s);
            }
        }
        SegmentReduce::Mean => {
            for (r, &s) in ids.iter().enumerate() {
                let inv = 1.0 / aux[s] as f64;
                let mut dst = gs.row_mut(r);
                dst.zip_mut_with(&g.row(s), |d, &x| *d += x * inv);
            }
        }
        SegmentReduce::Max => {
            for s in 0..g.nrows() {
                for c in 0..cols {
                    let r = aux[s * cols + c];
                    if r != usize::MAX {
                        gs[[r, c]] += g[[s, c]];
                    }
                }
            }
        }
    }
    gs
}

pub(super) fn softmax_forward(scores: &Matrix, ids: &[usize], n_segments: usize) -> Matrix {
    let mut max = vec![f64::NEG_INFINITY; n_segments];
    for (&v, &s) in scores.iter().zip(ids) {
        if v > max[s] {
            max[s] = v;
        }
    }
    let mut out = Array2::zeros((ids.len(), 1));
    let mut denom = vec![0.0; n_segments];
    for (r, (&v, &s)) in scores.iter().zip(ids).enumerate() {
        let e = (v - max[s]).exp();
        out[[r, 0]] = e;
        denom[s] += e;
    }
    for (r, &s) in ids.iter().enumerate() {
        out[[r, 0]] /= denom[s];
    }
    out
}

pub(super) fn softmax_backward(
    y: &Matrix,
    g: &Matrix,
    ids: &[usize],
    n_segments: usize,
) -> Matrix {
    let mut dot = vec![0.0; n_segments];
    for (r, &s) in ids.iter().enumerate() {
        dot[s] += y[[r, 0]] * g[[r, 0]];
    }
    Array2::from_shape_fn((ids.len(), 1), |(r, _)| {
        y[[r, 0]] * (g[[r, 0]] - dot[ids[r]])
    })
}
