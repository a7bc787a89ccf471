//! Independent oracles shared by the integration tests. Nothing here goes
//! through the tape: everything is plain loops over `Vec<f64>`.
#![allow(dead_code)]

use ndarray::Array2;
use pegnn::gnnops::OperatorKind;
use pegnn::spatialgraph::SpatialGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_coords(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, 2), || rng.random::<f64>())
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `analytic` and central differences of `f`
/// taken entry by entry over `params`.
pub fn fd_max_rel_err(
    params: &[Array2<f64>],
    analytic: &[Array2<f64>],
    mut f: impl FnMut(&[Array2<f64>]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut p: Vec<Array2<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for t in 0..p.len() {
        assert_eq!(p[t].dim(), analytic[t].dim());
        for idx in 0..p[t].len() {
            let (r, c) = (idx / p[t].ncols(), idx % p[t].ncols());
            let orig = p[t][[r, c]];
            p[t][[r, c]] = orig + FD_STEP;
            let up = f(&p);
            p[t][[r, c]] = orig - FD_STEP;
            let down = f(&p);
            p[t][[r, c]] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[t][[r, c]], numeric));
        }
    }
    worst
}

/// Random directed graph in which every node has between one and `max_in`
/// distinct in-neighbours.
pub fn random_graph(rng: &mut impl Rng, n: usize, max_in: usize) -> SpatialGraph {
    let mut edges = Vec::new();
    for t in 0..n {
        let d = rng.random_range(1..=max_in.min(n - 1));
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < d {
            let s = rng.random_range(0..n);
            if s != t && !chosen.contains(&s) {
                chosen.push(s);
            }
        }
        edges.extend(chosen.into_iter().map(|s| (s, t)));
    }
    SpatialGraph::from_edges(n, &edges, None, random_coords(rng, n)).unwrap()
}

/// Same graph with node `i` renamed `perm[i]`.
pub fn permute_graph(g: &SpatialGraph, perm: &[usize]) -> SpatialGraph {
    let edges: Vec<(usize, usize)> = g.edges().map(|(s, t)| (perm[s], perm[t])).collect();
    let mut coords = Array2::zeros((g.n_nodes(), 2));
    for (i, &pi) in perm.iter().enumerate() {
        coords.row_mut(pi).assign(&g.coords().row(i));
    }
    SpatialGraph::from_edges(g.n_nodes(), &edges, g.edge_weight().map(<[f64]>::to_vec), coords).unwrap()
}

pub fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for (i, &pi) in perm.iter().enumerate() {
        out.row_mut(pi).assign(&x.row(i));
    }
    out
}

/// Dense `A[i][j] = e_ji` for each edge `j -> i`.
pub fn dense_adjacency(g: &SpatialGraph) -> Vec<Vec<f64>> {
    let n = g.n_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (e, (s, t)) in g.edges().enumerate() {
        a[t][s] += g.weight(e);
    }
    a
}

fn mm(x: &Array2<f64>, w: &Array2<f64>) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; w.ncols()]; x.nrows()];
    for i in 0..x.nrows() {
        for k in 0..x.ncols() {
            for j in 0..w.ncols() {
                out[i][j] += x[[i, k]] * w[[k, j]];
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Dense-adjacency forward pass of one operator layer. Returns the output
/// and, for the attention operators, the dense coefficient matrix
/// `alpha[i][j]`.
pub fn dense_forward(
    kind: OperatorKind,
    weights: &[Array2<f64>],
    slope: f64,
    x: &Array2<f64>,
    g: &SpatialGraph,
) -> (Array2<f64>, Option<Vec<Vec<f64>>>) {
    let n = x.nrows();
    let a = dense_adjacency(g);
    let neighbors = |i: usize| (0..n).filter(|&j| a[i][j] != 0.0).collect::<Vec<_>>();
    let o = weights[0].ncols();
    let mut out = Array2::zeros((n, o));
    let mut alpha = vec![vec![0.0; n]; n];
    match kind {
        OperatorKind::Gcn => {
            let h = mm(x, &weights[0]);
            let mut a_hat = a.clone();
            for (i, row) in a_hat.iter_mut().enumerate() {
                row[i] += 1.0;
            }
            let d: Vec<f64> = a_hat.iter().map(|row| row.iter().sum()).collect();
            for i in 0..n {
                for j in 0..n {
                    let c = a_hat[i][j] / (d[i] * d[j]).sqrt();
                    for f in 0..o {
                        out[[i, f]] += c * h[j][f];
                    }
                }
            }
            (out, None)
        }
        OperatorKind::Sage => {
            let own = mm(x, &weights[0]);
            for i in 0..n {
                let nb = neighbors(i);
                let mut mean = Array2::zeros((1, x.ncols()));
                for &j in &nb {
                    for f in 0..x.ncols() {
                        mean[[0, f]] += x[[j, f]] / nb.len() as f64;
                    }
                }
                let agg = mm(&mean, &weights[1]);
                for f in 0..o {
                    out[[i, f]] = own[i][f] + agg[0][f];
                }
            }
            (out, None)
        }
        OperatorKind::Transformer => {
            let skip = mm(x, &weights[0]);
            let value = mm(x, &weights[1]);
            let query = mm(x, &weights[2]);
            let key = mm(x, &weights[3]);
            for i in 0..n {
                let nb = neighbors(i);
                let logits: Vec<f64> = nb
                    .iter()
                    .map(|&j| dot(&query[i], &key[j]) / (o as f64).sqrt())
                    .collect();
                for (&j, w) in nb.iter().zip(softmax(&logits)) {
                    alpha[i][j] = w;
                }
                for f in 0..o {
                    out[[i, f]] = skip[i][f] + nb.iter().map(|&j| alpha[i][j] * value[j][f]).sum::<f64>();
                }
            }
            (out, Some(alpha))
        }
        OperatorKind::Gat => {
            let h = mm(x, &weights[0]);
            let att: Vec<f64> = weights[1].iter().copied().collect();
            for i in 0..n {
                let mut nb = neighbors(i);
                nb.push(i);
                let logits: Vec<f64> = nb
                    .iter()
                    .map(|&j| {
                        let e = dot(&att[..o], &h[i]) + dot(&att[o..], &h[j]);
                        if e > 0.0 {
                            e
                        } else {
                            slope * e
                        }
                    })
                    .collect();
                for (&j, w) in nb.iter().zip(softmax(&logits)) {
                    alpha[i][j] = w;
                }
                for f in 0..o {
                    out[[i, f]] = nb.iter().map(|&j| alpha[i][j] * h[j][f]).sum::<f64>();
                }
            }
            (out, Some(alpha))
        }
    }
}

/// `k` nearest other points of each node by exhaustive search, ties broken
/// by index. Returned lists are sorted.
pub fn brute_knn(coords: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = coords.nrows();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = coords[[i, 0]] - coords[[j, 0]];
                    let dy = coords[[i, 1]] - coords[[j, 1]];
                    (dx * dx + dy * dy, j)
                })
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut nb: Vec<usize> = cand.into_iter().take(k.min(n - 1)).map(|(_, j)| j).collect();
            nb.sort_unstable();
            nb
        })
        .collect()
}

/// Local Moran's I with equal weights over each node's in-neighbours.
pub fn moran_double_loop(y: &[f64], g: &SpatialGraph) -> Vec<f64> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let a = dense_adjacency(g);
    (0..n)
        .map(|i| {
            let deg = (0..n).filter(|&j| a[i][j] != 0.0).count() as f64;
            let mut s = 0.0;
            for j in 0..n {
                if a[i][j] != 0.0 {
                    s += z[j] / deg;
                }
            }
            z[i] / m2 * s
        })
        .collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
