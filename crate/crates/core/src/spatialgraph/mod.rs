//! Directed k-nearest-neighbour graphs over planar coordinates.
//!
//! Edges point from a neighbour `j` to the node `i` whose neighbourhood it
//! belongs to, so the in-neighbourhood of `i` is exactly its k nearest
//! distinct points. Self-loops are never stored. Edges are kept sorted by
//! `(target, source)`.

mod kdtree;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub use kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    n_nodes: usize,
    sources: Vec<usize>,
    targets: Vec<usize>,
    edge_weight: Option<Vec<f64>>,
    /// `offsets[i]..offsets[i + 1]` are the incoming edges of node `i`.
    offsets: Vec<usize>,
    coords: Array2<f64>,
}

impl SpatialGraph {
    /// Builds a graph from arbitrary `(source, target)` pairs. Pairs are
    /// re-sorted into canonical order; weights follow their edges.
    pub fn from_edges(
        n_nodes: usize,
        edges: &[(usize, usize)],
        edge_weight: Option<Vec<f64>>,
        coords: Array2<f64>,
    ) -> Result<Self> {
        if coords.dim() != (n_nodes, 2) {
            return Err(Error::Dimension {
                op: "SpatialGraph::from_edges",
                left: (n_nodes, 2),
                right: coords.dim(),
            });
        }
        if let Some(w) = &edge_weight {
            if w.len() != edges.len() {
                return Err(Error::contract(format!(
                    "{} edge weights for {} edges",
                    w.len(),
                    edges.len()
                )));
            }
        }
        for &(s, t) in edges {
            let bad = s.max(t);
            if bad >= n_nodes {
                return Err(Error::Index {
                    op: "SpatialGraph::from_edges",
                    index: bad,
                    bound: n_nodes,
                });
            }
            if s == t {
                return Err(Error::contract(format!("self-loop on node {s}")));
            }
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&e| (edges[e].1, edges[e].0));
        let sources = order.iter().map(|&e| edges[e].0).collect();
        let targets: Vec<usize> = order.iter().map(|&e| edges[e].1).collect();
        let edge_weight = edge_weight.map(|w| order.iter().map(|&e| w[e]).collect());
        let offsets = csr_offsets(&targets, n_nodes);
        Ok(Self {
            n_nodes,
            sources,
            targets,
            edge_weight,
            offsets,
            coords,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// `(source, target)` pairs in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sources.iter().copied().zip(self.targets.iter().copied())
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    /// Explicit edge weights, if any were attached.
    pub fn edge_weight(&self) -> Option<&[f64]> {
        self.edge_weight.as_deref()
    }

    /// Weight of edge `e`; unweighted graphs use binary adjacency.
    pub fn weight(&self, e: usize) -> f64 {
        self.edge_weight.as_ref().map_or(1.0, |w| w[e])
    }

    pub fn with_edge_weight(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.n_edges() {
            return Err(Error::contract(format!(
                "{} edge weights for {} edges",
                w.len(),
                self.n_edges()
            )));
        }
        self.edge_weight = Some(w);
        Ok(self)
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Sources of the incoming edges of `i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Edge indices of the incoming edges of `i`.
    pub fn in_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Fails on the first node without incoming edges.
    pub fn require_in_neighbors(&self, what: &str) -> Result<()> {
        match (0..self.n_nodes).find(|&i| self.in_degree(i) == 0) {
            Some(i) => Err(Error::contract(format!(
                "{what}: node {i} has no incoming edges"
            ))),
            None => Ok(()),
        }
    }
}

fn csr_offsets(sorted_targets: &[usize], n_nodes: usize) -> Vec<usize> {
    let mut offsets = vec![0usize; n_nodes + 1];
    for &t in sorted_targets {
        offsets[t + 1] += 1;
    }
    for i in 0..n_nodes {
        offsets[i + 1] += offsets[i];
    }
    offsets
}

/// Each node receives edges from its `k` nearest distinct nodes (all other
/// nodes when `n <= k`). Distance ties go to the smaller node index.
pub fn knn_graph(coords: ArrayView2<'_, f64>, k: usize, metric: Metric) -> Result<SpatialGraph> {
    let Metric::Euclidean = metric;
    let n = coords.nrows();
    if coords.ncols() != 2 {
        return Err(Error::Dimension {
            op: "knn_graph",
            left: (n, 2),
            right: coords.dim(),
        });
    }
    if n < 2 {
        return Err(Error::contract(format!("knn_graph needs at least 2 points, got {n}")));
    }
    if k == 0 {
        return Err(Error::contract("knn_graph needs k >= 1"));
    }
    let mut points = Vec::with_capacity(n);
    for (r, row) in coords.rows().into_iter().enumerate() {
        if !(row[0].is_finite() && row[1].is_finite()) {
            return Err(Error::data(r, None, "non-finite coordinate"));
        }
        points.push([row[0], row[1]]);
    }

    let k_eff = k.min(n - 1);
    let tree = KdTree::build(&points);
    let mut sources = Vec::with_capacity(n * k_eff);
    let mut targets = Vec::with_capacity(n * k_eff);
    for i in 0..n {
        let mut nbrs = tree.nearest_excluding(i, k_eff);
        nbrs.sort_unstable();
        sources.extend_from_slice(&nbrs);
        targets.extend(std::iter::repeat_n(i, nbrs.len()));
    }
    let offsets = csr_offsets(&targets, n);
    Ok(SpatialGraph {
        n_nodes: n,
        sources,
        targets,
        edge_weight: None,
        offsets,
        coords: coords.to_owned(),
    })
}

/// Row-standardized spatial weights: edge `(j -> i)` gets `1 / in_degree(i)`.
pub fn row_standardized_weights(g: &SpatialGraph) -> Result<Vec<f64>> {
    g.require_in_neighbors("row_standardized_weights")?;
    Ok(g.targets
        .iter()
        .map(|&i| 1.0 / g.in_degree(i) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(coords: &Array2<f64>, k: usize) -> Vec<(usize, usize)> {
        let n = coords.nrows();
        let mut edges = Vec::new();
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = coords[[j, 0]] - coords[[i, 0]];
                    let dy = coords[[j, 1]] - coords[[i, 1]];
                    (dx * dx + dy * dy, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut nb: Vec<usize> = d.iter().take(k).map(|p| p.1).collect();
            nb.sort_unstable();
            edges.extend(nb.into_iter().map(|j| (j, i)));
        }
        edges
    }

    #[test]
    fn collinear_k1() {
        let c = array![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        let g = knn_graph(c.view(), 1, Metric::Euclidean).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, vec![(1, 0), (0, 1), (1, 2)]);
    }

    #[test]
    fn k_covers_everything() {
        let c = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let g = knn_graph(c.view(), 3, Metric::Euclidean).unwrap();
        assert_eq!(g.n_edges(), 12);
        assert!(g.edges().all(|(s, t)| s != t));
        let big = knn_graph(c.view(), 10, Metric::Euclidean).unwrap();
        assert_eq!(big, g);
    }

    #[test]
    fn random_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = Array2::from_shape_fn((200, 2), |_| rng.random::<f64>());
        let g = knn_graph(c.view(), 5, Metric::Euclidean).unwrap();
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(edges, brute_force(&c, 5));
    }

    #[test]
    fn duplicate_and_tied_points_break_ties_by_index() {
        // integer lattice with duplicates forces many exact distance ties
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = Array2::from_shape_fn((120, 2), |_| rng.random_range(0..6) as f64);
        for k in [1, 3, 7] {
            let g = knn_graph(c.view(), k, Metric::Euclidean).unwrap();
            assert_eq!(g.edges().collect::<Vec<_>>(), brute_force(&c, k));
        }
    }

    #[test]
    fn errors() {
        let one = array![[0.0, 0.0]];
        assert!(matches!(
            knn_graph(one.view(), 1, Metric::Euclidean),
            Err(Error::Contract(_))
        ));
        let bad = array![[0.0, 0.0], [1.0, f64::NAN], [2.0, 2.0]];
        assert!(matches!(
            knn_graph(bad.view(), 1, Metric::Euclidean),
            Err(Error::Data { row: 1, .. })
        ));
    }

    #[test]
    fn row_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = Array2::from_shape_fn((30, 2), |_| rng.random::<f64>());
        let g = knn_graph(c.view(), 5, Metric::Euclidean).unwrap();
        let w = row_standardized_weights(&g).unwrap();
        assert!(w.iter().all(|&x| x == 0.2));
        for i in 0..g.n_nodes() {
            let s: f64 = g.in_edges(i).map(|e| w[e]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let g1 = knn_graph(c.view(), 1, Metric::Euclidean).unwrap();
        assert!(row_standardized_weights(&g1).unwrap().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn row_standardized_irregular_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 15;
        let mut edges = Vec::new();
        for t in 0..n {
            let deg = rng.random_range(1..6);
            for s in (0..n).filter(|&s| s != t).take(deg) {
                edges.push((s, t));
            }
        }
        let g = SpatialGraph::from_edges(n, &edges, None, Array2::zeros((n, 2))).unwrap();
        let w = row_standardized_weights(&g).unwrap();
        for i in 0..n {
            let s: f64 = g.in_edges(i).map(|e| w[e]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_rejected_by_row_standardization() {
        let g = SpatialGraph::from_edges(3, &[(0, 1), (1, 0)], None, Array2::zeros((3, 2))).unwrap();
        assert!(row_standardized_weights(&g).is_err());
    }

    #[test]
    fn from_edges_canonicalizes() {
        let g = SpatialGraph::from_edges(
            3,
            &[(2, 1), (0, 1), (1, 0)],
            Some(vec![0.5, 0.25, 1.0]),
            Array2::zeros((3, 2)),
        )
        .unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(1, 0), (0, 1), (2, 1)]);
        assert_eq!(g.edge_weight().unwrap(), &[1.0, 0.25, 0.5]);
        assert!(SpatialGraph::from_edges(2, &[(1, 1)], None, Array2::zeros((2, 2))).is_err());
    }

    proptest! {
        #[test]
        fn in_degree_is_min_k_n_minus_1(n in 2usize..60, k in 1usize..9, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Array2::from_shape_fn((n, 2), |_| rng.random_range(-50.0..50.0));
            let g = knn_graph(c.view(), k, Metric::Euclidean).unwrap();
            for i in 0..n {
                prop_assert_eq!(g.in_degree(i), k.min(n - 1));
            }
            let again = knn_graph(c.view(), k, Metric::Euclidean).unwrap();
            prop_assert_eq!(g, again);
        }

        #[test]
        fn translation_and_scaling_invariant(
            n in 2usize..80, k in 1usize..7, seed in 0u64..500,
            dx in -1000i32..1000, dy in -1000i32..1000, pow in -4i32..5,
        ) {
            // integer coordinates and power-of-two scales keep arithmetic exact
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Array2::from_shape_fn((n, 2), |_| rng.random_range(-200..200) as f64);
            let s = 2f64.powi(pow);
            let mut moved = c.clone();
            for mut row in moved.rows_mut() {
                row[0] = (row[0] + dx as f64) * s;
                row[1] = (row[1] + dy as f64) * s;
            }
            let a = knn_graph(c.view(), k, Metric::Euclidean).unwrap();
            let b = knn_graph(moved.view(), k, Metric::Euclidean).unwrap();
            prop_assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        }
    }
}
