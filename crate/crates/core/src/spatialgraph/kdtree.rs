//! Static 2-D k-d tree with exact k-nearest-neighbour queries.
//!
//! Candidates are ranked by `(squared distance, index)` so the result is
//! identical to a brute-force scan with index tie-breaking.

use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [[f64; 2]],
    order: Vec<usize>,
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [[f64; 2]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(points, &mut order, 0, 0);
        Self {
            points,
            order,
            root,
        }
    }

    fn build_node(points: &[[f64; 2]], order: &mut [usize], offset: usize, depth: usize) -> Node {
        if order.len() <= LEAF_SIZE {
            return Node::Leaf {
                start: offset,
                end: offset + order.len(),
            };
        }
        let axis = depth % 2;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = points[order[mid]][axis];
        let (lo, hi) = order.split_at_mut(mid);
        Node::Split {
            axis,
            value,
            left: Box::new(Self::build_node(points, lo, offset, depth + 1)),
            right: Box::new(Self::build_node(points, hi, offset + mid, depth + 1)),
        }
    }

    /// The `k` nearest points to `points[query]`, excluding the query itself,
    /// ordered by ascending `(distance, index)`.
    pub fn nearest_excluding(&self, query: usize, k: usize) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(&self.root, query, k, &mut heap);
        }
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(&self, node: &Node, query: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let q = self.points[query];
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if i == query {
                        continue;
                    }
                    let p = self.points[i];
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    let cand = Candidate {
                        dist2: dx * dx + dy * dy,
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, heap);
                // equal distances may still win on index, so only prune strictly
                let plane2 = diff * diff;
                if heap.len() < k || plane2 <= heap.peek().expect("heap is full").dist2 {
                    self.search(far, query, k, heap);
                }
            }
        }
    }
}
