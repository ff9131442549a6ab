//! Exact nearest-neighbor queries over a fixed point set.
//!
//! Brute force below a size threshold, a k-d tree above it; both return the
//! exact nearest point with ties broken by the lowest index, so results do
//! not depend on which path was taken.

use alloc::vec::Vec;

use crate::geometry::{dist_sq, Vec3};

const BRUTE_FORCE_LIMIT: usize = 2000;
const LEAF_SIZE: usize = 16;

pub struct NearestNeighbors<'a> {
    points: &'a [Vec3],
    tree: Option<KdTree>,
}

struct KdTree {
    // Flattened nodes; children at 2i+1 / 2i+2 style indices are avoided in
    // favor of explicit links so the tree can stay unbalanced at the leaves.
    nodes: Vec<KdNode>,
    indices: Vec<usize>,
}

enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

impl<'a> NearestNeighbors<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let tree = if points.len() > BRUTE_FORCE_LIMIT {
            Some(KdTree::build(points))
        } else {
            None
        };
        NearestNeighbors { points, tree }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point to q.
    /// Panics on an empty set.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest() on empty point set");
        match &self.tree {
            None => {
                let mut best = 0;
                let mut best_d = dist_sq(q, self.points[0]);
                for (i, &p) in self.points.iter().enumerate().skip(1) {
                    let d = dist_sq(q, p);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                (best, best_d)
            }
            Some(tree) => {
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                tree.search(self.points, 0, q, &mut best, &mut best_d);
                (best, best_d)
            }
        }
    }
}

impl KdTree {
    fn build(points: &[Vec3]) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let n = indices.len();
        Self::build_node(points, &mut nodes, &mut indices, 0, n);
        KdTree { nodes, indices }
    }

    fn build_node(
        points: &[Vec3],
        nodes: &mut Vec<KdNode>,
        indices: &mut [usize],
        start: usize,
        end: usize,
    ) -> usize {
        let id = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        // Split on the widest axis at the median point.
        let slice = &mut indices[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let mut axis = 0;
        for a in 1..3 {
            if hi[a] - lo[a] > hi[axis] - lo[axis] {
                axis = a;
            }
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = points[slice[mid]][axis];
        nodes.push(KdNode::Leaf { start: 0, end: 0 }); // placeholder
        let left = Self::build_node(points, nodes, indices, start, start + mid);
        let right = Self::build_node(points, nodes, indices, start + mid, end);
        nodes[id] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn search(&self, points: &[Vec3], node: usize, q: Vec3, best: &mut usize, best_d: &mut f64) {
        match &self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.indices[*start..*end] {
                    let d = dist_sq(q, points[i]);
                    if d < *best_d || (d == *best_d && i < *best) {
                        *best_d = d;
                        *best = i;
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis] - value;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(points, near, q, best, best_d);
                if delta * delta <= *best_d {
                    self.search(points, far, q, best, best_d);
                }
            }
        }
    }
}
