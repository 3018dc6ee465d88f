//! Exact k-nearest-neighbor search with a k-d tree.
//!
//! Neighbors are ordered by squared Euclidean distance (accumulated in
//! coordinate order) and then by point index, so results are unique and
//! match an exhaustive scan exactly, ties included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;
const BRUTE_FORCE_RATIO: usize = 8;
const BRUTE_FORCE_DIM: usize = 24;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// k-d tree over the rows of a matrix.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<f64>,
    dim: usize,
    order: Vec<usize>,
    root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

impl NeighborIndex {
    pub fn build(points: &DMatrix<f64>) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("neighbor index needs finite points".into()));
        }
        let (n, dim) = points.shape();
        let mut flat = Vec::with_capacity(n * dim);
        for row in points.row_iter() {
            flat.extend(row.iter());
        }
        let mut order: Vec<usize> = (0..n).collect();
        let root = Self::build_node(&flat, dim, &mut order, 0, n);
        Ok(NeighborIndex {
            points: flat,
            dim,
            order,
            root,
        })
    }

    fn build_node(points: &[f64], dim: usize, order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE || dim == 0 {
            return Node::Leaf { start, end };
        }
        let coord = |i: usize, d: usize| points[i * dim + d];
        let slice = &mut order[start..end];
        let split_dim = (0..dim)
            .map(|d| {
                let (lo, hi) = slice
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(coord(i, d)), hi.max(coord(i, d))));
                (d, hi - lo)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(d, _)| d)
            .unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| coord(a, split_dim).total_cmp(&coord(b, split_dim)).then(a.cmp(&b)));
        let value = coord(slice[mid], split_dim);
        Node::Split {
            dim: split_dim,
            value,
            left: Box::new(Self::build_node(points, dim, order, start, start + mid)),
            right: Box::new(Self::build_node(points, dim, order, start + mid, end)),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// The `min(k, n - 1)` nearest neighbors of stored point `i`, excluding `i`,
    /// nearest first.
    pub fn query(&self, i: usize, k: usize) -> Vec<usize> {
        let q = self.point(i).to_vec();
        self.query_point(&q, k, Some(i))
    }

    /// The `k` nearest stored points to `q` (skipping `exclude`), nearest first.
    pub fn query_point(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        if k * BRUTE_FORCE_RATIO >= self.len() || self.dim > BRUTE_FORCE_DIM {
            return self.scan(q, k, exclude);
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, q, k, exclude, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| c.index).collect()
    }

    /// Exhaustive scan; faster than the tree for large k or many dimensions,
    /// where the tree visits nearly every leaf anyway.
    fn scan(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut all: Vec<Candidate> = (0..self.len())
            .filter(|&i| Some(i) != exclude)
            .map(|i| Candidate {
                dist: squared_distance(q, self.point(i)),
                index: i,
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable(k - 1);
            all.truncate(k);
        }
        all.sort_unstable();
        all.into_iter().map(|c| c.index).collect()
    }

    fn search(&self, node: &Node, q: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist: squared_distance(q, self.point(i)),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, heap);
                // points on the far side are at least diff^2 away; equality must
                // still be visited because a lower index wins ties
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Neighbor lists for every stored point.
    pub fn all_neighbors(&self, k: usize) -> Vec<Vec<usize>> {
        (0..self.len()).map(|i| self.query(i, k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, seeded};
    use rand::Rng;

    fn brute_force(points: &DMatrix<f64>, i: usize, k: usize) -> Vec<usize> {
        let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
        let mut c: Vec<(f64, usize)> = (0..rows.len())
            .filter(|&j| j != i)
            .map(|j| (squared_distance(&rows[i], &rows[j]), j))
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        c.into_iter().take(k).map(|(_, j)| j).collect()
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = seeded(42, 0);
        for _ in 0..100 {
            let n = rng.random_range(2..=512);
            let d = rng.random_range(1..=16);
            let points = normal_matrix(n, d, &mut rng);
            let index = NeighborIndex::build(&points).unwrap();
            let k = rng.random_range(1..=n.min(40));
            for i in (0..n).step_by(n / 8 + 1) {
                assert_eq!(index.query(i, k), brute_force(&points, i, k));
            }
        }
    }

    #[test]
    fn scan_path_matches_brute_force() {
        let mut rng = seeded(43, 0);
        for (n, d, k) in [(300, 30, 5), (200, 3, 150), (64, 2, 63)] {
            let mut points = normal_matrix(n, d, &mut rng);
            let dup = points.row(3).clone_owned();
            points.row_mut(7).copy_from(&dup);
            let index = NeighborIndex::build(&points).unwrap();
            for i in 0..n {
                assert_eq!(index.query(i, k), brute_force(&points, i, k));
            }
        }
    }

    #[test]
    fn ties_break_by_lower_index() {
        // grid with many equal distances and duplicate points
        let mut vals = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                vals.extend([i as f64, j as f64]);
            }
        }
        vals.extend([2.0, 2.0, 2.0, 2.0]);
        let points = DMatrix::from_row_slice(vals.len() / 2, 2, &vals);
        let index = NeighborIndex::build(&points).unwrap();
        for i in 0..points.nrows() {
            for k in [1, 4, 9, 20] {
                assert_eq!(index.query(i, k), brute_force(&points, i, k));
            }
        }
    }

    #[test]
    fn returns_at_most_n_minus_one_without_self() {
        let points = normal_matrix(5, 2, &mut seeded(1, 0));
        let index = NeighborIndex::build(&points).unwrap();
        let r = index.query(2, 10);
        assert_eq!(r.len(), 4);
        assert!(!r.contains(&2));
    }
}
