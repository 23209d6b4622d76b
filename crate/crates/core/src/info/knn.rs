//! Nearest-neighbour queries under a block max-norm.
//!
//! Coordinates are grouped into blocks; the distance between two points is
//! the maximum over blocks of the Euclidean distance within each block. One
//! block gives plain L2; two blocks give the joint metric of the KSG
//! estimator. Brute force and the KD-tree compute distances with the same
//! routine, so their results agree bit for bit.

use std::ops::Range;

/// Row-major point set with its block structure.
#[derive(Clone, Debug)]
pub struct PointSet {
    pub data: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub blocks: Vec<Range<usize>>,
}

impl PointSet {
    pub fn new(data: Vec<f64>, n: usize, dim: usize, blocks: Vec<Range<usize>>) -> Self {
        assert_eq!(data.len(), n * dim);
        assert!(blocks.iter().all(|b| b.end <= dim && b.start < b.end));
        Self { data, n, dim, blocks }
    }

    pub fn single_block(data: Vec<f64>, n: usize, dim: usize) -> Self {
        Self::new(data, n, dim, vec![0..dim])
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        block_distance(&self.blocks, self.point(i), self.point(j))
    }
}

#[inline]
pub fn block_distance(blocks: &[Range<usize>], a: &[f64], b: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for r in blocks {
        let mut s = 0.0;
        for d in r.clone() {
            let t = a[d] - b[d];
            s += t * t;
        }
        worst = worst.max(s.sqrt());
    }
    worst
}

/// Distance from `i` to its `k`-th nearest neighbour (self excluded) among `candidates`.
pub fn kth_distance_brute(points: &PointSet, i: usize, k: usize, candidates: &[usize], buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(candidates.iter().filter(|&&j| j != i).map(|&j| points.distance(i, j)));
    assert!(buf.len() >= k, "not enough neighbours");
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Number of points `j ≠ i` with distance strictly below `radius`.
pub fn count_within_brute(points: &PointSet, i: usize, radius: f64) -> usize {
    (0..points.n).filter(|&j| j != i && points.distance(i, j) < radius).count()
}

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
struct Node {
    start: usize,
    end: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    children: Option<(usize, usize)>,
}

/// KD-tree over a subset of the points of a [`PointSet`].
#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a PointSet,
    index: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a PointSet, subset: Option<&[usize]>) -> Self {
        let index: Vec<usize> = match subset {
            Some(s) => s.to_vec(),
            None => (0..points.n).collect(),
        };
        let mut tree = Self { points, index, nodes: Vec::new() };
        if !tree.index.is_empty() {
            tree.build_node(0, tree.index.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let dim = self.points.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &p in &self.index[start..end] {
            for (d, v) in self.points.point(p).iter().enumerate() {
                lo[d] = lo[d].min(*v);
                hi[d] = hi[d].max(*v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { start, end, lo: lo.clone(), hi: hi.clone(), children: None });
        if end - start > LEAF_SIZE {
            let split = (0..dim)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .expect("non-empty dimension");
            if hi[split] > lo[split] {
                let mid = (start + end) / 2;
                let pts = self.points;
                self.index[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                    pts.point(a)[split].total_cmp(&pts.point(b)[split])
                });
                let left = self.build_node(start, mid);
                let right = self.build_node(mid, end);
                self.nodes[id].children = Some((left, right));
            }
        }
        id
    }

    fn lower_bound(&self, node: &Node, q: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.points.blocks {
            let mut s = 0.0;
            for d in r.clone() {
                let t = if q[d] < node.lo[d] {
                    node.lo[d] - q[d]
                } else if q[d] > node.hi[d] {
                    q[d] - node.hi[d]
                } else {
                    0.0
                };
                s += t * t;
            }
            worst = worst.max(s.sqrt());
        }
        worst
    }

    /// Distance from point `i` to its `k`-th nearest neighbour in the tree, self excluded.
    pub fn kth_distance(&self, i: usize, k: usize) -> f64 {
        assert!(k >= 1);
        // Sorted ascending, at most k entries.
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        let q = self.points.point(i);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if best.len() == k && self.lower_bound(node, q) >= best[k - 1] {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let dl = self.lower_bound(&self.nodes[l], q);
                    let dr = self.lower_bound(&self.nodes[r], q);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for &j in &self.index[node.start..node.end] {
                        if j == i {
                            continue;
                        }
                        let d = self.points.distance(i, j);
                        if best.len() < k || d < best[k - 1] {
                            let pos = best.partition_point(|&b| b <= d);
                            best.insert(pos, d);
                            best.truncate(k);
                        }
                    }
                }
            }
        }
        assert!(best.len() == k, "not enough neighbours");
        best[k - 1]
    }

    /// Number of tree points `j ≠ i` strictly closer than `radius`.
    pub fn count_within(&self, i: usize, radius: f64) -> usize {
        let q = self.points.point(i);
        let mut count = 0;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if self.lower_bound(node, q) >= radius {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => {
                    count += self.index[node.start..node.end]
                        .iter()
                        .filter(|&&j| j != i && self.points.distance(i, j) < radius)
                        .count();
                }
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng as _;

    fn random_points(n: usize, dim: usize, blocks: Vec<Range<usize>>, seed: u64) -> PointSet {
        let mut rng = rng_from(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        PointSet::new(data, n, dim, blocks)
    }

    #[test]
    fn tree_matches_brute_force_exactly() {
        for (dim, blocks) in [(1, vec![0..1]), (3, vec![0..3]), (4, vec![0..1, 1..4])] {
            let pts = random_points(500, dim, blocks, dim as u64);
            let tree = KdTree::build(&pts, None);
            let all: Vec<usize> = (0..pts.n).collect();
            let mut buf = Vec::new();
            for i in (0..pts.n).step_by(7) {
                for k in [1, 3, 5] {
                    let a = tree.kth_distance(i, k);
                    let b = kth_distance_brute(&pts, i, k, &all, &mut buf);
                    assert_eq!(a.to_bits(), b.to_bits());
                    assert_eq!(tree.count_within(i, a), count_within_brute(&pts, i, a));
                }
            }
        }
    }

    #[test]
    fn subset_tree_only_sees_subset() {
        let pts = PointSet::single_block(vec![0.0, 0.1, 0.2, 10.0, 10.5], 5, 1);
        let tree = KdTree::build(&pts, Some(&[0, 3, 4]));
        assert_eq!(tree.kth_distance(0, 1), 10.0);
        assert_eq!(tree.count_within(0, 100.0), 2);
    }

    #[test]
    fn block_distance_is_max_of_block_norms() {
        let d = block_distance(&[0..1, 1..3], &[0.0, 0.0, 0.0], &[1.0, 3.0, 4.0]);
        assert_eq!(d, 5.0);
    }
}
