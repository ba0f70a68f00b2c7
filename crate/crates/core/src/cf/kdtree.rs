//! Exact nearest-neighbour search with a k-d tree.
//!
//! Nodes split on dimension `depth % k` at the median point; points equal to
//! the split value go left. Queries keep the best `m` candidates in a
//! max-heap ordered by `(distance, id)` and skip a subtree only when its
//! axis-distance lower bound is strictly worse than the current `m`-th best,
//! so ties resolve to the lower id exactly as a linear scan would.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub nodes_visited: usize,
}

#[derive(Clone, Debug)]
struct Node {
    point: usize,
    split_dim: usize,
    split: f64,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    ids: Vec<u64>,
    points: Vec<Vec<f64>>,
    nodes: Vec<Node>,
    root: usize,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Candidate ordered by squared distance, then id.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    d2: f64,
    id: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Builds a tree over `(id, point)` pairs.
pub fn build_kdtree(points: Vec<(u64, Vec<f64>)>) -> Result<KdTree> {
    let Some(dim) = points.first().map(|(_, p)| p.len()) else {
        return Err(Error::EmptyIndex);
    };
    if dim == 0 {
        return Err(Error::Shape("points must have at least one dimension".into()));
    }
    if let Some((id, p)) = points.iter().find(|(_, p)| p.len() != dim) {
        return Err(Error::Shape(format!(
            "point {id} has dimension {}, expected {dim}",
            p.len()
        )));
    }
    let (ids, points): (Vec<u64>, Vec<Vec<f64>>) = points.into_iter().unzip();
    let mut tree = KdTree {
        dim,
        ids,
        points,
        nodes: Vec::new(),
        root: 0,
    };

    // (point indices, depth, parent node, is_left)
    let mut work: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> =
        vec![((0..tree.points.len()).collect(), 0, None)];
    while let Some((mut idx, depth, parent)) = work.pop() {
        let split_dim = depth % dim;
        idx.sort_by(|&a, &b| {
            tree.points[a][split_dim]
                .total_cmp(&tree.points[b][split_dim])
                .then(tree.ids[a].cmp(&tree.ids[b]))
        });
        let median = (idx.len() - 1) / 2;
        let split = tree.points[idx[median]][split_dim];
        // Everything equal to the split value belongs on the left.
        let mut pivot = median;
        while pivot + 1 < idx.len() && tree.points[idx[pivot + 1]][split_dim] <= split {
            pivot += 1;
        }
        let node = tree.nodes.len();
        tree.nodes.push(Node {
            point: idx[pivot],
            split_dim,
            split,
            left: None,
            right: None,
        });
        match parent {
            Some((p, true)) => tree.nodes[p].left = Some(node),
            Some((p, false)) => tree.nodes[p].right = Some(node),
            None => tree.root = node,
        }
        let right: Vec<usize> = idx[pivot + 1..].to_vec();
        idx.truncate(pivot);
        if !right.is_empty() {
            work.push((right, depth + 1, Some((node, false))));
        }
        if !idx.is_empty() {
            work.push((idx, depth + 1, Some((node, true))));
        }
    }
    Ok(tree)
}

impl KdTree {
    /// Tree over unlabelled points; ids are the point indices.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        build_kdtree(points.into_iter().enumerate().map(|(i, p)| (i as u64, p)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self.root, 1)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            let node = &self.nodes[n];
            stack.extend(node.left.map(|c| (c, d + 1)));
            stack.extend(node.right.map(|c| (c, d + 1)));
        }
        best
    }

    /// Checks the ordering invariant at every node: left subtree coordinates
    /// are `<=` the split, right subtree coordinates are `>`.
    pub fn check_invariants(&self) -> bool {
        let mut stack = vec![(self.root, Vec::<(usize, f64, bool)>::new())];
        let mut seen = 0;
        while let Some((n, constraints)) = stack.pop() {
            seen += 1;
            let node = &self.nodes[n];
            let p = &self.points[node.point];
            let ok = constraints
                .iter()
                .all(|&(d, s, left)| if left { p[d] <= s } else { p[d] > s });
            if !ok || p[node.split_dim] != node.split {
                return false;
            }
            for (child, left) in [(node.left, true), (node.right, false)] {
                if let Some(c) = child {
                    let mut next = constraints.clone();
                    next.push((node.split_dim, node.split, left));
                    stack.push((c, next));
                }
            }
        }
        seen == self.points.len()
    }

    /// Split dimensions encountered along the leftmost path, root first.
    pub fn split_dims_leftmost(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(self.root);
        while let Some(n) = cur {
            out.push(self.nodes[n].split_dim);
            cur = self.nodes[n].left;
        }
        out
    }

    pub fn point(&self, id: u64) -> Option<&[f64]> {
        self.ids.iter().position(|&i| i == id).map(|i| self.points[i].as_slice())
    }

    /// Exact `m` nearest neighbours of `q`, nearest first.
    pub fn nn_query(&self, q: &[f64], m: usize) -> Result<Vec<Neighbor>> {
        Ok(self.nn_query_with_stats(q, m)?.0)
    }

    pub fn nn_query_with_stats(&self, q: &[f64], m: usize) -> Result<(Vec<Neighbor>, QueryStats)> {
        if q.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has dimension {}, index has {}",
                q.len(),
                self.dim
            )));
        }
        if m > self.len() {
            return Err(Error::InsufficientDistractors {
                requested: m,
                available: self.len(),
            });
        }
        let mut stats = QueryStats::default();
        if m == 0 {
            return Ok((Vec::new(), stats));
        }
        let mut best: BinaryHeap<Candidate> = BinaryHeap::with_capacity(m + 1);
        // (node, lower bound on squared distance to anything in its subtree)
        let mut stack = vec![(self.root, 0.0f64)];
        while let Some((n, bound)) = stack.pop() {
            if best.len() == m && best.peek().is_some_and(|w| bound > w.d2) {
                continue;
            }
            stats.nodes_visited += 1;
            let node = &self.nodes[n];
            let cand = Candidate {
                d2: squared_distance(q, &self.points[node.point]),
                id: self.ids[node.point],
            };
            if best.len() < m {
                best.push(cand);
            } else if best.peek().is_some_and(|w| cand < *w) {
                best.pop();
                best.push(cand);
            }
            let diff = q[node.split_dim] - node.split;
            let (near, far) = if diff <= 0.0 {
                (node.left, node.right)
            } else {
                (node.right, node.left)
            };
            // Far side pushed first so the near side is explored first.
            if let Some(f) = far {
                stack.push((f, bound.max(diff * diff)));
            }
            if let Some(c) = near {
                stack.push((c, bound));
            }
        }
        let mut out = best.into_sorted_vec();
        out.truncate(m);
        Ok((
            out.into_iter()
                .map(|c| Neighbor {
                    id: c.id,
                    distance: c.d2.sqrt(),
                })
                .collect(),
            stats,
        ))
    }
}

/// Exhaustive scan with the same ordering rules as [`KdTree::nn_query`].
#[derive(Clone, Debug)]
pub struct LinearIndex {
    ids: Vec<u64>,
    points: Vec<Vec<f64>>,
}

impl LinearIndex {
    pub fn new(points: Vec<(u64, Vec<f64>)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let (ids, points) = points.into_iter().unzip();
        Ok(LinearIndex { ids, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nn_query(&self, q: &[f64], m: usize) -> Result<Vec<Neighbor>> {
        if m > self.len() {
            return Err(Error::InsufficientDistractors {
                requested: m,
                available: self.len(),
            });
        }
        let mut all: Vec<Candidate> = self
            .points
            .iter()
            .zip(&self.ids)
            .map(|(p, &id)| Candidate {
                d2: squared_distance(q, p),
                id,
            })
            .collect();
        all.sort();
        Ok(all
            .into_iter()
            .take(m)
            .map(|c| Neighbor {
                id: c.id,
                distance: c.d2.sqrt(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_tree() {
        let t = KdTree::from_points(vec![vec![1.0, 2.0]]).unwrap();
        let nn = t.nn_query(&[100.0, -5.0], 1).unwrap();
        assert_eq!(nn[0].id, 0);
        assert!(t.check_invariants());
    }

    #[test]
    fn empty_and_oversized_queries() {
        assert!(matches!(KdTree::from_points(vec![]), Err(Error::EmptyIndex)));
        let t = KdTree::from_points(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            t.nn_query(&[0.0], 3),
            Err(Error::InsufficientDistractors { requested: 3, available: 2 })
        ));
        assert!(t.nn_query(&[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn two_dimensional_splits_alternate() {
        let pts = vec![
            vec![2.0, 3.0],
            vec![5.0, 4.0],
            vec![9.0, 6.0],
            vec![4.0, 7.0],
            vec![8.0, 1.0],
            vec![7.0, 2.0],
            vec![1.0, 1.0],
        ];
        let t = KdTree::from_points(pts).unwrap();
        assert_eq!(t.split_dims_leftmost(), vec![0, 1, 0]);
        assert!(t.check_invariants());
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn duplicates_go_left_and_ties_prefer_lower_id() {
        let pts = vec![vec![1.0, 1.0]; 6];
        let t = KdTree::from_points(pts).unwrap();
        assert!(t.check_invariants());
        let nn = t.nn_query(&[1.0, 1.0], 3).unwrap();
        assert_eq!(nn.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(nn.iter().all(|n| n.distance == 0.0));
    }

    #[test]
    fn self_match_comes_first() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect();
        let t = KdTree::from_points(pts.clone()).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let nn = t.nn_query(p, 1).unwrap()[0];
            assert_eq!(nn.distance, 0.0);
            assert_eq!(t.point(nn.id).unwrap(), p.as_slice());
            assert!(nn.id <= i as u64);
        }
    }
}
