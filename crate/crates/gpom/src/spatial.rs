//! A balanced kd-tree over 2-D points for exact nearest-neighbor and
//! radius queries. Used to store training points and observed cell centers
//! and to pick the query cells each scan should predict.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::Point2;

#[derive(Debug, Clone)]
struct Node {
    /// index into `points`
    point: usize,
    axis: u8,
    left: Option<usize>,
    right: Option<usize>,
}

/// An immutable kd-tree; `payload` carries a caller-side id per point.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<(Point2, usize)>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

/// One query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub point: Point2,
    pub payload: usize,
    pub distance: f64,
}

#[derive(PartialEq)]
struct HeapEntry {
    distance_sq: f64,
    index: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.distance_sq
            .partial_cmp(&other.distance_sq)
            .unwrap()
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    /// Build from (point, payload) pairs. Median splits on the wider axis of
    /// each partition keep the tree balanced; ties break on payload so the
    /// build is deterministic.
    pub fn build(items: &[(Point2, usize)]) -> Result<KdTree> {
        for (p, _) in items {
            p.check_finite()?;
        }
        let mut tree = KdTree {
            points: items.to_vec(),
            nodes: Vec::with_capacity(items.len()),
            root: None,
        };
        let mut order: Vec<usize> = (0..items.len()).collect();
        tree.root = tree.build_recursive(&mut order);
        Ok(tree)
    }

    pub fn from_points(points: &[Point2]) -> Result<KdTree> {
        let items: Vec<(Point2, usize)> =
            points.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        Self::build(&items)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coord(&self, idx: usize, axis: u8) -> f64 {
        let p = self.points[idx].0;
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    }

    fn build_recursive(&mut self, order: &mut [usize]) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in order.iter() {
            let p = self.points[i].0;
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
        let axis: u8 = if (max_x - min_x) >= (max_y - min_y) { 0 } else { 1 };

        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis)
                .partial_cmp(&self.coord(b, axis))
                .unwrap()
                .then(self.points[a].1.cmp(&self.points[b].1))
        });
        let point = order[mid];
        let (left_slice, rest) = order.split_at_mut(mid);
        let right_slice = &mut rest[1..];

        let node_idx = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let left = self.build_recursive(left_slice);
        let right = self.build_recursive(right_slice);
        self.nodes[node_idx].left = left;
        self.nodes[node_idx].right = right;
        Some(node_idx)
    }

    /// Exact k nearest neighbors by Euclidean distance, closest first.
    pub fn nearest(&self, query: &Point2, k: usize) -> Result<Vec<Neighbor>> {
        query.check_finite()?;
        if self.is_empty() {
            return Err(Error::InvalidState("nearest query on an empty index".into()));
        }
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        self.nearest_recursive(self.root, query, k, &mut heap);
        let mut results: Vec<Neighbor> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| Neighbor {
                point: self.points[e.index].0,
                payload: self.points[e.index].1,
                distance: e.distance_sq.sqrt(),
            })
            .collect();
        results.truncate(k);
        Ok(results)
    }

    fn nearest_recursive(
        &self,
        node: Option<usize>,
        query: &Point2,
        k: usize,
        heap: &mut BinaryHeap<HeapEntry>,
    ) {
        let Some(idx) = node else { return };
        let node = &self.nodes[idx];
        let point = self.points[node.point].0;
        let d2 = query.distance_sq(&point);
        heap.push(HeapEntry {
            distance_sq: d2,
            index: node.point,
        });
        if heap.len() > k {
            heap.pop();
        }

        let q_coord = if node.axis == 0 { query.x } else { query.y };
        let p_coord = if node.axis == 0 { point.x } else { point.y };
        let delta = q_coord - p_coord;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.nearest_recursive(near, query, k, heap);
        let worst = heap.peek().map(|e| e.distance_sq).unwrap_or(f64::INFINITY);
        if heap.len() < k || delta * delta <= worst {
            self.nearest_recursive(far, query, k, heap);
        }
    }

    /// Payloads of all points within `radius` of the query (inclusive).
    pub fn within_radius(&self, query: &Point2, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_recursive(self.root, query, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    /// Whether any stored point lies within `radius` of the query.
    pub fn has_within(&self, query: &Point2, radius: f64) -> bool {
        self.has_within_recursive(self.root, query, radius * radius)
    }

    fn has_within_recursive(&self, node: Option<usize>, query: &Point2, radius_sq: f64) -> bool {
        let Some(idx) = node else { return false };
        let node = &self.nodes[idx];
        let point = self.points[node.point].0;
        if query.distance_sq(&point) <= radius_sq {
            return true;
        }
        let q_coord = if node.axis == 0 { query.x } else { query.y };
        let p_coord = if node.axis == 0 { point.x } else { point.y };
        let delta = q_coord - p_coord;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if self.has_within_recursive(near, query, radius_sq) {
            return true;
        }
        delta * delta <= radius_sq && self.has_within_recursive(far, query, radius_sq)
    }

    fn radius_recursive(
        &self,
        node: Option<usize>,
        query: &Point2,
        radius_sq: f64,
        out: &mut Vec<usize>,
    ) {
        let Some(idx) = node else { return };
        let node = &self.nodes[idx];
        let point = self.points[node.point].0;
        if query.distance_sq(&point) <= radius_sq {
            out.push(self.points[node.point].1);
        }
        let q_coord = if node.axis == 0 { query.x } else { query.y };
        let p_coord = if node.axis == 0 { point.x } else { point.y };
        let delta = q_coord - p_coord;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.radius_recursive(near, query, radius_sq, out);
        if delta * delta <= radius_sq {
            self.radius_recursive(far, query, radius_sq, out);
        }
    }
}
