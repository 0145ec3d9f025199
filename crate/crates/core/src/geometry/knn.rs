use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist2, Point3};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// A query result: point index and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact k-d tree over a fixed point set.
///
/// Results are ordered by ascending distance, ties by ascending point index,
/// and match a brute-force scan exactly.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Heap entry ordered by `(d2, index)`, largest on top.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    index: usize,
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
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl NeighborIndex {
    pub fn build(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("cannot index an empty point set"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::data(format!("point {i} has a non-finite coordinate")));
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// The `k` nearest points to `query`; saturates at the index size.
    pub fn query_knn(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        finish(heap.into_vec())
    }

    fn knn_node(&self, id: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let c = Candidate { d2: dist2(q, &self.points[index]), index };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, heap);
                // `<=` keeps equal-distance points with smaller indices reachable.
                if heap.len() < k || delta * delta <= heap.peek().expect("heap is full").d2 {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }

    /// All points within `radius` of `query` (inclusive).
    pub fn query_radius(&self, query: &Point3, radius: f64) -> Vec<Neighbor> {
        if !(radius >= 0.0) {
            return Vec::new();
        }
        let r2 = radius * radius;
        let mut found = Vec::new();
        self.radius_node(0, query, r2, &mut found);
        finish(found)
    }

    fn radius_node(&self, id: usize, q: &Point3, r2: f64, out: &mut Vec<Candidate>) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let d2 = dist2(q, &self.points[index]);
                    if d2 <= r2 {
                        out.push(Candidate { d2, index });
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = q[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, q, r2, out);
                if delta * delta <= r2 {
                    self.radius_node(far, q, r2, out);
                }
            }
        }
    }
}

fn finish(mut found: Vec<Candidate>) -> Vec<Neighbor> {
    found.sort_unstable();
    found
        .into_iter()
        .map(|c| Neighbor { index: c.index, distance: c.d2.sqrt() })
        .collect()
}
