//! Exact nearest-neighbour search over 3-DOF positions or 6-DOF
//! position-plus-scaled-normal embeddings.

use crate::error::{Error, Result};
use nalgebra::{Point3, Vector3};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// kd-tree over rows of `[p | w * n]` under the Euclidean metric.
///
/// Queries return the exact nearest member; distance ties are broken by the
/// lowest original index so that downstream matching stays deterministic.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 6]>,
    order: Vec<usize>, // permutation of 0..K referenced by leaves
    nodes: Vec<Node>,
    root: usize,
    normal_weight: f64,
}

/// Builds an index over `points`, optionally augmented with
/// `normal_weight * normals` as three extra coordinates.
///
/// `normal_weight > 0` requires normals; an empty point set is an error.
pub fn build_spatial_index(
    points: &[Point3<f64>],
    normals: Option<&[Vector3<f64>]>,
    normal_weight: f64,
) -> Result<SpatialIndex> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if normal_weight > 0.0 && normals.is_none() {
        return Err(Error::MissingNormals(normal_weight));
    }
    let embedded: Vec<[f64; 6]> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let n = match normals {
                Some(ns) if normal_weight > 0.0 => ns[i] * normal_weight,
                _ => Vector3::zeros(),
            };
            [p.x, p.y, p.z, n.x, n.y, n.z]
        })
        .collect();
    Ok(SpatialIndex::build(embedded, normal_weight))
}

impl SpatialIndex {
    fn build(points: Vec<[f64; 6]>, normal_weight: f64) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let root = Self::build_node(&points, &mut order, 0, points.len(), &mut nodes);
        SpatialIndex {
            points,
            order,
            nodes,
            root,
            normal_weight,
        }
    }

    fn build_node(
        points: &[[f64; 6]],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { start, end });
            return nodes.len() - 1;
        }
        // split on the dimension with the largest spread
        let mut lo = [f64::INFINITY; 6];
        let mut hi = [f64::NEG_INFINITY; 6];
        for &id in &order[start..end] {
            for d in 0..6 {
                lo[d] = lo[d].min(points[id][d]);
                hi[d] = hi[d].max(points[id][d]);
            }
        }
        let (dim, spread) = (0..6)
            .map(|d| (d, hi[d] - lo[d]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if spread == 0.0 {
            // all points coincide in the embedding
            nodes.push(Node::Leaf { start, end });
            return nodes.len() - 1;
        }
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = points[order[mid]][dim];
        let left = Self::build_node(points, order, start, mid, nodes);
        let right = Self::build_node(points, order, mid, end, nodes);
        nodes.push(Node::Split {
            dim,
            value,
            left,
            right,
        });
        nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normal_weight(&self) -> f64 {
        self.normal_weight
    }

    /// Nearest member to a bare position (normal part of the query is zero).
    pub fn nearest_position(&self, p: &Point3<f64>) -> (usize, f64) {
        self.nearest(&[p.x, p.y, p.z, 0.0, 0.0, 0.0])
    }

    /// Nearest member to a position with a normal, embedded with the index's
    /// own weighting factor.
    pub fn nearest_with_normal(&self, p: &Point3<f64>, n: &Vector3<f64>) -> (usize, f64) {
        let w = self.normal_weight;
        self.nearest(&[p.x, p.y, p.z, n.x * w, n.y * w, n.z * w])
    }

    /// Returns (index into the original point slice, squared distance).
    pub fn nearest(&self, query: &[f64; 6]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        best
    }

    fn search(&self, node: usize, query: &[f64; 6], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let p = &self.points[id];
                    let mut d2 = 0.0;
                    for d in 0..6 {
                        let diff = p[d] - query[d];
                        d2 += diff * diff;
                    }
                    if d2 < best.1 || (d2 == best.1 && id < best.0) {
                        *best = (id, d2);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, best);
                // equal distances on the far side may win the index tie-break,
                // so prune only on strict excess
                if diff * diff <= best.1 {
                    self.search(far, query, best);
                }
            }
        }
    }
}
