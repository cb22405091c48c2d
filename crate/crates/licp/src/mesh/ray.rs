//! Ray-mesh intersection through an axis-aligned bounding-box tree.

use super::TriangleMesh;
use nalgebra::{Point3, Vector3};

const BARY_EPS: f64 = 1e-12;
const MIN_T: f64 = 1e-12;
const LEAF_TRIS: usize = 8;

/// Nearest positive-distance intersection of a ray with a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Point3<f64>,
    pub triangle: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    /// Slab test; returns the entry distance if the ray touches the box
    /// before `max_t`.
    fn hit(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = max_t;
        for k in 0..3 {
            if !inv_dir[k].is_finite() {
                // ray parallel to this slab; an origin touching the boundary
                // would otherwise produce 0 * inf = NaN below
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug)]
enum BvhNode {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug)]
pub(crate) struct Bvh {
    nodes: Vec<BvhNode>,
    bounds: Vec<Aabb>,
    tri_order: Vec<usize>,
    root: usize,
}

impl Bvh {
    pub(crate) fn build(mesh: &TriangleMesh) -> Self {
        let centroids: Vec<Point3<f64>> = mesh
            .triangles()
            .iter()
            .map(|t| {
                Point3::from(
                    (mesh.vertex(t[0]).coords
                        + mesh.vertex(t[1]).coords
                        + mesh.vertex(t[2]).coords)
                        / 3.0,
                )
            })
            .collect();
        let mut tri_order: Vec<usize> = (0..mesh.n_triangles()).collect();
        let mut nodes = Vec::new();
        let mut bounds = Vec::new();
        let root = if tri_order.is_empty() {
            nodes.push(BvhNode::Leaf { start: 0, end: 0 });
            bounds.push(Aabb::empty());
            0
        } else {
            Self::build_node(
                mesh,
                &centroids,
                &mut tri_order,
                0,
                mesh.n_triangles(),
                &mut nodes,
                &mut bounds,
            )
        };
        Bvh {
            nodes,
            bounds,
            tri_order,
            root,
        }
    }

    fn build_node(
        mesh: &TriangleMesh,
        centroids: &[Point3<f64>],
        tri_order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<BvhNode>,
        bounds: &mut Vec<Aabb>,
    ) -> usize {
        let mut bb = Aabb::empty();
        for &t in &tri_order[start..end] {
            for &v in &mesh.triangles()[t] {
                bb.grow(&mesh.vertex(v));
            }
        }
        if end - start <= LEAF_TRIS {
            nodes.push(BvhNode::Leaf { start, end });
            bounds.push(bb);
            return nodes.len() - 1;
        }
        // median split on the centroid axis with the largest extent
        let mut cb = Aabb::empty();
        for &t in &tri_order[start..end] {
            cb.grow(&centroids[t]);
        }
        let extent = cb.hi - cb.lo;
        let axis = (0..3)
            .max_by(|&a, &b| extent[a].total_cmp(&extent[b]))
            .unwrap();
        let mid = (start + end) / 2;
        tri_order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = Self::build_node(mesh, centroids, tri_order, start, mid, nodes, bounds);
        let right = Self::build_node(mesh, centroids, tri_order, mid, end, nodes, bounds);
        nodes.push(BvhNode::Inner { left, right });
        let mut bb = bounds[left];
        bb.grow(&bounds[right].lo);
        bb.grow(&bounds[right].hi);
        bounds.push(bb);
        nodes.len() - 1
    }

    fn intersect(
        &self,
        mesh: &TriangleMesh,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<RayHit> {
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![self.root];
        while let Some(node) = stack.pop() {
            let max_t = best.map_or(f64::INFINITY, |h| h.distance);
            if self.bounds[node].hit(origin, &inv_dir, max_t).is_none() {
                continue;
            }
            match self.nodes[node] {
                BvhNode::Leaf { start, end } => {
                    for &t in &self.tri_order[start..end] {
                        if let Some(dist) = ray_triangle(mesh, t, origin, dir) {
                            let better = match best {
                                None => true,
                                // equal distances through a shared edge:
                                // deterministic tie-break on triangle index
                                Some(h) => {
                                    dist < h.distance || (dist == h.distance && t < h.triangle)
                                }
                            };
                            if better {
                                best = Some(RayHit {
                                    point: origin + dir * dist,
                                    triangle: t,
                                    distance: dist,
                                });
                            }
                        }
                    }
                }
                BvhNode::Inner { left, right } => {
                    // visit the nearer child first
                    let dl = self.bounds[left].hit(origin, &inv_dir, max_t);
                    let dr = self.bounds[right].hit(origin, &inv_dir, max_t);
                    match (dl, dr) {
                        (Some(a), Some(b)) => {
                            if a <= b {
                                stack.push(right);
                                stack.push(left);
                            } else {
                                stack.push(left);
                                stack.push(right);
                            }
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }
}

/// Moller-Trumbore with inclusive boundaries so edge and vertex hits count.
fn ray_triangle(
    mesh: &TriangleMesh,
    tri: usize,
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
) -> Option<f64> {
    let [a, b, c] = mesh.triangles()[tri];
    let pa = mesh.vertex(a);
    let e1 = mesh.vertex(b) - pa;
    let e2 = mesh.vertex(c) - pa;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - pa;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-BARY_EPS..=1.0 + BARY_EPS).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -BARY_EPS || u + v > 1.0 + BARY_EPS {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > MIN_T).then_some(t)
}

/// Nearest positive-distance intersection, or `None` when the ray misses.
///
/// The direction is normalised internally so the returned distance is
/// Euclidean. A zero direction yields `None`.
pub fn ray_mesh_intersect(
    mesh: &TriangleMesh,
    origin: Point3<f64>,
    direction: Vector3<f64>,
) -> Option<RayHit> {
    let norm = direction.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let dir = direction / norm;
    mesh.bvh().intersect(mesh, &origin, &dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use rand::{Rng, SeedableRng};

    /// Independent all-triangles oracle with its own intersection routine
    /// (barycentric via plane projection rather than Moller-Trumbore).
    fn brute_force_intersect(
        mesh: &TriangleMesh,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<(usize, f64)> {
        let dir = dir.normalize();
        let mut best: Option<(usize, f64)> = None;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let (pa, pb, pc) = (
                mesh.vertex(tri[0]),
                mesh.vertex(tri[1]),
                mesh.vertex(tri[2]),
            );
            let n = (pb - pa).cross(&(pc - pa));
            let denom = n.dot(&dir);
            if denom.abs() < 1e-300 {
                continue;
            }
            let dist = n.dot(&(pa - origin)) / denom;
            if dist <= 1e-12 {
                continue;
            }
            let p = origin + dir * dist;
            // barycentric coordinates in the triangle plane
            let v0 = pb - pa;
            let v1 = pc - pa;
            let v2 = p - pa;
            let d00 = v0.dot(&v0);
            let d01 = v0.dot(&v1);
            let d11 = v1.dot(&v1);
            let d20 = v2.dot(&v0);
            let d21 = v2.dot(&v1);
            let det = d00 * d11 - d01 * d01;
            let bv = (d11 * d20 - d01 * d21) / det;
            let bw = (d00 * d21 - d01 * d20) / det;
            let eps = 1e-9;
            if bv >= -eps && bw >= -eps && bv + bw <= 1.0 + eps {
                let better = match best {
                    None => true,
                    Some((bt, bd)) => dist < bd - 1e-12 || ((dist - bd).abs() <= 1e-12 && t < bt),
                };
                if better {
                    best = Some((t, dist));
                }
            }
        }
        best
    }

    #[test]
    fn axis_ray_hits_unit_sphere_pole() {
        let sphere = primitives::icosphere(3);
        let hit = ray_mesh_intersect(
            &sphere,
            Point3::new(0.0, 0.0, 5.0),
            Vector3::new(0.0, 0.0, -1.0),
        )
        .expect("must hit");
        // chordal error of the subdivided sphere bounds the deviation
        let chordal = 0.01;
        assert!(
            (hit.distance - 4.0).abs() < chordal,
            "distance {}",
            hit.distance
        );
        assert!((hit.point - Point3::new(0.0, 0.0, 1.0)).norm() < 0.05);
    }

    #[test]
    fn ray_pointing_away_misses() {
        let sphere = primitives::icosphere(1);
        assert!(ray_mesh_intersect(
            &sphere,
            Point3::new(0.0, 0.0, 5.0),
            Vector3::new(0.0, 0.0, 1.0),
        )
        .is_none());
    }

    #[test]
    fn zero_direction_is_a_miss() {
        let sphere = primitives::icosphere(0);
        assert!(ray_mesh_intersect(&sphere, Point3::origin(), Vector3::zeros()).is_none());
    }

    #[test]
    fn shared_edge_hit_reports_lowest_triangle() {
        // unit square split along the diagonal; the ray passes exactly
        // through the shared edge
        let verts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let hit = ray_mesh_intersect(
            &mesh,
            Point3::new(0.5, 0.5, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
        )
        .expect("must hit the shared edge");
        assert_eq!(hit.triangle, 0);
        assert!((hit.distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_rays_agree_with_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let sphere = primitives::icosphere(2);
        let mut hits = 0;
        for i in 0..200 {
            let origin = Point3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            // aim half the rays at a point inside the sphere so a good share hit
            let dir = if i % 2 == 0 {
                let aim = Point3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                );
                aim - origin
            } else {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            };
            if dir.norm() < 1e-6 {
                continue;
            }
            let fast = ray_mesh_intersect(&sphere, origin, dir);
            let slow = brute_force_intersect(&sphere, &origin, &dir);
            match (fast, slow) {
                (None, None) => {}
                (Some(f), Some((t, d))) => {
                    hits += 1;
                    assert_eq!(f.triangle, t, "triangle mismatch at origin {origin:?}");
                    assert!((f.distance - d).abs() < 1e-9);
                }
                (f, s) => panic!("hit disagreement: fast {f:?} vs brute {s:?}"),
            }
        }
        assert!(hits > 20, "want a meaningful number of hits, got {hits}");
    }
}
