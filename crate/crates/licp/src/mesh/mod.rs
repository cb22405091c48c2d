//! Triangle meshes: construction, per-vertex normals, the cotangent
//! Laplace-Beltrami operator, spatial indexing, ray casting and file I/O.

mod io;
mod laplacian;
pub mod primitives;
mod ray;
mod spatial;

pub use io::{load_mesh, load_obj, load_ply, save_obj, save_ply, PlyFormat};
pub use laplacian::{cotan_laplacian, LaplaceOperator, COTAN_CLAMP};
pub use ray::{ray_mesh_intersect, RayHit};
pub use spatial::{build_spatial_index, SpatialIndex};

use crate::error::{Error, Result};
use nalgebra::{Point3, Vector3};
use std::sync::OnceLock;

/// Per-vertex normals plus the list of isolated vertices (no incident
/// triangle) whose normal is the zero vector.
#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<Vector3<f64>>,
    pub isolated: Vec<usize>,
}

/// A triangle mesh with counter-clockwise winding.
///
/// Immutable after construction: vertex updates go through
/// [`TriangleMesh::with_vertices`], which shares the triangle list and
/// invalidates the cached normals and ray-casting structures.
#[derive(Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    topology: std::sync::Arc<Topology>,
    normals: OnceLock<VertexNormals>,
    bvh: OnceLock<ray::Bvh>,
    // memoized member-subset search indexes, keyed by the member list and
    // metric weight; iterative matching queries the static side repeatedly
    member_indexes: std::sync::Mutex<Vec<MemberIndexEntry>>,
}

#[derive(Debug)]
struct MemberIndexEntry {
    members_fingerprint: u64,
    members_len: usize,
    normal_weight_bits: u64,
    index: std::sync::Arc<SpatialIndex>,
}

/// Connectivity shared between all vertex states of one mesh; derived
/// structures (edge list, Laplacian assembly pattern) are computed once and
/// reused across deformation iterations.
#[derive(Debug)]
pub(crate) struct Topology {
    triangles: Vec<[usize; 3]>,
    edges: OnceLock<Vec<[usize; 2]>>,
    pub(crate) cotan: OnceLock<laplacian::CotanPattern>,
}

impl Clone for TriangleMesh {
    fn clone(&self) -> Self {
        // per-geometry caches are not carried over; they are rebuilt on demand
        TriangleMesh {
            vertices: self.vertices.clone(),
            topology: self.topology.clone(),
            normals: OnceLock::new(),
            bvh: OnceLock::new(),
            member_indexes: std::sync::Mutex::new(Vec::new()),
        }
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        n_vertices: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateIndices(t));
            }
        }
        Ok(TriangleMesh {
            vertices,
            topology: std::sync::Arc::new(Topology {
                triangles,
                edges: OnceLock::new(),
                cotan: OnceLock::new(),
            }),
            normals: OnceLock::new(),
            bvh: OnceLock::new(),
            member_indexes: std::sync::Mutex::new(Vec::new()),
        })
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::VertexCountMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(TriangleMesh {
            vertices,
            topology: self.topology.clone(),
            normals: OnceLock::new(),
            bvh: OnceLock::new(),
            member_indexes: std::sync::Mutex::new(Vec::new()),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.topology.triangles.len()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.topology.triangles
    }

    pub fn vertex(&self, i: usize) -> Point3<f64> {
        self.vertices[i]
    }

    /// Area-weighted per-vertex normals, computed once and cached.
    pub fn vertex_normals(&self) -> &VertexNormals {
        self.normals.get_or_init(|| compute_vertex_normals(self))
    }

    pub(crate) fn bvh(&self) -> &ray::Bvh {
        self.bvh.get_or_init(|| ray::Bvh::build(self))
    }

    /// Unique undirected edges (u < v), computed once per topology.
    pub fn edges(&self) -> &[[usize; 2]] {
        self.topology.edges.get_or_init(|| {
            let mut edges: Vec<[usize; 2]> = self
                .topology
                .triangles
                .iter()
                .flat_map(|t| {
                    [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]]
                        .into_iter()
                        .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
                })
                .collect();
            edges.sort_unstable();
            edges.dedup();
            edges
        })
    }

    pub(crate) fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Search index over a vertex subset under the (optionally
    /// normal-augmented) metric, memoized per mesh instance.
    pub(crate) fn member_index(
        &self,
        members: &[usize],
        normal_weight: f64,
    ) -> Result<std::sync::Arc<SpatialIndex>> {
        let mut h: u64 = 0xcbf29ce484222325;
        for &m in members {
            for b in (m as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        let weight_bits = normal_weight.to_bits();
        {
            let cache = self.member_indexes.lock().expect("index cache lock");
            if let Some(entry) = cache.iter().find(|e| {
                e.members_fingerprint == h
                    && e.members_len == members.len()
                    && e.normal_weight_bits == weight_bits
            }) {
                return Ok(entry.index.clone());
            }
        }
        let points: Vec<Point3<f64>> = members.iter().map(|&i| self.vertices[i]).collect();
        let normals: Vec<Vector3<f64>>;
        let normals_ref = if normal_weight > 0.0 {
            let all = &self.vertex_normals().normals;
            normals = members.iter().map(|&i| all[i]).collect();
            Some(normals.as_slice())
        } else {
            None
        };
        let index = std::sync::Arc::new(build_spatial_index(&points, normals_ref, normal_weight)?);
        let mut cache = self.member_indexes.lock().expect("index cache lock");
        cache.push(MemberIndexEntry {
            members_fingerprint: h,
            members_len: members.len(),
            normal_weight_bits: weight_bits,
            index: index.clone(),
        });
        Ok(index)
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// FNV-1a over the little-endian bytes of the vertex matrix; used to tie
    /// a [`LaplaceOperator`] to the vertex state it was built from.
    pub fn vertex_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: [u8; 8]| {
            for b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for v in &self.vertices {
            eat(v.x.to_le_bytes());
            eat(v.y.to_le_bytes());
            eat(v.z.to_le_bytes());
        }
        h
    }
}

/// Area-weighted average of incident triangle normals, normalised.
///
/// Isolated vertices get a zero normal and are listed in the report.
pub fn compute_vertex_normals(mesh: &TriangleMesh) -> VertexNormals {
    let mut acc = vec![Vector3::zeros(); mesh.n_vertices()];
    for tri in mesh.triangles() {
        let [a, b, c] = *tri;
        let (pa, pb, pc) = (mesh.vertex(a), mesh.vertex(b), mesh.vertex(c));
        // cross product has magnitude 2x triangle area, so summing the raw
        // cross products is the area weighting
        let cross = (pb - pa).cross(&(pc - pa));
        acc[a] += cross;
        acc[b] += cross;
        acc[c] += cross;
    }
    let mut isolated = Vec::new();
    let mut touched = vec![false; mesh.n_vertices()];
    for tri in mesh.triangles() {
        for &i in tri {
            touched[i] = true;
        }
    }
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if !touched[i] {
                isolated.push(i);
                return Vector3::zeros();
            }
            let n = v.norm();
            if n > 0.0 {
                v / n
            } else {
                // degenerate one-ring (cancelling folds); report alongside
                // truly isolated vertices
                isolated.push(i);
                Vector3::zeros()
            }
        })
        .collect();
    VertexNormals { normals, isolated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn rejects_out_of_range_index() {
        let verts = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        let err = TriangleMesh::new(verts, vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 2, .. }));
    }

    #[test]
    fn rejects_repeated_index() {
        let verts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let err = TriangleMesh::new(verts, vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateIndices(0)));
    }

    #[test]
    fn cube_corner_normals_are_diagonal() {
        let cube = primitives::unit_cube();
        let normals = cube.vertex_normals();
        assert!(normals.isolated.is_empty());
        let inv_sqrt3 = 1.0 / 3f64.sqrt();
        // corner vertices are 0..8; face centres follow
        for (i, v) in cube.vertices().iter().enumerate().take(8) {
            let expected = Vector3::new(
                (v.x - 0.5).signum() * inv_sqrt3,
                (v.y - 0.5).signum() * inv_sqrt3,
                (v.z - 0.5).signum() * inv_sqrt3,
            );
            let n = normals.normals[i];
            assert!(
                (n - expected).norm() < 1e-12,
                "vertex {i}: got {n:?}, expected {expected:?}"
            );
        }
    }

    #[test]
    fn flat_square_normals_point_up() {
        let grid = primitives::flat_grid(4, 1.0);
        let normals = grid.vertex_normals();
        for n in &normals.normals {
            assert!((n - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn icosphere_normals_match_analytic_sphere() {
        let sphere = primitives::icosphere(2);
        let normals = sphere.vertex_normals();
        for (v, n) in sphere.vertices().iter().zip(&normals.normals) {
            let radial = v.coords.normalize();
            let angle = n.dot(&radial).clamp(-1.0, 1.0).acos();
            assert!(angle < 0.05, "angular error {angle} rad");
        }
    }

    #[test]
    fn normals_are_unit_or_reported() {
        let sphere = primitives::icosphere(1);
        let normals = sphere.vertex_normals();
        for n in &normals.normals {
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_vertex_is_flagged_with_zero_normal() {
        let verts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(5.0, 5.0, 5.0), // not referenced by any triangle
        ];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2]]).unwrap();
        let normals = mesh.vertex_normals();
        assert_eq!(normals.isolated, vec![3]);
        assert_eq!(normals.normals[3], Vector3::zeros());
    }

    #[test]
    fn with_vertices_checks_length() {
        let mesh = primitives::tetrahedron();
        let err = mesh.with_vertices(vec![Point3::origin()]).unwrap_err();
        assert!(matches!(err, Error::VertexCountMismatch { .. }));
    }

    #[test]
    fn fingerprint_tracks_vertex_changes() {
        let mesh = primitives::tetrahedron();
        let fp = mesh.vertex_fingerprint();
        let mut moved = mesh.vertices().to_vec();
        moved[0].x += 1e-12;
        let mesh2 = mesh.with_vertices(moved).unwrap();
        assert_ne!(fp, mesh2.vertex_fingerprint());
        assert_eq!(fp, mesh.clone().vertex_fingerprint());
    }

    #[test]
    fn edges_are_unique_and_undirected() {
        let tet = primitives::tetrahedron();
        let edges = tet.edges();
        assert_eq!(edges.len(), 6);
        for e in edges {
            assert!(e[0] < e[1]);
        }
    }
}
