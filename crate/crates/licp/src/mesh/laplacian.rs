//! Cotangent discretisation of the Laplace-Beltrami operator.

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use nalgebra::Point3;

/// Individual cotangent values are clamped to this magnitude so that
/// near-degenerate triangles in raw scans cannot produce catastrophic
/// weights. Clamping keeps the matrix symmetric with zero row sums.
pub const COTAN_CLAMP: f64 = 1e4;

/// Sparse cotangent Laplace-Beltrami matrix tied to the vertex state it was
/// computed from.
///
/// Convention: off-diagonal `L[u][v] = -(cot a + cot b) / 2` over the one or
/// two triangles sharing edge (u, v); the diagonal is minus the row sum of
/// the off-diagonals, making the matrix symmetric positive semi-definite
/// with constant vectors in its null space.
#[derive(Debug, Clone)]
pub struct LaplaceOperator {
    matrix: CsrMatrix,
    source_fingerprint: u64,
}

impl LaplaceOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn fingerprint(&self) -> u64 {
        self.source_fingerprint
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Applies the operator to per-vertex positions (one column per coordinate).
    pub fn apply_to_points(&self, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
        let n = self.n();
        assert_eq!(points.len(), n);
        let mut out = vec![Point3::origin(); n];
        for r in 0..n {
            let mut acc = nalgebra::Vector3::zeros();
            for (c, v) in self.matrix.row(r) {
                acc += v * points[c].coords;
            }
            out[r] = Point3::from(acc);
        }
        out
    }

    /// True if the operator was built from this mesh's current vertices.
    pub fn matches(&self, mesh: &TriangleMesh) -> bool {
        self.source_fingerprint == mesh.vertex_fingerprint()
    }
}

/// Precomputed assembly plan for one mesh topology: the CSR sparsity
/// pattern of the operator plus, per triangle corner, the four value slots
/// its cotangent scatters into. Built once and shared by every vertex state
/// of the mesh, so per-iteration operator refreshes are a pure float pass.
#[derive(Debug)]
pub(crate) struct CotanPattern {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// per triangle, per corner (opposite edge (u, v)):
    /// [slot of (u,v), slot of (v,u), diagonal slot of u, diagonal slot of v]
    tri_slots: Vec<[[usize; 4]; 3]>,
}

fn build_cotan_pattern(mesh: &TriangleMesh) -> CotanPattern {
    let n = mesh.n_vertices();
    let mut edges: Vec<[usize; 2]> = mesh
        .triangles()
        .iter()
        .flat_map(|t| {
            [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]]
                .into_iter()
                .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    // CSR pattern: neighbours plus the diagonal, sorted per row
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &[u, v] in &edges {
        rows[u].push(v);
        rows[v].push(u);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for (i, row) in rows.iter_mut().enumerate() {
        row.push(i);
        row.sort_unstable();
        col_idx.extend_from_slice(row);
        row_ptr.push(col_idx.len());
    }
    let slot = |r: usize, c: usize| -> usize {
        let range = row_ptr[r]..row_ptr[r + 1];
        range.start
            + col_idx[range.clone()]
                .binary_search(&c)
                .expect("pattern entry")
    };
    let tri_slots = mesh
        .triangles()
        .iter()
        .map(|&[a, b, c]| {
            let corner = |u: usize, v: usize| [slot(u, v), slot(v, u), slot(u, u), slot(v, v)];
            // corner order: apex c over (a, b); apex a over (b, c); apex b over (c, a)
            [corner(a, b), corner(b, c), corner(c, a)]
        })
        .collect();
    CotanPattern {
        row_ptr,
        col_idx,
        tri_slots,
    }
}

/// Builds the cotangent Laplace-Beltrami operator for a mesh.
///
/// Boundary edges (a single incident triangle) contribute a single cotangent.
/// A zero-area triangle is an error naming the triangle.
pub fn cotan_laplacian(mesh: &TriangleMesh) -> Result<LaplaceOperator> {
    let n = mesh.n_vertices();
    let pattern = mesh
        .topology()
        .cotan
        .get_or_init(|| build_cotan_pattern(mesh));
    let mut values = vec![0.0f64; pattern.col_idx.len()];
    for (t, (tri, slots)) in mesh.triangles().iter().zip(&pattern.tri_slots).enumerate() {
        let [a, b, c] = *tri;
        let (pa, pb, pc) = (mesh.vertex(a), mesh.vertex(b), mesh.vertex(c));
        let area2 = (pb - pa).cross(&(pc - pa)).norm();
        if area2 == 0.0 {
            return Err(Error::ZeroAreaTriangle(t));
        }
        // cotangent of the angle at the apex opposite each edge
        let mut scatter = |apex: Point3<f64>, pu: Point3<f64>, pv: Point3<f64>, s: &[usize; 4]| {
            let e1 = pu - apex;
            let e2 = pv - apex;
            let cross = e1.cross(&e2).norm();
            let cot = if cross > 0.0 {
                (e1.dot(&e2) / cross).clamp(-COTAN_CLAMP, COTAN_CLAMP)
            } else {
                COTAN_CLAMP
            };
            let half = 0.5 * cot;
            values[s[0]] -= half;
            values[s[1]] -= half;
            values[s[2]] += half;
            values[s[3]] += half;
        };
        scatter(pc, pa, pb, &slots[0]);
        scatter(pa, pb, pc, &slots[1]);
        scatter(pb, pc, pa, &slots[2]);
    }
    let matrix = CsrMatrix::from_raw_parts(
        n,
        n,
        pattern.row_ptr.clone(),
        pattern.col_idx.clone(),
        values,
    );
    Ok(LaplaceOperator {
        matrix,
        source_fingerprint: mesh.vertex_fingerprint(),
    })
}
