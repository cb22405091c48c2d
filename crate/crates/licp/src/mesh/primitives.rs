//! Procedural test shapes: tetrahedron, cube, planar grid and icospheres.

use super::TriangleMesh;
use nalgebra::Point3;
use std::collections::HashMap;

/// Regular tetrahedron with unit edge length, centred at the origin.
pub fn tetrahedron() -> TriangleMesh {
    let s = 1.0 / 2f64.sqrt();
    let verts = vec![
        Point3::new(1.0, 0.0, -s),
        Point3::new(-1.0, 0.0, -s),
        Point3::new(0.0, 1.0, s),
        Point3::new(0.0, -1.0, s),
    ];
    // scale to unit edge (current edge length is 2)
    let verts = verts.into_iter().map(|p| p * 0.5).collect();
    let tris = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    TriangleMesh::new(verts, tris).expect("tetrahedron is valid")
}

/// Axis-aligned unit cube [0,1]^3, each face fanned around its centre so
/// every corner sees a symmetric triangle arrangement. Corner vertices are
/// indices 0..8, face centres 8..14.
pub fn unit_cube() -> TriangleMesh {
    let mut verts = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(1.0, 1.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, 0.0, 1.0),
        Point3::new(1.0, 0.0, 1.0),
        Point3::new(1.0, 1.0, 1.0),
        Point3::new(0.0, 1.0, 1.0),
    ];
    // corner loops, counter-clockwise seen from outside
    let faces: [[usize; 4]; 6] = [
        [0, 3, 2, 1], // z = 0
        [4, 5, 6, 7], // z = 1
        [0, 1, 5, 4], // y = 0
        [2, 3, 7, 6], // y = 1
        [0, 4, 7, 3], // x = 0
        [1, 2, 6, 5], // x = 1
    ];
    let mut tris = Vec::with_capacity(24);
    for loop4 in faces {
        let centre = Point3::from(
            loop4
                .iter()
                .fold(nalgebra::Vector3::zeros(), |acc, &i| acc + verts[i].coords)
                / 4.0,
        );
        let c = verts.len();
        verts.push(centre);
        for k in 0..4 {
            tris.push([loop4[k], loop4[(k + 1) % 4], c]);
        }
    }
    TriangleMesh::new(verts, tris).expect("cube is valid")
}

/// Flat triangulated square in the z = 0 plane with `n x n` cells of size
/// `cell`, counter-clockwise seen from +z.
pub fn flat_grid(n: usize, cell: f64) -> TriangleMesh {
    let mut verts = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            verts.push(Point3::new(i as f64 * cell, j as f64 * cell, 0.0));
        }
    }
    let at = |i: usize, j: usize| j * (n + 1) + i;
    let mut tris = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            tris.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            tris.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    TriangleMesh::new(verts, tris).expect("grid is valid")
}

/// Unit icosphere by midpoint subdivision of an icosahedron.
///
/// The twelve icosahedron corners stay at indices 0..12 at every
/// subdivision level. Vertex counts: 12, 42, 162, 642, 2562, 10242, ...
pub fn icosphere(subdivisions: usize) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3<f64>> = vec![
        Point3::new(-1.0, phi, 0.0),
        Point3::new(1.0, phi, 0.0),
        Point3::new(-1.0, -phi, 0.0),
        Point3::new(1.0, -phi, 0.0),
        Point3::new(0.0, -1.0, phi),
        Point3::new(0.0, 1.0, phi),
        Point3::new(0.0, -1.0, -phi),
        Point3::new(0.0, 1.0, -phi),
        Point3::new(phi, 0.0, -1.0),
        Point3::new(phi, 0.0, 1.0),
        Point3::new(-phi, 0.0, -1.0),
        Point3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|p| Point3::from(p.coords.normalize()))
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point3<f64>>| {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoints.entry(key).or_insert_with(|| {
                let m = (verts[a].coords + verts[b].coords) / 2.0;
                verts.push(Point3::from(m.normalize()));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }
    TriangleMesh::new(verts, tris).expect("icosphere is valid")
}
