//! Per-vertex affine constraint (PVAC) deformation, the optimal-step N-ICP
//! baseline: one 4x3 affine transform per vertex, regularised by edge-based
//! stiffness rows penalising differences between neighbouring transforms.
//!
//! Each coordinate column solves for 4N unknowns (12N in total). Every edge
//! contributes one transform-difference constraint, weighted lambda on the
//! three linear components and lambda * gamma on the translation component.

use super::lb::{shape_energy, SolveReport, CG_MAX_ITER_FACTOR, CG_REL_TOL};
use crate::correspond::MatchList;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::sparse::{CsrMatrix, SpdSolver};
use nalgebra::Point3;

/// Solves the per-vertex affine system at fixed matches and stiffness and
/// returns the transformed template.
///
/// `gamma` skew-weights the translation component of the stiffness term
/// relative to the linear components.
pub fn solve_pvac_deformation(
    matches: &[MatchList],
    template: &TriangleMesh,
    gamma: f64,
    lambda: f64,
) -> Result<(TriangleMesh, SolveReport)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let total_pairs: usize = matches.iter().map(|m| m.len()).sum();
    if total_pairs == 0 {
        return Err(Error::NoCorrespondences { stage: None });
    }
    let n = template.n_vertices();
    let edges = template.edges();
    if edges.is_empty() {
        return Err(Error::InvalidConfig(
            "per-vertex affine stiffness needs mesh edges".into(),
        ));
    }

    // Normal equations over u in R^{4N}: the data row for a matched vertex t
    // is w * [x_t 1] placed in block t; each edge (u, v) adds lambda * g_k on
    // components k of T_u - T_v, g = (1, 1, 1, gamma).
    let l2 = lambda * lambda;
    let g2 = [l2, l2, l2, l2 * gamma * gamma];

    // per-vertex dense 4x4 data blocks
    let mut data_block = vec![[[0.0f64; 4]; 4]; n];
    for list in matches {
        for pair in &list.pairs {
            let x = template.vertex(pair.template_index);
            let h = [x.x, x.y, x.z, 1.0];
            let w2 = pair.weight * pair.weight;
            let block = &mut data_block[pair.template_index];
            for r in 0..4 {
                for c in 0..4 {
                    block[r][c] += w2 * h[r] * h[c];
                }
            }
        }
    }
    // neighbour lists and per-vertex degrees from the edge set
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &[u, v] in edges {
        neighbours[u].push(v);
        neighbours[v].push(u);
    }
    for nb in &mut neighbours {
        nb.sort_unstable();
    }

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(4 * n);
    for v in 0..n {
        let degree = neighbours[v].len() as f64;
        for k in 0..4 {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(4 + neighbours[v].len());
            // off-diagonal stiffness couplings to earlier neighbours
            for &u in neighbours[v].iter().take_while(|&&u| u < v) {
                row.push((4 * u + k, -g2[k]));
            }
            // own block: data block row + stiffness degree on the diagonal;
            // structurally dense so the sparsity pattern stays constant
            // across iterations regardless of which vertices are matched
            for c in 0..4 {
                let mut val = data_block[v][k][c];
                if c == k {
                    val += degree * g2[k];
                }
                row.push((4 * v + c, val));
            }
            for &u in neighbours[v].iter().skip_while(|&&u| u < v) {
                row.push((4 * u + k, -g2[k]));
            }
            rows.push(row);
        }
    }
    let system = CsrMatrix::from_sorted_rows(4 * n, rows);

    // rhs per column c: data rows contribute w^2 [x 1]^T target_c
    let mut rhs = vec![[0.0f64; 3]; 4 * n];
    for list in matches {
        for pair in &list.pairs {
            let x = template.vertex(pair.template_index);
            let h = [x.x, x.y, x.z, 1.0];
            let w2 = pair.weight * pair.weight;
            for r in 0..4 {
                for c in 0..3 {
                    rhs[4 * pair.template_index + r][c] += w2 * h[r] * pair.target[c];
                }
            }
        }
    }

    let solver = SpdSolver::new(&system, CG_REL_TOL, CG_MAX_ITER_FACTOR * (4 * n).max(100));
    let solve_column = |c: usize| -> Result<Vec<f64>> {
        let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        // warm start at the identity transform for every vertex
        let mut x0 = vec![0.0; 4 * n];
        for v in 0..n {
            x0[4 * v + c] = 1.0;
        }
        Ok(solver.solve(&b, &x0)?.0)
    };
    let (ux, (uy, uz)) = rayon::join(
        || solve_column(0),
        || rayon::join(|| solve_column(1), || solve_column(2)),
    );
    let (ux, uy, uz) = (ux?, uy?, uz?);

    // transformed position of vertex v: [x_v 1] * T_v per column
    let new_vertices: Vec<Point3<f64>> = (0..n)
        .map(|v| {
            let x = template.vertex(v);
            let h = [x.x, x.y, x.z, 1.0];
            let eval = |col: &[f64]| (0..4).map(|r| h[r] * col[4 * v + r]).sum::<f64>();
            Point3::new(eval(&ux), eval(&uy), eval(&uz))
        })
        .collect();
    let new_template = template.with_vertices(new_vertices)?;

    let residual_shape = shape_energy(matches, &new_template);
    // stiffness energy: sum over edges and components of g_k^2 (T_u - T_v)_k^2
    let mut residual_reg = 0.0;
    for &[u, v] in edges {
        for k in 0..4 {
            for col in [&ux, &uy, &uz] {
                let d = col[4 * u + k] - col[4 * v + k];
                residual_reg += g2[k] * d * d;
            }
        }
    }
    let delta_x = template
        .vertices()
        .iter()
        .zip(new_template.vertices())
        .map(|(a, b)| (b - a).norm_squared())
        .sum();
    Ok((
        new_template,
        SolveReport {
            residual_shape,
            residual_reg,
            delta_x,
            iterations_inner: 1,
            unknowns: 12 * n,
            reg_constraints: edges.len(),
        },
    ))
}
