//! Template deformation models: the global affine solve with its
//! rigid/non-rigid split, Laplace-Beltrami-regularised free-vertex
//! deformation, and the per-vertex affine constraint baseline.

mod lb;
mod pvac;
mod schedule;

pub use lb::{
    refine_with_operator_refresh, refine_with_operator_refresh_traced, solve_lb_deformation,
    SolveReport, CG_MAX_ITER_FACTOR, CG_REL_TOL,
};
pub use pvac::solve_pvac_deformation;
pub use schedule::{evaluate_schedule, StiffnessSchedule};

use crate::correspond::MatchList;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};

/// A fitted global affine transform in row-vector convention
/// (`x' = x * linear + translation`), decomposed into a proper rotation and
/// a symmetric positive semi-definite non-rigid factor with
/// `linear = nonrigid * rotation`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineUpdate {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub nonrigid: Matrix3<f64>,
    /// Set when the fitted linear part had negative determinant and the
    /// smallest-singular-value axis was flipped to restore a proper rotation.
    pub reflection_repaired: bool,
}

impl AffineUpdate {
    pub fn identity() -> Self {
        AffineUpdate {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
            rotation: Matrix3::identity(),
            nonrigid: Matrix3::identity(),
            reflection_repaired: false,
        }
    }

    /// Decomposes `m` via its SVD: with `m = U S V^T`, the left polar
    /// factorisation gives `nonrigid = U S U^T` and `rotation = U V^T`.
    ///
    /// A reflecting `m` (negative determinant) is repaired by negating the
    /// smallest singular-value axis of the rotation and clamping the folded
    /// negative eigenvalue of the non-rigid factor to zero; `linear` then
    /// stores the repaired product so the decomposition invariants hold.
    pub fn from_linear(m: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("3x3 SVD always yields U");
        let v_t = svd.v_t.expect("3x3 SVD always yields V^T");
        let mut rotation = u * v_t;
        let reflection = rotation.determinant() < 0.0;
        let mut singular = svd.singular_values;
        if reflection {
            log::warn!("global affine fit contains a reflection; repairing the rotation");
            // nalgebra sorts singular values in decreasing order, so the
            // smallest axis is the last one
            let mut flip = Matrix3::identity();
            flip[(2, 2)] = -1.0;
            rotation = u * flip * v_t;
            singular[2] = 0.0; // the folded sign would make this negative
        }
        let nonrigid = u * Matrix3::from_diagonal(&singular) * u.transpose();
        let nonrigid = (nonrigid + nonrigid.transpose()) * 0.5;
        let linear = if reflection { nonrigid * rotation } else { m };
        AffineUpdate {
            linear,
            translation,
            rotation,
            nonrigid,
            reflection_repaired: reflection,
        }
    }

    /// Applies the full transform to a point (row-vector convention).
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.linear.transpose() * p.coords + self.translation)
    }
}

/// Solves the weighted stacked system `[w (x | 1)] A = [w y]` for the global
/// 4x3 affine transform and decomposes it.
///
/// Requires at least four pairs spanning a non-coplanar configuration; a
/// rank-deficient stack is an error naming the deficiency.
pub fn solve_global_affine(matches: &[MatchList], template: &TriangleMesh) -> Result<AffineUpdate> {
    let total: usize = matches.iter().map(|m| m.len()).sum();
    if total < 4 {
        return Err(Error::RankDeficient(format!(
            "{total} correspondence pairs, need at least 4"
        )));
    }
    // normal equations of the homogeneous stack: G = sum w^2 h h^T (4x4),
    // rhs = sum w^2 h y^T (4x3), h = [x 1]
    let mut g = Matrix4::<f64>::zeros();
    let mut rhs = nalgebra::Matrix4x3::<f64>::zeros();
    for list in matches {
        for pair in &list.pairs {
            let x = template.vertex(pair.template_index);
            let h = Vector4::new(x.x, x.y, x.z, 1.0);
            let w2 = pair.weight * pair.weight;
            g += w2 * h * h.transpose();
            let y = pair.target.coords;
            rhs += w2 * h * y.transpose();
        }
    }
    // rank via the eigenvalues of the symmetric Gram matrix
    let eig = g.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 {
        return Err(Error::RankDeficient("all-zero correspondence stack".into()));
    }
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|&&e| e > 1e-10 * max_eig)
        .count();
    if rank < 4 {
        return Err(Error::RankDeficient(format!(
            "stacked [x|1] matrix has rank {rank} (pairs are coplanar or coincident)"
        )));
    }
    let a = g
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Gram matrix is not positive definite".into()))?
        .solve(&rhs);
    // rows 0..3 are the linear part, row 3 is the translation
    let m = a.fixed_view::<3, 3>(0, 0).into_owned();
    let t = Vector3::new(a[(3, 0)], a[(3, 1)], a[(3, 2)]);
    Ok(AffineUpdate::from_linear(m, t))
}

/// Applies the non-rigid part to the template (`X' = X B`) and the inverse
/// rigid part to the data (`Y' = (Y - 1 t) R^T`), per-pair residual norms
/// are preserved exactly.
pub fn apply_affine_split(
    update: &AffineUpdate,
    template: &TriangleMesh,
    data: &TriangleMesh,
) -> (TriangleMesh, TriangleMesh) {
    let b_t = update.nonrigid.transpose();
    let new_template: Vec<Point3<f64>> = template
        .vertices()
        .iter()
        .map(|p| Point3::from(b_t * p.coords))
        .collect();
    let r = update.rotation;
    let t = update.translation;
    let new_data: Vec<Point3<f64>> = data
        .vertices()
        .iter()
        .map(|p| Point3::from(r * (p.coords - t)))
        .collect();
    (
        template
            .with_vertices(new_template)
            .expect("same vertex count"),
        data.with_vertices(new_data).expect("same vertex count"),
    )
}
