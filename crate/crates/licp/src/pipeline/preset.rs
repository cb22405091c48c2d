//! The shipped five-stage human-head registration recipe.

use super::config::{
    DeformationModel, MatchStrategy, PipelineConfig, StageSpec, DEFAULT_PVAC_GAMMA,
};
use crate::correspond::{Pairing, SetDefinition};
use crate::deform::StiffnessSchedule;

/// Set names used by the head preset.
pub mod set_names {
    pub const FACE: &str = "face";
    pub const SYMMETRY: &str = "symmetry_contour";
    pub const LEFT_EAR: &str = "left_ear";
    pub const RIGHT_EAR: &str = "right_ear";
    pub const REGION: &str = "region";
}

/// Default weighting factor between positions and normals for the 6-DOF
/// metric of the final stage, in model units per unit normal.
pub const STAGE5_NORMAL_WEIGHT: f64 = 5.0;

/// Five-stage human head registration:
///
/// 1. affine initialisation from the three landmark sets (one shot);
/// 2. iterative affine adaptation adding the symmetry contour (max 15);
/// 3. LB-regularised adaptation, stiffness 100 -> 0.1 over at most 58;
/// 4. dense morphing adding the region set, stiffness 100 -> 1 over at
///    most 31;
/// 5. normal-shooting refinement with the inner operator refresh,
///    stiffness 0.9 -> 0.1 over at most 27.
///
/// Set weights: face 1.5, symmetry contour 1.4, ears 1.0, region 1.0.
/// Landmark sets are predefined bijections, so matching them by MNN (as
/// stage 1 nominally does) reduces to the fixed pairing; they are declared
/// fixed here and an equivalence test pins that reading down.
pub fn head_preset() -> PipelineConfig {
    use set_names::*;
    let sets = vec![
        SetDefinition {
            name: FACE.into(),
            weight: 1.5,
            pairing: Pairing::Fixed,
            complement: false,
        },
        SetDefinition {
            name: SYMMETRY.into(),
            weight: 1.4,
            pairing: Pairing::Mnn,
            complement: false,
        },
        SetDefinition {
            name: LEFT_EAR.into(),
            weight: 1.0,
            pairing: Pairing::Fixed,
            complement: false,
        },
        SetDefinition {
            name: RIGHT_EAR.into(),
            weight: 1.0,
            pairing: Pairing::Fixed,
            complement: false,
        },
        SetDefinition {
            name: REGION.into(),
            weight: 1.0,
            pairing: Pairing::Mnn,
            complement: true,
        },
    ];
    let stages = vec![
        StageSpec {
            correspondence_sets: Some(vec![FACE.into(), LEFT_EAR.into(), RIGHT_EAR.into()]),
            matching: Some(MatchStrategy::Mnn),
            metric_normal_weight: Some(0.0),
            deformation: Some(DeformationModel::AffineOneshot),
            i_max: Some(1),
            ..StageSpec::named("affine_init")
        },
        StageSpec {
            correspondence_sets: Some(vec![
                FACE.into(),
                SYMMETRY.into(),
                LEFT_EAR.into(),
                RIGHT_EAR.into(),
            ]),
            deformation: Some(DeformationModel::AffineIterative),
            i_max: Some(15),
            ..StageSpec::named("affine_adapt")
        },
        StageSpec {
            deformation: Some(DeformationModel::LbFree),
            schedule: Some(StiffnessSchedule {
                start: 100.0,
                end: 0.1,
                steps: 58,
                interpolation: Default::default(),
            }),
            i_max: Some(58),
            ..StageSpec::named("laplacian_adapt")
        },
        StageSpec {
            correspondence_sets: Some(vec![
                FACE.into(),
                SYMMETRY.into(),
                LEFT_EAR.into(),
                RIGHT_EAR.into(),
                REGION.into(),
            ]),
            schedule: Some(StiffnessSchedule {
                start: 100.0,
                end: 1.0,
                steps: 31,
                interpolation: Default::default(),
            }),
            i_max: Some(31),
            ..StageSpec::named("dense_morph")
        },
        StageSpec {
            matching: Some(MatchStrategy::NormalShoot),
            metric_normal_weight: Some(STAGE5_NORMAL_WEIGHT),
            deformation: Some(DeformationModel::LbFreeRefine),
            schedule: Some(StiffnessSchedule {
                start: 0.9,
                end: 0.1,
                steps: 27,
                interpolation: Default::default(),
            }),
            i_max: Some(27),
            ..StageSpec::named("normal_shoot_refine")
        },
    ];
    PipelineConfig {
        sets,
        stages,
        deterministic: false,
        pvac_gamma: DEFAULT_PVAC_GAMMA,
    }
}
