#![allow(dead_code)]

//! Shared synthetic fixtures for the integration and acceptance suites.

use licp::correspond::{CorrespondenceSet, Pairing, SetDefinition};
use licp::deform::StiffnessSchedule;
use licp::mesh::{primitives, TriangleMesh};
use licp::pipeline::{
    DeformationModel, MatchStrategy, PipelineConfig, StageSpec, DEFAULT_PVAC_GAMMA,
};
use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SphereFixture {
    pub template: TriangleMesh,
    pub data: TriangleMesh,
    pub sets: Vec<CorrespondenceSet>,
    pub config: PipelineConfig,
}

pub fn rotation_about(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let a = axis.normalize();
    let (s, c) = angle.sin_cos();
    let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() + s * k + (1.0 - c) * k * k
}

/// Known smooth deformation of the unit icosphere: anisotropic scaling plus
/// a quadratic bend, 0.5% coordinate noise, and a rigid motion on the data
/// side. The twelve icosahedron corners act as fixed landmark pairs; the
/// remaining vertices form a dense region set matched by nearest neighbours.
pub fn sphere_fixture(subdivisions: usize) -> SphereFixture {
    sphere_fixture_seeded(subdivisions, 0x5EED_CAFE, 0.2)
}

pub fn sphere_fixture_seeded(subdivisions: usize, seed: u64, bend: f64) -> SphereFixture {
    let template = primitives::icosphere(subdivisions);
    let deformed: Vec<Point3<f64>> = template
        .vertices()
        .iter()
        .map(|p| {
            let scaled = Point3::new(1.25 * p.x, 0.85 * p.y, 1.1 * p.z);
            // smooth bend along x
            Point3::new(scaled.x, scaled.y + bend * scaled.x * scaled.x, scaled.z)
        })
        .collect();
    let (mut lo, mut hi) = (deformed[0], deformed[0]);
    for p in &deformed {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let diag = (hi - lo).norm();
    let noise = 0.005 * diag;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rigid_r = rotation_about(Vector3::new(0.3, 1.0, 0.2), 20f64.to_radians());
    let rigid_t = Vector3::new(3.0, -2.0, 2.5);
    let data_points: Vec<Point3<f64>> = deformed
        .iter()
        .map(|p| {
            let jitter = Vector3::new(
                rng.random_range(-noise..noise),
                rng.random_range(-noise..noise),
                rng.random_range(-noise..noise),
            );
            Point3::from(rigid_r * (p.coords + jitter) + rigid_t)
        })
        .collect();
    let data = template.with_vertices(data_points).expect("same count");

    let n = template.n_vertices();
    let sets = vec![
        CorrespondenceSet {
            name: "marks".into(),
            template_members: (0..12).collect(),
            data_members: (0..12).collect(),
            weight: 1.5,
            pairing: Pairing::Fixed,
            per_pair_weights: None,
        },
        CorrespondenceSet {
            name: "region".into(),
            template_members: (12..n).collect(),
            data_members: (12..n).collect(),
            weight: 1.0,
            pairing: Pairing::Mnn,
            per_pair_weights: None,
        },
    ];
    let config = sphere_fixture_config(&template);
    SphereFixture {
        template,
        data,
        sets,
        config,
    }
}

/// Five stages with the head recipe's stiffness schedules and iteration caps,
/// mapped onto the fixture's two correspondence sets.
pub fn sphere_fixture_config(template: &TriangleMesh) -> PipelineConfig {
    // small explicit threshold so the schedule-driven stages run their
    // course instead of exiting during the stiff phase
    let t_s = 1e-9 * template.bbox_diagonal().powi(2);
    let stages = vec![
        StageSpec {
            correspondence_sets: Some(vec!["marks".into()]),
            matching: Some(MatchStrategy::Mnn),
            metric_normal_weight: Some(0.0),
            deformation: Some(DeformationModel::AffineOneshot),
            t_s: Some(t_s),
            i_max: Some(1),
            ..StageSpec::named("affine_init")
        },
        StageSpec {
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
            correspondence_sets: Some(vec!["marks".into(), "region".into()]),
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
            metric_normal_weight: Some(0.05),
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
        sets: vec![
            SetDefinition {
                name: "marks".into(),
                weight: 1.5,
                pairing: Pairing::Fixed,
                complement: false,
            },
            SetDefinition {
                name: "region".into(),
                weight: 1.0,
                pairing: Pairing::Mnn,
                complement: true,
            },
        ],
        stages,
        deterministic: true,
        pvac_gamma: DEFAULT_PVAC_GAMMA,
    }
}

/// Mean distance over the mutual-nearest-neighbour pairs of two meshes
/// (positional metric, all vertices).
pub fn mean_mutual_distance(a: &TriangleMesh, b: &TriangleMesh) -> f64 {
    let set = CorrespondenceSet {
        name: "all".into(),
        template_members: (0..a.n_vertices()).collect(),
        data_members: (0..b.n_vertices()).collect(),
        weight: 1.0,
        pairing: Pairing::Mnn,
        per_pair_weights: None,
    };
    let matches = licp::correspond::match_mnn(&set, a, b, 0.0).expect("mnn");
    assert!(!matches.is_empty());
    let total: f64 = matches
        .pairs
        .iter()
        .map(|p| (a.vertex(p.template_index) - p.target).norm())
        .sum();
    total / matches.len() as f64
}
