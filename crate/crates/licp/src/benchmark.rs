//! Annotation-transfer evaluation.
//!
//! Manually annotated contour points are projected onto the target scan
//! (camera rays for 2D annotations, pass-through for 3D ones), transferred
//! to their nearest registered-template vertices, and scored with the
//! transfer density and homogeneity metrics.

use crate::error::{Error, Result};
use crate::mesh::{build_spatial_index, ray_mesh_intersect, save_ply, PlyFormat, TriangleMesh};
use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// 3x4 camera projection matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera(pub [[f64; 4]; 3]);

impl Camera {
    fn linear(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.0[r][c])
    }

    fn column4(&self) -> Vector3<f64> {
        Vector3::new(self.0[0][3], self.0[1][3], self.0[2][3])
    }

    /// Camera centre and forward ray direction through pixel (u, v).
    pub fn back_project(&self, u: f64, v: f64) -> Result<(Point3<f64>, Vector3<f64>)> {
        let m = self.linear();
        let det = m.determinant();
        if det.abs() < 1e-300 {
            return Err(Error::SingularCamera);
        }
        let m_inv = m.try_inverse().ok_or(Error::SingularCamera)?;
        let centre = Point3::from(-(m_inv * self.column4()));
        let dir = det.signum() * (m_inv * Vector3::new(u, v, 1.0));
        Ok((centre, dir))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoCameras {
    pub left: Camera,
    pub right: Camera,
}

/// One labelled contour: either 2D pixels seen by one camera, or 3D
/// surface points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSide>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pixels: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[f64; 3]>,
}

/// All annotations of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cameras: Option<StereoCameras>,
    pub items: Vec<AnnotationItem>,
}

impl AnnotationSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Validates item labels against a declared vocabulary.
    pub fn check_vocabulary(&self, vocabulary: &[String]) -> Result<()> {
        for item in &self.items {
            if !vocabulary.contains(&item.label) {
                return Err(Error::UnknownLabel {
                    label: item.label.clone(),
                    declared: vocabulary.to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// A labelled 3D point on (or off) the target surface, with the ray-hit
/// context when it came from a 2D annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedAnnotation {
    pub label: String,
    pub point: Point3<f64>,
    pub context: Option<RayContext>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayContext {
    pub triangle: usize,
    pub distance: f64,
}

/// Projects a subject's annotations onto the target mesh. 2D pixels become
/// camera rays intersected with the mesh; 3D points pass through. Missed
/// rays are dropped and counted.
pub fn project_annotations(
    ann: &AnnotationSet,
    target: &TriangleMesh,
) -> Result<(Vec<ProjectedAnnotation>, usize)> {
    let mut out = Vec::new();
    let mut misses = 0;
    for item in &ann.items {
        for p in &item.points {
            out.push(ProjectedAnnotation {
                label: item.label.clone(),
                point: Point3::new(p[0], p[1], p[2]),
                context: None,
            });
        }
        if item.pixels.is_empty() {
            continue;
        }
        let side = item.camera.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "annotation item '{}' has pixels but no camera side",
                item.label
            ))
        })?;
        let cameras = ann.cameras.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "annotation item '{}' needs cameras but the subject declares none",
                item.label
            ))
        })?;
        let camera = match side {
            CameraSide::Left => &cameras.left,
            CameraSide::Right => &cameras.right,
        };
        for px in &item.pixels {
            let (origin, dir) = camera.back_project(px[0], px[1])?;
            match ray_mesh_intersect(target, origin, dir) {
                Some(hit) => out.push(ProjectedAnnotation {
                    label: item.label.clone(),
                    point: hit.point,
                    context: Some(RayContext {
                        triangle: hit.triangle,
                        distance: hit.distance,
                    }),
                }),
                None => misses += 1,
            }
        }
    }
    Ok((out, misses))
}

/// One subject's transfer fragment: the deduplicated (vertex, label) hits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TallyFragment {
    pub hits: BTreeSet<(usize, String)>,
}

/// Maps each labelled point to its nearest template vertex; multiple points
/// of one label landing on the same vertex within a subject count once.
pub fn transfer_to_template(
    points: &[(String, Point3<f64>)],
    registered_template: &TriangleMesh,
) -> Result<TallyFragment> {
    if points.is_empty() {
        return Ok(TallyFragment::default());
    }
    let index = build_spatial_index(registered_template.vertices(), None, 0.0)?;
    let hits = points
        .iter()
        .map(|(label, p)| (index.nearest_position(p).0, label.clone()))
        .collect();
    Ok(TallyFragment { hits })
}

/// Accumulated per-vertex annotation transfer counts over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTally {
    pub n_vertices: usize,
    pub n_subjects: usize,
    /// Total transfers per template vertex.
    pub t_v: Vec<u32>,
    /// Per-label transfers per template vertex.
    pub per_label: BTreeMap<String, Vec<u32>>,
}

impl TransferTally {
    pub fn new(n_vertices: usize) -> Self {
        TransferTally {
            n_vertices,
            n_subjects: 0,
            t_v: vec![0; n_vertices],
            per_label: BTreeMap::new(),
        }
    }

    /// Folds one subject's fragment into the tally.
    pub fn add_fragment(&mut self, fragment: &TallyFragment) {
        self.n_subjects += 1;
        for (vertex, label) in &fragment.hits {
            self.t_v[*vertex] += 1;
            self.per_label
                .entry(label.clone())
                .or_insert_with(|| vec![0; self.n_vertices])[*vertex] += 1;
        }
    }

    /// Merges two tallies accumulated over disjoint subject sets;
    /// associative and commutative.
    pub fn merge(mut self, other: &TransferTally) -> TransferTally {
        assert_eq!(self.n_vertices, other.n_vertices);
        self.n_subjects += other.n_subjects;
        for (a, b) in self.t_v.iter_mut().zip(&other.t_v) {
            *a += b;
        }
        for (label, counts) in &other.per_label {
            let mine = self
                .per_label
                .entry(label.clone())
                .or_insert_with(|| vec![0; self.n_vertices]);
            for (a, b) in mine.iter_mut().zip(counts) {
                *a += b;
            }
        }
        self
    }

    /// Vertices with at least one transfer.
    pub fn touched(&self) -> usize {
        self.t_v.iter().filter(|&&t| t >= 1).count()
    }
}

/// Mean annotation transfer density: the sum of t_v over touched vertices
/// divided by `n_subjects * |touched|`; 1.0 means every touched vertex was
/// hit by every subject.
pub fn density(tally: &TransferTally) -> Result<f64> {
    if tally.n_subjects < 1 {
        return Err(Error::UndefinedMetric(
            "density needs at least one subject".into(),
        ));
    }
    let touched = tally.touched();
    if touched == 0 {
        return Err(Error::UndefinedMetric(
            "density is undefined: no vertex received a transfer".into(),
        ));
    }
    let total: u64 = tally.t_v.iter().map(|&t| t as u64).sum();
    Ok(total as f64 / (tally.n_subjects as f64 * touched as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHomogeneity {
    pub label: String,
    /// Fraction of transfers on this label's vertices that carry the label.
    pub homogeneity: f64,
    /// Prevalence weight; the weights sum to one.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub overall: f64,
    pub per_label: Vec<LabelHomogeneity>,
}

/// Mean annotation transfer homogeneity: prevalence-weighted label purity
/// of the vertices each label touches.
pub fn homogeneity(tally: &TransferTally) -> Result<HomogeneityReport> {
    let grand_total: u64 = tally
        .per_label
        .values()
        .flat_map(|counts| counts.iter().map(|&c| c as u64))
        .sum();
    if grand_total == 0 {
        return Err(Error::UndefinedMetric(
            "homogeneity is undefined: no labelled transfers".into(),
        ));
    }
    let mut per_label = Vec::new();
    let mut overall = 0.0;
    for (label, counts) in &tally.per_label {
        let own: u64 = counts.iter().map(|&c| c as u64).sum();
        if own == 0 {
            continue;
        }
        // all transfers (any label) on the vertices this label touches
        let mixed: u64 = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c >= 1)
            .map(|(v, _)| tally.t_v[v] as u64)
            .sum();
        let h = own as f64 / mixed as f64;
        let w = own as f64 / grand_total as f64;
        overall += w * h;
        per_label.push(LabelHomogeneity {
            label: label.clone(),
            homogeneity: h,
            weight: w,
        });
    }
    Ok(HomogeneityReport { overall, per_label })
}

/// Two-colour linear ramp for density maps: defaults to dark blue at zero
/// transfers and yellow at the maximum count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorRamp {
    pub low: [u8; 3],
    pub high: [u8; 3],
}

impl Default for ColorRamp {
    fn default() -> Self {
        ColorRamp {
            low: [0, 0, 139],
            high: [255, 255, 0],
        }
    }
}

impl ColorRamp {
    pub fn at(&self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        let mut c = [0u8; 3];
        for k in 0..3 {
            let v = self.low[k] as f64 + t * (self.high[k] as f64 - self.low[k] as f64);
            c[k] = v.round() as u8;
        }
        c
    }
}

/// Per-vertex colours for the transfer-count colormap.
pub fn density_colors(tally: &TransferTally, ramp: &ColorRamp) -> Vec<[u8; 3]> {
    let max = tally.t_v.iter().copied().max().unwrap_or(0);
    tally
        .t_v
        .iter()
        .map(|&t| {
            let x = if max == 0 { 0.0 } else { t as f64 / max as f64 };
            ramp.at(x)
        })
        .collect()
}

/// Writes the registered template as a PLY with per-vertex uchar RGB mapped
/// linearly from zero transfers to the maximum count.
pub fn export_density_colormap(
    tally: &TransferTally,
    template: &TriangleMesh,
    ramp: &ColorRamp,
    path: impl AsRef<Path>,
) -> Result<()> {
    if tally.n_vertices != template.n_vertices() {
        return Err(Error::TallySizeMismatch {
            tally: tally.n_vertices,
            template: template.n_vertices(),
        });
    }
    let colors = density_colors(tally, ramp);
    save_ply(template, path, PlyFormat::BinaryLittleEndian, Some(&colors))
}

/// Corpus-level metric report, serialised as the benchmark output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_subjects: usize,
    pub touched_vertices: usize,
    pub density: f64,
    pub homogeneity: f64,
    pub per_label: Vec<LabelHomogeneity>,
    pub ray_misses: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn fragment(hits: &[(usize, &str)]) -> TallyFragment {
        TallyFragment {
            hits: hits.iter().map(|&(v, l)| (v, l.to_string())).collect(),
        }
    }

    fn tally_from(n_vertices: usize, fragments: &[TallyFragment]) -> TransferTally {
        let mut tally = TransferTally::new(n_vertices);
        for f in fragments {
            tally.add_fragment(f);
        }
        tally
    }

    /// A camera looking down the -z axis from (0, 0, 5): P = K [R | t] with
    /// R rotating world +z to camera -z.
    fn synthetic_camera() -> Camera {
        // camera frame: x right, y down, z forward = world -z
        let k = [[800.0, 0.0, 320.0], [0.0, 800.0, 240.0], [0.0, 0.0, 1.0]];
        let r = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        let centre = [0.0, 0.0, 5.0];
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for (kk, r_row) in r.iter().enumerate() {
                    acc += k[i][kk] * r_row[j];
                }
                p[i][j] = acc;
            }
        }
        // p4 = -M c
        for (i, row) in p.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += row[j] * centre[j];
            }
            let _ = i;
            row[3] = -acc;
        }
        Camera(p)
    }

    #[test]
    fn surface_points_pass_through() {
        let sphere = primitives::icosphere(1);
        let ann = AnnotationSet {
            subject_id: "s1".into(),
            cameras: None,
            items: vec![AnnotationItem {
                label: "eyes".into(),
                camera: None,
                pixels: vec![],
                points: vec![[0.1, 0.2, 0.3]],
            }],
        };
        let (projected, misses) = project_annotations(&ann, &sphere).unwrap();
        assert_eq!(misses, 0);
        assert_eq!(projected.len(), 1);
        assert_eq!(projected[0].point, Point3::new(0.1, 0.2, 0.3));
        assert!(projected[0].context.is_none());
    }

    #[test]
    fn principal_point_ray_hits_sphere_along_optical_axis() {
        let sphere = primitives::icosphere(3);
        let camera = synthetic_camera();
        let ann = AnnotationSet {
            subject_id: "s1".into(),
            cameras: Some(StereoCameras {
                left: camera,
                right: synthetic_camera(),
            }),
            items: vec![AnnotationItem {
                label: "nose".into(),
                camera: Some(CameraSide::Left),
                pixels: vec![[320.0, 240.0]],
                points: vec![],
            }],
        };
        let (projected, misses) = project_annotations(&ann, &sphere).unwrap();
        assert_eq!(misses, 0);
        assert_eq!(projected.len(), 1);
        // nearest sphere point along the optical axis from (0,0,5) is ~(0,0,1)
        assert!(
            (projected[0].point - Point3::new(0.0, 0.0, 1.0)).norm() < 0.05,
            "hit at {:?}",
            projected[0].point
        );
        let ctx = projected[0].context.unwrap();
        assert!((ctx.distance - 4.0).abs() < 0.05);
    }

    #[test]
    fn missed_rays_are_dropped_and_counted() {
        let sphere = primitives::icosphere(1);
        let ann = AnnotationSet {
            subject_id: "s1".into(),
            cameras: Some(StereoCameras {
                left: synthetic_camera(),
                right: synthetic_camera(),
            }),
            items: vec![AnnotationItem {
                label: "ears".into(),
                camera: Some(CameraSide::Right),
                // far off the principal point: the ray passes the sphere
                pixels: vec![[320.0, 240.0], [50000.0, 240.0]],
                points: vec![],
            }],
        };
        let (projected, misses) = project_annotations(&ann, &sphere).unwrap();
        assert_eq!(projected.len(), 1);
        assert_eq!(misses, 1);
    }

    #[test]
    fn singular_camera_is_an_error() {
        let mut cam = synthetic_camera();
        cam.0[0] = [0.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            cam.back_project(10.0, 10.0),
            Err(Error::SingularCamera)
        ));
    }

    #[test]
    fn duplicate_vertex_label_hits_collapse_within_a_subject() {
        let sphere = primitives::icosphere(0);
        let v = sphere.vertex(3);
        let near = v + Vector3::new(1e-4, 0.0, 0.0);
        let points = vec![("eyes".to_string(), v), ("eyes".to_string(), near)];
        let frag = transfer_to_template(&points, &sphere).unwrap();
        assert_eq!(frag.hits.len(), 1);
        let mut tally = TransferTally::new(sphere.n_vertices());
        tally.add_fragment(&frag);
        assert_eq!(tally.per_label["eyes"][3], 1);
    }

    #[test]
    fn empty_point_list_gives_empty_fragment() {
        let sphere = primitives::icosphere(0);
        let frag = transfer_to_template(&[], &sphere).unwrap();
        assert!(frag.hits.is_empty());
    }

    #[test]
    fn transfer_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let template = primitives::icosphere(2); // > 100 vertices
        let labels = ["a", "b", "c"];
        let points: Vec<(String, Point3<f64>)> = (0..20)
            .map(|i| {
                let p = Point3::new(
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                    rng.random_range(-1.2..1.2),
                );
                (labels[i % 3].to_string(), p)
            })
            .collect();
        let frag = transfer_to_template(&points, &template).unwrap();
        // independent linear-scan + dedup oracle
        let mut expect: BTreeSet<(usize, String)> = BTreeSet::new();
        for (label, p) in &points {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, v) in template.vertices().iter().enumerate() {
                let d2 = (v - p).norm_squared();
                if d2 < best.1 {
                    best = (i, d2);
                }
            }
            expect.insert((best.0, label.clone()));
        }
        assert_eq!(frag.hits, expect);
    }

    #[test]
    fn density_is_one_when_every_subject_hits_every_touched_vertex() {
        let tally = tally_from(
            10,
            &[
                fragment(&[(1, "a"), (4, "b")]),
                fragment(&[(1, "a"), (4, "b")]),
                fragment(&[(1, "a"), (4, "a")]),
            ],
        );
        assert_eq!(density(&tally).unwrap(), 1.0);
    }

    #[test]
    fn density_worst_case_uniform_single_hits() {
        // every touched vertex touched exactly once, 4 subjects
        let tally = tally_from(
            10,
            &[
                fragment(&[(0, "a")]),
                fragment(&[(1, "a")]),
                fragment(&[(2, "a")]),
                fragment(&[(3, "a")]),
            ],
        );
        assert_eq!(density(&tally).unwrap(), 0.25);
    }

    #[test]
    fn density_hand_case_four_sixths() {
        // t = [3, 1] over touched vertices, 3 subjects: (3+1) / (3 * 2)
        let tally = tally_from(
            5,
            &[
                fragment(&[(0, "a"), (1, "a")]),
                fragment(&[(0, "a")]),
                fragment(&[(0, "a")]),
            ],
        );
        let d = density(&tally).unwrap();
        assert!((d - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn density_without_transfers_is_an_error() {
        let tally = tally_from(4, &[fragment(&[])]);
        assert!(matches!(density(&tally), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn homogeneity_is_one_for_separated_labels() {
        let tally = tally_from(
            8,
            &[
                fragment(&[(0, "a"), (3, "b")]),
                fragment(&[(0, "a"), (4, "b")]),
            ],
        );
        let rep = homogeneity(&tally).unwrap();
        assert_eq!(rep.overall, 1.0);
        for l in &rep.per_label {
            assert_eq!(l.homogeneity, 1.0);
        }
    }

    #[test]
    fn homogeneity_half_for_fully_overlapping_labels() {
        let tally = tally_from(
            6,
            &[
                fragment(&[(0, "a"), (0, "b"), (1, "a"), (1, "b")]),
                fragment(&[(0, "a"), (0, "b"), (1, "a"), (1, "b")]),
            ],
        );
        let rep = homogeneity(&tally).unwrap();
        assert!((rep.overall - 0.5).abs() < 1e-15);
        for l in &rep.per_label {
            assert!((l.homogeneity - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn homogeneity_hand_case_three_quarters() {
        // t_A = [2,1,0], t_B = [0,1,2] over three vertices
        let tally = tally_from(
            3,
            &[
                fragment(&[(0, "A"), (1, "A"), (2, "B")]),
                fragment(&[(0, "A"), (1, "B"), (2, "B")]),
            ],
        );
        let rep = homogeneity(&tally).unwrap();
        assert!((rep.overall - 0.75).abs() < 1e-15);
        for l in &rep.per_label {
            assert!((l.homogeneity - 0.75).abs() < 1e-15);
            assert!((l.weight - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn label_disjoint_from_others_has_unit_homogeneity() {
        let tally = tally_from(8, &[fragment(&[(0, "a"), (0, "b"), (5, "solo")])]);
        let rep = homogeneity(&tally).unwrap();
        let solo = rep.per_label.iter().find(|l| l.label == "solo").unwrap();
        assert_eq!(solo.homogeneity, 1.0);
    }

    #[test]
    fn prevalence_weights_sum_to_one() {
        let tally = tally_from(
            12,
            &[
                fragment(&[(0, "a"), (1, "b"), (2, "c"), (2, "a")]),
                fragment(&[(0, "a"), (3, "b")]),
            ],
        );
        let rep = homogeneity(&tally).unwrap();
        let sum: f64 = rep.per_label.iter().map(|l| l.weight).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_tally_homogeneity_is_an_error() {
        let tally = TransferTally::new(5);
        assert!(matches!(
            homogeneity(&tally),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn metrics_are_invariant_to_subject_order_and_merge_associative() {
        let frags = vec![
            fragment(&[(0, "a"), (1, "b")]),
            fragment(&[(0, "a"), (2, "b")]),
            fragment(&[(1, "a"), (2, "a")]),
        ];
        let forward = tally_from(6, &frags);
        let mut reversed_frags = frags.clone();
        reversed_frags.reverse();
        let reversed = tally_from(6, &reversed_frags);
        assert_eq!(forward, reversed);
        // merge of partial tallies equals incremental accumulation
        let left = tally_from(6, &frags[..1]);
        let right = tally_from(6, &frags[1..]);
        assert_eq!(left.merge(&right), forward);
        let a = tally_from(6, &frags[..2]);
        let b = tally_from(6, &frags[2..]);
        assert_eq!(a.merge(&b), forward);
    }

    #[test]
    fn adding_a_subject_on_touched_vertices_does_not_decrease_counts() {
        let base = tally_from(4, &[fragment(&[(0, "a"), (1, "a")])]);
        let more = base
            .clone()
            .merge(&tally_from(4, &[fragment(&[(0, "a"), (1, "b")])]));
        for v in 0..4 {
            assert!(more.t_v[v] >= base.t_v[v]);
        }
    }

    #[test]
    fn colormap_all_zero_is_uniform_minimum() {
        let tally = TransferTally::new(4);
        let colors = density_colors(&tally, &ColorRamp::default());
        assert!(colors.iter().all(|&c| c == ColorRamp::default().low));
    }

    #[test]
    fn colormap_single_max_vertex_gets_high_color() {
        let tally = tally_from(4, &[fragment(&[(2, "a")])]);
        let colors = density_colors(&tally, &ColorRamp::default());
        let high = ColorRamp::default().high;
        assert_eq!(colors[2], high);
        assert_eq!(colors.iter().filter(|&&c| c == high).count(), 1);
    }

    #[test]
    fn colormap_midpoint_interpolates_channels() {
        // counts 0, 1, 2 with an even ramp: the midpoint count gets the
        // exact channel midpoints
        let tally = tally_from(3, &[fragment(&[(1, "a"), (2, "a")]), fragment(&[(2, "a")])]);
        let ramp = ColorRamp {
            low: [0, 0, 100],
            high: [200, 100, 0],
        };
        let colors = density_colors(&tally, &ramp);
        assert_eq!(colors[0], [0, 0, 100]);
        assert_eq!(colors[1], [100, 50, 50]);
        assert_eq!(colors[2], [200, 100, 0]);
    }

    #[test]
    fn colormap_export_checks_vertex_count() {
        let sphere = primitives::icosphere(0);
        let tally = TransferTally::new(5);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_density_colormap(
                &tally,
                &sphere,
                &ColorRamp::default(),
                dir.path().join("c.ply")
            ),
            Err(Error::TallySizeMismatch { .. })
        ));
    }

    #[test]
    fn colormap_ply_round_trips_geometry() {
        let sphere = primitives::icosphere(1);
        let mut tally = TransferTally::new(sphere.n_vertices());
        tally.add_fragment(&fragment(&[(0, "a"), (5, "b")]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.ply");
        export_density_colormap(&tally, &sphere, &ColorRamp::default(), &path).unwrap();
        let loaded = crate::mesh::load_ply(&path).unwrap();
        assert_eq!(loaded.vertices(), sphere.vertices());
    }
}
