//! Correspondence sets and the per-iteration matchers: fixed pairing,
//! mutual nearest neighbours and normal shooting.
//!
//! Matching is only permitted within a set's declared template/data member
//! lists; returned indices always refer to whole-mesh vertex numbering.

use crate::error::{Error, Result};
use crate::mesh::{build_spatial_index, TriangleMesh};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// If the projected displacement exceeds this multiple of the raw
/// correspondence vector the pair falls back to the plain MNN target.
/// Unreachable for unit normals; guards non-unit normals from degenerate
/// one-rings.
pub const NORMAL_SHOOT_CAP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Predefined positional bijection (landmarks).
    Fixed,
    /// Mutual nearest neighbours within the member lists.
    Mnn,
    /// MNN refined by projecting onto the template normal line.
    NormalShoot,
}

/// A named template/data vertex pairing domain with its influence weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub name: String,
    pub template_members: Vec<usize>,
    pub data_members: Vec<usize>,
    /// Relative influence weight (alpha > 0).
    pub weight: f64,
    pub pairing: Pairing,
    /// Optional per-pair confidences in (0, 1]; positional, fixed sets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pair_weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn validate(&self, template: &TriangleMesh, data: &TriangleMesh) -> Result<()> {
        let err = |reason: String| Error::InvalidSet {
            name: self.name.clone(),
            reason,
        };
        if !(self.weight > 0.0) {
            return Err(err(format!("weight {} must be > 0", self.weight)));
        }
        check_members(&self.template_members, template.n_vertices())
            .map_err(|r| err(format!("template members: {r}")))?;
        check_members(&self.data_members, data.n_vertices())
            .map_err(|r| err(format!("data members: {r}")))?;
        if self.pairing == Pairing::Fixed && self.template_members.len() != self.data_members.len()
        {
            return Err(Error::FixedLengthMismatch {
                name: self.name.clone(),
                template: self.template_members.len(),
                data: self.data_members.len(),
            });
        }
        if let Some(w) = &self.per_pair_weights {
            if w.len() != self.template_members.len() {
                return Err(err(format!(
                    "{} per-pair weights for {} members",
                    w.len(),
                    self.template_members.len()
                )));
            }
            if w.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(err("per-pair weights must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

fn check_members(members: &[usize], n: usize) -> std::result::Result<(), String> {
    let mut seen = HashSet::with_capacity(members.len());
    for &m in members {
        if m >= n {
            return Err(format!("index {m} out of range (mesh has {n} vertices)"));
        }
        if !seen.insert(m) {
            return Err(format!("index {m} appears twice"));
        }
    }
    Ok(())
}

/// One template-to-target pair produced by a matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub template_index: usize,
    pub data_index: usize,
    /// For fixed and MNN pairings this is the data vertex position; for
    /// normal shooting it may lie off-surface.
    pub target: Point3<f64>,
    pub weight: f64,
}

/// All pairs selected from one correspondence set in one iteration.
#[derive(Debug, Clone)]
pub struct MatchList {
    pub set_name: String,
    pub pairs: Vec<MatchPair>,
}

impl MatchList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Pairs the k-th template member with the k-th data member.
pub fn match_fixed(
    set: &CorrespondenceSet,
    template: &TriangleMesh,
    data: &TriangleMesh,
) -> Result<MatchList> {
    if set.pairing != Pairing::Fixed {
        return Err(Error::InvalidSet {
            name: set.name.clone(),
            reason: format!("match_fixed on a {:?} set", set.pairing),
        });
    }
    set.validate(template, data)?;
    let pairs = set
        .template_members
        .iter()
        .zip(&set.data_members)
        .enumerate()
        .map(|(k, (&t, &d))| MatchPair {
            template_index: t,
            data_index: d,
            target: data.vertex(d),
            weight: set.weight * set.per_pair_weights.as_ref().map_or(1.0, |w| w[k]),
        })
        .collect();
    Ok(MatchList {
        set_name: set.name.clone(),
        pairs,
    })
}

/// Bidirectional 1-nearest-neighbour pairs that agree in both directions,
/// under the positional metric optionally augmented with
/// `normal_weight * normal`.
///
/// An empty member list on either side yields an empty match list (meshes
/// with holes), not an error.
pub fn match_mnn(
    set: &CorrespondenceSet,
    template: &TriangleMesh,
    data: &TriangleMesh,
    normal_weight: f64,
) -> Result<MatchList> {
    if set.pairing == Pairing::Fixed {
        return Err(Error::InvalidSet {
            name: set.name.clone(),
            reason: "match_mnn on a fixed set".into(),
        });
    }
    set.validate(template, data)?;
    let pairs = mutual_pairs(set, template, data, normal_weight)?
        .into_iter()
        .map(|(t, d)| MatchPair {
            template_index: t,
            data_index: d,
            target: data.vertex(d),
            weight: set.weight,
        })
        .collect();
    Ok(MatchList {
        set_name: set.name.clone(),
        pairs,
    })
}

/// MNN pairs retargeted along the template normal line: the target becomes
/// `x + ((y - x) . n) n`, in general an off-surface point.
pub fn match_normal_shoot(
    set: &CorrespondenceSet,
    template: &TriangleMesh,
    data: &TriangleMesh,
    normal_weight: f64,
) -> Result<MatchList> {
    if set.pairing == Pairing::Fixed {
        return Err(Error::InvalidSet {
            name: set.name.clone(),
            reason: "match_normal_shoot on a fixed set".into(),
        });
    }
    set.validate(template, data)?;
    let normals = &template.vertex_normals().normals;
    let pairs = mutual_pairs(set, template, data, normal_weight)?
        .into_iter()
        .map(|(t, d)| {
            let x = template.vertex(t);
            let y = data.vertex(d);
            let n = normals[t];
            let delta = y - x;
            let along = delta.dot(&n);
            let target = if along.abs() > NORMAL_SHOOT_CAP * delta.norm() {
                y
            } else {
                x + n * along
            };
            MatchPair {
                template_index: t,
                data_index: d,
                target,
                weight: set.weight,
            }
        })
        .collect();
    Ok(MatchList {
        set_name: set.name.clone(),
        pairs,
    })
}

fn mutual_pairs(
    set: &CorrespondenceSet,
    template: &TriangleMesh,
    data: &TriangleMesh,
    normal_weight: f64,
) -> Result<Vec<(usize, usize)>> {
    if set.template_members.is_empty() || set.data_members.is_empty() {
        return Ok(Vec::new());
    }
    let gather =
        |mesh: &TriangleMesh, members: &[usize]| -> (Vec<Point3<f64>>, Vec<Vector3<f64>>) {
            let pts = members.iter().map(|&i| mesh.vertex(i)).collect();
            let normals = if normal_weight > 0.0 {
                let all = &mesh.vertex_normals().normals;
                members.iter().map(|&i| all[i]).collect()
            } else {
                Vec::new()
            };
            (pts, normals)
        };
    let (t_pts, t_normals) = gather(template, &set.template_members);
    let (d_pts, d_normals) = gather(data, &set.data_members);
    // indexes are memoized on each mesh instance, so the static side of an
    // iterative registration is only built once per stage
    let t_index = template.member_index(&set.template_members, normal_weight)?;
    let d_index = data.member_index(&set.data_members, normal_weight)?;
    let query = |idx: &crate::mesh::SpatialIndex, p: &Point3<f64>, n: Option<&Vector3<f64>>| match n
    {
        Some(n) => idx.nearest_with_normal(p, n).0,
        None => idx.nearest_position(p).0,
    };
    let nearest_data: Vec<usize> = t_pts
        .iter()
        .enumerate()
        .map(|(k, p)| query(&d_index, p, t_normals.get(k)))
        .collect();
    let nearest_template: Vec<usize> = d_pts
        .iter()
        .enumerate()
        .map(|(k, p)| query(&t_index, p, d_normals.get(k)))
        .collect();
    let pairs = nearest_data
        .iter()
        .enumerate()
        .filter(|&(tk, &dk)| nearest_template[dk] == tk)
        .map(|(tk, &dk)| (set.template_members[tk], set.data_members[dk]))
        .collect();
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Landmark / contour file loading
// ---------------------------------------------------------------------------

/// A named set as declared in pipeline configuration: weight, pairing kind
/// and whether its members are the complement of every other set's members.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SetDefinition {
    pub name: String,
    pub weight: f64,
    pub pairing: Pairing,
    /// Members are all vertices not used by any other set.
    #[serde(default)]
    pub complement: bool,
}

/// One named set in a subject landmark/contour file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SetEntry {
    pub name: String,
    #[serde(default)]
    pub template_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_indices: Option<Vec<usize>>,
    /// 3D points snapped to the nearest data vertices at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_points: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pair_weights: Option<Vec<f64>>,
    /// Stored 2D-to-3D landmark residuals r; converted to weights
    /// w = 1 / (1 + r / mean(r)) so larger residuals get lower confidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<f64>>,
}

/// Subject landmark/contour file: named sets with indices or snap points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetsFile {
    pub sets: Vec<SetEntry>,
}

/// Resolves set definitions against a subject's landmark file and the two
/// meshes, snapping 3D points and expanding complement sets.
pub fn resolve_sets(
    definitions: &[SetDefinition],
    file: &SetsFile,
    template: &TriangleMesh,
    data: &TriangleMesh,
) -> Result<Vec<CorrespondenceSet>> {
    let mut used_template: HashSet<usize> = HashSet::new();
    let mut used_data: HashSet<usize> = HashSet::new();
    let mut explicit: Vec<CorrespondenceSet> = Vec::new();
    let mut complements: Vec<&SetDefinition> = Vec::new();

    let data_index = build_spatial_index(data.vertices(), None, 0.0)?;
    for def in definitions {
        if def.complement {
            complements.push(def);
            continue;
        }
        let entry = file
            .sets
            .iter()
            .find(|e| e.name == def.name)
            .ok_or_else(|| Error::InvalidSet {
                name: def.name.clone(),
                reason: "no entry in the landmark file".into(),
            })?;
        let data_members: Vec<usize> = match (&entry.data_indices, &entry.data_points) {
            (Some(idx), None) => idx.clone(),
            (None, Some(points)) => points
                .iter()
                .map(|p| {
                    data_index
                        .nearest_position(&Point3::new(p[0], p[1], p[2]))
                        .0
                })
                .collect(),
            (Some(_), Some(_)) => {
                return Err(Error::InvalidSet {
                    name: def.name.clone(),
                    reason: "both data_indices and data_points given".into(),
                })
            }
            (None, None) => Vec::new(),
        };
        let per_pair_weights = match (&entry.per_pair_weights, &entry.residuals) {
            (Some(w), None) => Some(w.clone()),
            (None, Some(r)) => Some(residual_weights(r)),
            (Some(_), Some(_)) => {
                return Err(Error::InvalidSet {
                    name: def.name.clone(),
                    reason: "both per_pair_weights and residuals given".into(),
                })
            }
            (None, None) => None,
        };
        used_template.extend(entry.template_indices.iter().copied());
        used_data.extend(data_members.iter().copied());
        let set = CorrespondenceSet {
            name: def.name.clone(),
            template_members: entry.template_indices.clone(),
            data_members,
            weight: def.weight,
            pairing: def.pairing,
            per_pair_weights,
        };
        set.validate(template, data)?;
        explicit.push(set);
    }
    for def in complements {
        let template_members: Vec<usize> = (0..template.n_vertices())
            .filter(|i| !used_template.contains(i))
            .collect();
        let data_members: Vec<usize> = (0..data.n_vertices())
            .filter(|i| !used_data.contains(i))
            .collect();
        let set = CorrespondenceSet {
            name: def.name.clone(),
            template_members,
            data_members,
            weight: def.weight,
            pairing: def.pairing,
            per_pair_weights: None,
        };
        set.validate(template, data)?;
        explicit.push(set);
    }
    Ok(explicit)
}

/// w = 1 / (1 + r / mean(r)); all weights 1 when every residual is zero.
fn residual_weights(residuals: &[f64]) -> Vec<f64> {
    if residuals.is_empty() {
        return Vec::new();
    }
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    if mean <= 0.0 {
        return vec![1.0; residuals.len()];
    }
    residuals.iter().map(|&r| 1.0 / (1.0 + r / mean)).collect()
}

pub fn load_sets_file(path: impl AsRef<Path>) -> Result<SetsFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}
