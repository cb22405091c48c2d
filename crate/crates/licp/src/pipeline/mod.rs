//! The staged coarse-to-fine registration driver.
//!
//! Stages run in declared order, threading the template and data meshes
//! through: per iteration the active correspondence sets are re-matched,
//! the configured deformation model is solved, and the stage terminates on
//! a small template change or its iteration cap. Rigid motion accumulates
//! on the data side only, keeping the template in its canonical pose.

mod config;
mod preset;

pub use config::{
    DeformationModel, MatchStrategy, PipelineConfig, StageConfig, StageSpec, DEFAULT_MAX_INNER,
    DEFAULT_PVAC_GAMMA, DEFAULT_T_S_FACTOR,
};
pub use preset::{head_preset, set_names, STAGE5_NORMAL_WEIGHT};

use crate::correspond::{
    match_fixed, match_mnn, match_normal_shoot, CorrespondenceSet, MatchList, Pairing,
};
use crate::deform::{
    apply_affine_split, refine_with_operator_refresh, solve_global_affine, solve_lb_deformation,
    solve_pvac_deformation,
};
use crate::error::{Error, Result};
use crate::mesh::{cotan_laplacian, TriangleMesh};
use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Accumulated rigid motion applied to the data mesh, in column convention:
/// `y' = R (y - t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.rotation[r][c])
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.translation)
    }

    /// Applies the accumulated motion to a point in the original data frame.
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * (p.coords - self.translation_vector()))
    }

    /// Folds one more update `y' = R (y - t)` on top of the accumulated
    /// motion.
    fn compose_update(&mut self, r: &Matrix3<f64>, t: &Vector3<f64>) {
        let r_hat = self.rotation_matrix();
        let new_r = r * r_hat;
        let new_t = self.translation_vector() + r_hat.transpose() * t;
        for i in 0..3 {
            for j in 0..3 {
                self.rotation[i][j] = new_r[(i, j)];
            }
            self.translation[i] = new_t[i];
        }
    }
}

/// One per-iteration trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: String,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub pair_counts: BTreeMap<String, usize>,
    pub e_shp: f64,
    pub e_reg: f64,
    pub delta_x_sq: f64,
    pub inner_iterations: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrationTrace {
    pub records: Vec<TraceRecord>,
}

impl RegistrationTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("trace record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line)?);
        }
        Ok(RegistrationTrace { records })
    }

    /// Cumulative wall time in milliseconds up to and including each stage,
    /// in stage order of first appearance.
    pub fn cumulative_stage_times(&self) -> Vec<(String, f64)> {
        let mut order: Vec<String> = Vec::new();
        let mut per_stage: BTreeMap<String, f64> = BTreeMap::new();
        for r in &self.records {
            if !per_stage.contains_key(&r.stage) {
                order.push(r.stage.clone());
            }
            *per_stage.entry(r.stage.clone()).or_insert(0.0) += r.wall_ms;
        }
        let mut acc = 0.0;
        order
            .into_iter()
            .map(|stage| {
                acc += per_stage[&stage];
                (stage, acc)
            })
            .collect()
    }
}

/// Which family of deformation solvers drives the lb-model stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Licp,
    Pvac,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "licp" => Ok(SolverKind::Licp),
            "pvac" => Ok(SolverKind::Pvac),
            other => Err(Error::InvalidConfig(format!(
                "unknown solver '{other}' (expected licp or pvac)"
            ))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Licp => "licp",
            SolverKind::Pvac => "pvac",
        })
    }
}

/// Options of one pipeline run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Swap the free-deformation solver family, leaving affine stages and
    /// every other parameter untouched.
    pub solver_override: Option<SolverKind>,
    pub collect_stage_snapshots: bool,
    /// Keep a template snapshot per iteration (tests and diagnostics only).
    pub collect_iteration_snapshots: bool,
}

/// Template state captured after a stage, together with the rigid motion
/// accumulated on the data side up to that point.
#[derive(Debug, Clone)]
pub struct StageSnapshot {
    pub stage: String,
    pub template: TriangleMesh,
    pub data_rigid: RigidMotion,
}

#[derive(Debug)]
pub struct RegistrationResult {
    pub template: TriangleMesh,
    pub data: TriangleMesh,
    pub trace: RegistrationTrace,
    /// Net rigid motion that carried the data from its input frame to the
    /// registered frame.
    pub data_rigid: RigidMotion,
    pub stage_snapshots: Vec<StageSnapshot>,
    pub iteration_snapshots: Vec<TriangleMesh>,
}

/// Per-stage execution environment shared by [`run_stage`] calls.
#[derive(Debug, Clone)]
pub struct StageEnv {
    /// Fallback termination threshold for stages without an explicit `t_s`.
    pub default_t_s: f64,
    pub pvac_gamma: f64,
    /// Zero the wall-clock fields of trace records.
    pub deterministic: bool,
    pub solver_override: Option<SolverKind>,
    pub collect_iteration_snapshots: bool,
}

impl StageEnv {
    pub fn for_template(template: &TriangleMesh) -> Self {
        StageEnv {
            default_t_s: DEFAULT_T_S_FACTOR * template.bbox_diagonal().powi(2),
            pvac_gamma: DEFAULT_PVAC_GAMMA,
            deterministic: false,
            solver_override: None,
            collect_iteration_snapshots: false,
        }
    }
}

#[derive(Debug)]
pub struct StageOutcome {
    pub template: TriangleMesh,
    pub data: TriangleMesh,
    /// Rigid increment this stage applied to the data (identity for
    /// non-affine stages).
    pub rigid: RigidMotion,
    pub records: Vec<TraceRecord>,
    pub iteration_snapshots: Vec<TriangleMesh>,
}

fn effective_model(stage: &StageConfig, env: &StageEnv) -> DeformationModel {
    match (env.solver_override, stage.deformation) {
        (Some(SolverKind::Pvac), DeformationModel::LbFree | DeformationModel::LbFreeRefine) => {
            DeformationModel::Pvac
        }
        (Some(SolverKind::Licp), DeformationModel::Pvac) => DeformationModel::LbFree,
        (_, model) => model,
    }
}

fn match_active_sets(
    stage: &StageConfig,
    template: &TriangleMesh,
    data: &TriangleMesh,
    sets: &[CorrespondenceSet],
) -> Result<Vec<MatchList>> {
    let mut matches = Vec::with_capacity(stage.correspondence_sets.len());
    for name in &stage.correspondence_sets {
        let set = sets.iter().find(|s| &s.name == name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "stage '{}' references set '{name}' which was not provided",
                stage.name
            ))
        })?;
        let list = if set.pairing == Pairing::Fixed {
            match_fixed(set, template, data)?
        } else {
            match stage.matching {
                MatchStrategy::FixedOnly => {
                    return Err(Error::InvalidConfig(format!(
                        "stage '{}' uses fixed-only matching but set '{name}' is not fixed",
                        stage.name
                    )))
                }
                MatchStrategy::Mnn => match_mnn(set, template, data, stage.metric_normal_weight)?,
                MatchStrategy::NormalShoot => {
                    match_normal_shoot(set, template, data, stage.metric_normal_weight)?
                }
            }
        };
        matches.push(list);
    }
    Ok(matches)
}

/// Runs one stage to termination: matches the active sets, dispatches to
/// the configured deformation model with the scheduled stiffness, and stops
/// when `||dX||_F^2 < t_s` or the iteration cap is reached.
pub fn run_stage(
    stage: &StageConfig,
    template: &TriangleMesh,
    data: &TriangleMesh,
    sets: &[CorrespondenceSet],
    env: &StageEnv,
) -> Result<StageOutcome> {
    let t_s = stage.t_s.unwrap_or(env.default_t_s);
    let model = effective_model(stage, env);
    let mut template = template.clone();
    let mut data = data.clone();
    let mut rigid = RigidMotion::identity();
    let mut records = Vec::new();
    let mut iteration_snapshots = Vec::new();
    let annotate = |e: Error, stage_name: &str| match e {
        Error::NoCorrespondences { stage: None } => Error::NoCorrespondences {
            stage: Some(stage_name.to_string()),
        },
        other => other,
    };
    for iteration in 0..stage.i_max {
        let started = Instant::now();
        let matches = match_active_sets(stage, &template, &data, sets)?;
        let pair_counts: BTreeMap<String, usize> = matches
            .iter()
            .map(|m| (m.set_name.clone(), m.len()))
            .collect();
        let total_pairs: usize = matches.iter().map(|m| m.len()).sum();
        if total_pairs == 0 {
            return Err(Error::NoCorrespondences {
                stage: Some(stage.name.clone()),
            });
        }
        let lambda = match &stage.schedule {
            Some(s) if model.needs_schedule() => Some(s.value_at(iteration)?),
            _ => None,
        };
        let (e_shp, e_reg, delta_x_sq, inner_iterations) = match model {
            DeformationModel::AffineOneshot | DeformationModel::AffineIterative => {
                let update = solve_global_affine(&matches, &template)
                    .map_err(|e| annotate(e, &stage.name))?;
                let (new_template, new_data) = apply_affine_split(&update, &template, &data);
                let delta_x_sq: f64 = template
                    .vertices()
                    .iter()
                    .zip(new_template.vertices())
                    .map(|(a, b)| (b - a).norm_squared())
                    .sum();
                // residual norms are preserved by the split, so the shape
                // energy may be evaluated in the updated frame
                let e_shp: f64 = matches
                    .iter()
                    .flat_map(|m| &m.pairs)
                    .map(|p| {
                        let d =
                            new_template.vertex(p.template_index) - new_data.vertex(p.data_index);
                        p.weight * p.weight * d.norm_squared()
                    })
                    .sum();
                template = new_template;
                data = new_data;
                rigid.compose_update(&update.rotation, &update.translation);
                (e_shp, 0.0, delta_x_sq, 1)
            }
            DeformationModel::LbFree => {
                let laplace = cotan_laplacian(&template)?;
                let (new_template, report) =
                    solve_lb_deformation(&matches, &template, &laplace, lambda.unwrap())
                        .map_err(|e| annotate(e, &stage.name))?;
                template = new_template;
                (
                    report.residual_shape,
                    report.residual_reg,
                    report.delta_x,
                    report.iterations_inner,
                )
            }
            DeformationModel::LbFreeRefine => {
                let before = template.clone();
                let (new_template, report) = refine_with_operator_refresh(
                    &matches,
                    &template,
                    lambda.unwrap(),
                    t_s,
                    stage.max_inner,
                )
                .map_err(|e| annotate(e, &stage.name))?;
                template = new_template;
                let delta_x_sq: f64 = before
                    .vertices()
                    .iter()
                    .zip(template.vertices())
                    .map(|(a, b)| (b - a).norm_squared())
                    .sum();
                (
                    report.residual_shape,
                    report.residual_reg,
                    delta_x_sq,
                    report.iterations_inner,
                )
            }
            DeformationModel::Pvac => {
                // when substituted for the refining model, the per-vertex
                // affine solve keeps the inner loop at fixed matches and
                // stiffness so all parameters stay the same
                let inner_cap = if stage.deformation == DeformationModel::LbFreeRefine {
                    stage.max_inner
                } else {
                    1
                };
                let before = template.clone();
                let mut last_report = None;
                let mut inner_done = 0;
                for _ in 0..inner_cap {
                    let (new_template, report) = solve_pvac_deformation(
                        &matches,
                        &template,
                        env.pvac_gamma,
                        lambda.unwrap(),
                    )
                    .map_err(|e| annotate(e, &stage.name))?;
                    template = new_template;
                    inner_done += 1;
                    let done = report.delta_x < t_s;
                    last_report = Some(report);
                    if done {
                        break;
                    }
                }
                let report = last_report.expect("at least one inner iteration");
                let delta_x_sq: f64 = before
                    .vertices()
                    .iter()
                    .zip(template.vertices())
                    .map(|(a, b)| (b - a).norm_squared())
                    .sum();
                (
                    report.residual_shape,
                    report.residual_reg,
                    delta_x_sq,
                    inner_done,
                )
            }
        };
        let wall_ms = if env.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64() * 1e3
        };
        records.push(TraceRecord {
            stage: stage.name.clone(),
            iteration,
            lambda,
            pair_counts,
            e_shp,
            e_reg,
            delta_x_sq,
            inner_iterations,
            wall_ms,
        });
        if env.collect_iteration_snapshots {
            iteration_snapshots.push(template.clone());
        }
        if delta_x_sq < t_s {
            break;
        }
    }
    Ok(StageOutcome {
        template,
        data,
        rigid,
        records,
        iteration_snapshots,
    })
}

/// Executes all stages in order and returns the registered template, the
/// repositioned data, the trace and the accumulated data-side rigid motion.
///
/// Deterministic given identical inputs; with the configuration's
/// `deterministic` flag set, traces are also free of wall-clock times.
pub fn run_pipeline(
    config: &PipelineConfig,
    template: &TriangleMesh,
    data: &TriangleMesh,
    sets: &[CorrespondenceSet],
    options: &RunOptions,
) -> Result<RegistrationResult> {
    let stages = config.resolve()?;
    for stage in &stages {
        for name in &stage.correspondence_sets {
            if !sets.iter().any(|s| &s.name == name) {
                return Err(Error::InvalidConfig(format!(
                    "stage '{}' needs set '{name}' but it was not resolved for this subject",
                    stage.name
                )));
            }
        }
    }
    // fixed sets must be populated before the first stage needs them
    for set in sets {
        if set.pairing == Pairing::Fixed
            && stages
                .iter()
                .any(|s| s.correspondence_sets.contains(&set.name))
            && set.template_members.is_empty()
        {
            return Err(Error::InvalidSet {
                name: set.name.clone(),
                reason: "fixed set is empty".into(),
            });
        }
    }
    let env = StageEnv {
        default_t_s: DEFAULT_T_S_FACTOR * template.bbox_diagonal().powi(2),
        pvac_gamma: config.pvac_gamma,
        deterministic: config.deterministic,
        solver_override: options.solver_override,
        collect_iteration_snapshots: options.collect_iteration_snapshots,
    };
    let mut template = template.clone();
    let mut data = data.clone();
    let mut rigid = RigidMotion::identity();
    let mut trace = RegistrationTrace::default();
    let mut stage_snapshots = Vec::new();
    let mut iteration_snapshots = Vec::new();
    for stage in &stages {
        let outcome = run_stage(stage, &template, &data, sets, &env)?;
        template = outcome.template;
        data = outcome.data;
        let r = outcome.rigid.rotation_matrix();
        let t = outcome.rigid.translation_vector();
        rigid.compose_update(&r, &t);
        trace.records.extend(outcome.records);
        iteration_snapshots.extend(outcome.iteration_snapshots);
        if options.collect_stage_snapshots {
            stage_snapshots.push(StageSnapshot {
                stage: stage.name.clone(),
                template: template.clone(),
                data_rigid: rigid.clone(),
            });
        }
    }
    Ok(RegistrationResult {
        template,
        data,
        trace,
        data_rigid: rigid,
        stage_snapshots,
        iteration_snapshots,
    })
}
