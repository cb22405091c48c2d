//! Batch commands: `register`, `benchmark` and `timing` over a subject
//! manifest.

use crate::benchmark::{
    density, export_density_colormap, homogeneity, project_annotations, transfer_to_template,
    AnnotationSet, ColorRamp, MetricReport, TransferTally,
};
use crate::correspond::{load_sets_file, resolve_sets};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, save_ply, PlyFormat, TriangleMesh};
use crate::pipeline::{
    run_pipeline, PipelineConfig, RegistrationResult, RigidMotion, RunOptions, SolverKind,
};
use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One scan to register: id, mesh path, landmark/contour file, optional
/// annotation file for the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub scan: PathBuf,
    pub landmarks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
}

/// Batch run description. Relative paths are resolved against the manifest
/// file's directory at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub template: PathBuf,
    pub subjects: Vec<SubjectEntry>,
    /// Declared annotation label vocabulary; when present, subject
    /// annotation files are validated against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_labels: Option<Vec<String>>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if let Some(dir) = path.parent() {
            manifest.resolve_paths(dir);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.template);
        for s in &mut self.subjects {
            fix(&mut s.scan);
            fix(&mut s.landmarks);
            if let Some(a) = &mut s.annotations {
                fix(a);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str, p: &Path| {
            Error::InvalidManifest(format!("{what} does not exist: {}", p.display()))
        };
        if !self.template.exists() {
            return Err(missing("template", &self.template));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.id) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate subject id '{}'",
                    s.id
                )));
            }
            if !s.scan.exists() {
                return Err(missing(&format!("scan of '{}'", s.id), &s.scan));
            }
            if !s.landmarks.exists() {
                return Err(missing(&format!("landmarks of '{}'", s.id), &s.landmarks));
            }
            if let Some(a) = &s.annotations {
                if !a.exists() {
                    return Err(missing(&format!("annotations of '{}'", s.id), a));
                }
            }
        }
        Ok(())
    }
}

/// Rigid motions persisted next to each registration so annotations in the
/// original scan frame can be carried into the registered frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidRecord {
    pub final_rigid: RigidMotion,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageRigid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRigid {
    pub stage: String,
    pub rigid: RigidMotion,
}

#[derive(Debug, Clone)]
pub struct SubjectStatus {
    pub id: String,
    pub outcome: std::result::Result<(), String>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    pub statuses: Vec<SubjectStatus>,
}

impl BatchReport {
    pub fn all_ok(&self) -> bool {
        self.statuses.iter().all(|s| s.outcome.is_ok())
    }
}

#[derive(Debug, Clone)]
pub struct RegisterOptions {
    pub solver: Option<SolverKind>,
    pub workers: usize,
    pub save_stage_snapshots: bool,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        RegisterOptions {
            solver: None,
            workers: 1,
            save_stage_snapshots: false,
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}

fn save_ply_atomic(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let tmp = temp_sibling(path);
    save_ply(mesh, &tmp, PlyFormat::BinaryLittleEndian, None)?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::io(format!("renaming into {}", path.display()), e))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn registered_mesh_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}_registered.ply"))
}

pub fn repositioned_data_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}_data.ply"))
}

pub fn trace_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}_trace.jsonl"))
}

pub fn rigid_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}_rigid.json"))
}

pub fn stage_snapshot_path(out_dir: &Path, id: &str, index: usize, stage: &str) -> PathBuf {
    out_dir.join(format!("{id}_stage{:02}_{stage}.ply", index + 1))
}

fn register_subject(
    subject: &SubjectEntry,
    template: &TriangleMesh,
    config: &PipelineConfig,
    out_dir: &Path,
    options: &RegisterOptions,
) -> Result<RegistrationResult> {
    let data = load_mesh(&subject.scan)?;
    let sets_file = load_sets_file(&subject.landmarks)?;
    let sets = resolve_sets(&config.sets, &sets_file, template, &data)?;
    let run_options = RunOptions {
        solver_override: options.solver,
        collect_stage_snapshots: options.save_stage_snapshots,
        collect_iteration_snapshots: false,
    };
    let result = run_pipeline(config, template, &data, &sets, &run_options)?;
    save_ply_atomic(
        &result.template,
        &registered_mesh_path(out_dir, &subject.id),
    )?;
    save_ply_atomic(&result.data, &repositioned_data_path(out_dir, &subject.id))?;
    write_atomic(
        &trace_path(out_dir, &subject.id),
        result.trace.to_jsonl().as_bytes(),
    )?;
    let rigid_record = RigidRecord {
        final_rigid: result.data_rigid.clone(),
        stages: result
            .stage_snapshots
            .iter()
            .map(|s| StageRigid {
                stage: s.stage.clone(),
                rigid: s.data_rigid.clone(),
            })
            .collect(),
    };
    write_atomic(
        &rigid_path(out_dir, &subject.id),
        serde_json::to_string_pretty(&rigid_record)?.as_bytes(),
    )?;
    for (k, snapshot) in result.stage_snapshots.iter().enumerate() {
        save_ply_atomic(
            &snapshot.template,
            &stage_snapshot_path(out_dir, &subject.id, k, &snapshot.stage),
        )?;
    }
    Ok(result)
}

/// Registers every subject of the manifest, writing per subject the
/// registered template, the repositioned data, a trace file and the rigid
/// record. Subject failures are reported without aborting the batch.
pub fn cmd_register(
    manifest: &RunManifest,
    config: &PipelineConfig,
    out_dir: &Path,
    options: &RegisterOptions,
) -> Result<BatchReport> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let template = load_mesh(&manifest.template)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let statuses: Vec<SubjectStatus> = pool.install(|| {
        manifest
            .subjects
            .par_iter()
            .map(|subject| {
                let outcome = register_subject(subject, &template, config, out_dir, options)
                    .map(|_| ())
                    .map_err(|e| e.to_string());
                match &outcome {
                    Ok(()) => log::info!("registered subject '{}'", subject.id),
                    Err(e) => log::error!("subject '{}' failed: {e}", subject.id),
                }
                SubjectStatus {
                    id: subject.id.clone(),
                    outcome,
                }
            })
            .collect()
    });
    Ok(BatchReport { statuses })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub density: f64,
    pub homogeneity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub report: MetricReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_stage: Vec<StageMetrics>,
}

struct SubjectProjection {
    points: Vec<(String, Point3<f64>)>,
    misses: usize,
}

/// Projects one subject's annotations onto its original scan and maps the
/// resulting surface points with the given rigid motion.
fn project_subject(
    subject: &SubjectEntry,
    vocabulary: Option<&[String]>,
    rigid: &RigidMotion,
) -> Result<SubjectProjection> {
    let ann_path = subject
        .annotations
        .as_ref()
        .expect("caller checked annotations");
    let annotations = AnnotationSet::load(ann_path)?;
    if let Some(v) = vocabulary {
        annotations.check_vocabulary(v)?;
    }
    let scan = load_mesh(&subject.scan)?;
    let (projected, misses) = project_annotations(&annotations, &scan)?;
    let points = projected
        .into_iter()
        .map(|p| (p.label, rigid.apply(&p.point)))
        .collect();
    Ok(SubjectProjection { points, misses })
}

/// Computes corpus-level transfer metrics over registered outputs and
/// writes `benchmark_report.json` plus the density colormap PLY.
///
/// Subjects without a registration are skipped with a warning and do not
/// count towards `n_subjects`.
pub fn cmd_benchmark(
    manifest: &RunManifest,
    registered_dir: &Path,
    out_dir: &Path,
    per_stage: bool,
) -> Result<BenchmarkOutput> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let template = load_mesh(&manifest.template)?;
    let annotated: Vec<&SubjectEntry> = manifest
        .subjects
        .iter()
        .filter(|s| s.annotations.is_some())
        .collect();
    if annotated.is_empty() {
        return Err(Error::InvalidManifest(
            "no subject in the manifest has an annotation file".into(),
        ));
    }
    let mut tally = TransferTally::new(template.n_vertices());
    let mut total_misses = 0usize;
    let mut per_stage_tallies: std::collections::BTreeMap<String, TransferTally> =
        Default::default();
    let mut stage_order: Vec<String> = Vec::new();
    for subject in &annotated {
        let registered_path = registered_mesh_path(registered_dir, &subject.id);
        if !registered_path.exists() {
            log::warn!(
                "subject '{}' has no registration at {}; skipped",
                subject.id,
                registered_path.display()
            );
            continue;
        }
        let rigid_record: RigidRecord = {
            let p = rigid_path(registered_dir, &subject.id);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(&p, e.to_string()))?
        };
        let registered = load_mesh(&registered_path)?;
        let projection = project_subject(
            subject,
            manifest.annotation_labels.as_deref(),
            &rigid_record.final_rigid,
        )?;
        total_misses += projection.misses;
        let fragment = transfer_to_template(&projection.points, &registered)?;
        tally.add_fragment(&fragment);
        if per_stage {
            for (k, stage) in rigid_record.stages.iter().enumerate() {
                let snapshot_path =
                    stage_snapshot_path(registered_dir, &subject.id, k, &stage.stage);
                if !snapshot_path.exists() {
                    return Err(Error::InvalidManifest(format!(
                        "per-stage benchmark needs stage snapshots; missing {}",
                        snapshot_path.display()
                    )));
                }
                let stage_mesh = load_mesh(&snapshot_path)?;
                let stage_projection =
                    project_subject(subject, manifest.annotation_labels.as_deref(), &stage.rigid)?;
                let stage_fragment = transfer_to_template(&stage_projection.points, &stage_mesh)?;
                if !per_stage_tallies.contains_key(&stage.stage) {
                    stage_order.push(stage.stage.clone());
                }
                per_stage_tallies
                    .entry(stage.stage.clone())
                    .or_insert_with(|| TransferTally::new(template.n_vertices()))
                    .add_fragment(&stage_fragment);
            }
        }
    }
    if tally.n_subjects == 0 {
        return Err(Error::InvalidManifest(
            "no annotated subject had a registration".into(),
        ));
    }
    let d = density(&tally)?;
    let h = homogeneity(&tally)?;
    let report = MetricReport {
        n_subjects: tally.n_subjects,
        touched_vertices: tally.touched(),
        density: d,
        homogeneity: h.overall,
        per_label: h.per_label,
        ray_misses: total_misses,
    };
    let per_stage_metrics: Vec<StageMetrics> = stage_order
        .iter()
        .map(|stage| {
            let t = &per_stage_tallies[stage];
            Ok(StageMetrics {
                stage: stage.clone(),
                density: density(t)?,
                homogeneity: homogeneity(t)?.overall,
            })
        })
        .collect::<Result<_>>()?;
    let output = BenchmarkOutput {
        report,
        per_stage: per_stage_metrics,
    };
    write_atomic(
        &out_dir.join("benchmark_report.json"),
        serde_json::to_string_pretty(&output)?.as_bytes(),
    )?;
    let colormap = out_dir.join("density_colormap.ply");
    let tmp = temp_sibling(&colormap);
    export_density_colormap(&tally, &template, &ColorRamp::default(), &tmp)?;
    std::fs::rename(&tmp, &colormap)
        .map_err(|e| Error::io(format!("renaming into {}", colormap.display()), e))?;
    Ok(output)
}

/// Per-stage cumulative wall times, one row per solver, averaged over
/// subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub stages: Vec<String>,
    pub rows: Vec<TimingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub solver: SolverKind,
    /// Cumulative seconds to the end of each stage.
    pub cumulative_seconds: Vec<f64>,
}

/// Formats a value with four significant digits for console tables.
pub fn format_sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = x.abs().log10().floor() as i32;
    let decimals = (3 - digits).max(0) as usize;
    format!("{x:.decimals$}")
}

impl std::fmt::Display for TimingTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:<12}", "solver")?;
        for s in &self.stages {
            write!(f, " {s:>18}")?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<12}", row.solver.to_string())?;
            for v in &row.cumulative_seconds {
                write!(f, " {:>18}", format_sig4(*v))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Runs the pipeline once per subject and solver, recording cumulative wall
/// time through the end of each stage.
pub fn cmd_timing(
    manifest: &RunManifest,
    config: &PipelineConfig,
    solvers: &[SolverKind],
) -> Result<TimingTable> {
    if manifest.subjects.is_empty() {
        return Err(Error::InvalidManifest(
            "timing needs at least one subject".into(),
        ));
    }
    let template = load_mesh(&manifest.template)?;
    // wall times must be real regardless of the determinism flag
    let mut config = config.clone();
    config.deterministic = false;
    let stages: Vec<String> = config.resolve()?.iter().map(|s| s.name.clone()).collect();
    let mut rows = Vec::new();
    for &solver in solvers {
        let mut sums = vec![0.0f64; stages.len()];
        for subject in &manifest.subjects {
            let data = load_mesh(&subject.scan)?;
            let sets_file = load_sets_file(&subject.landmarks)?;
            let sets = resolve_sets(&config.sets, &sets_file, &template, &data)?;
            let run_options = RunOptions {
                solver_override: Some(solver),
                ..RunOptions::default()
            };
            let result = run_pipeline(&config, &template, &data, &sets, &run_options)?;
            for (k, (stage, cumulative_ms)) in
                result.trace.cumulative_stage_times().iter().enumerate()
            {
                debug_assert_eq!(stage, &stages[k]);
                sums[k] += cumulative_ms / 1e3;
            }
        }
        let n = manifest.subjects.len() as f64;
        rows.push(TimingRow {
            solver,
            cumulative_seconds: sums.into_iter().map(|s| s / n).collect(),
        });
    }
    Ok(TimingTable { stages, rows })
}
