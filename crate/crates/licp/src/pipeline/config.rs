//! Pipeline configuration: per-stage settings with field inheritance.
//!
//! A configuration file declares the global correspondence-set definitions
//! and an ordered list of stages. Each stage only needs to spell out the
//! fields it changes; everything else is inherited from the previous
//! stage's resolved configuration.

use crate::correspond::SetDefinition;
use crate::deform::StiffnessSchedule;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How non-fixed sets are matched within a stage; fixed-pairing sets always
/// use their predefined bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Only fixed sets may be active.
    FixedOnly,
    Mnn,
    NormalShoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformationModel {
    AffineOneshot,
    AffineIterative,
    LbFree,
    LbFreeRefine,
    Pvac,
}

impl DeformationModel {
    pub fn needs_schedule(self) -> bool {
        matches!(
            self,
            DeformationModel::LbFree | DeformationModel::LbFreeRefine | DeformationModel::Pvac
        )
    }
}

/// A stage as written in a configuration file; unspecified fields inherit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondence_sets: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matching: Option<MatchStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_normal_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deformation: Option<DeformationModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<StiffnessSchedule>,
    /// Stage termination threshold on ||dX||_F^2; when absent the
    /// scale-relative default applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_inner: Option<usize>,
}

impl StageSpec {
    pub fn named(name: impl Into<String>) -> Self {
        StageSpec {
            name: name.into(),
            correspondence_sets: None,
            matching: None,
            metric_normal_weight: None,
            deformation: None,
            schedule: None,
            t_s: None,
            i_max: None,
            max_inner: None,
        }
    }
}

/// A fully resolved stage: every field concrete except `t_s`, whose absence
/// selects the scale-relative default at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub correspondence_sets: Vec<String>,
    pub matching: MatchStrategy,
    pub metric_normal_weight: f64,
    pub deformation: DeformationModel,
    pub schedule: Option<StiffnessSchedule>,
    pub t_s: Option<f64>,
    pub i_max: usize,
    /// Inner operator-refresh iterations for the refining model.
    pub max_inner: usize,
}

pub const DEFAULT_MAX_INNER: usize = 10;

/// Relative factor for the default stage termination threshold:
/// `t_s = DEFAULT_T_S_FACTOR * (template bounding-box diagonal)^2`.
pub const DEFAULT_T_S_FACTOR: f64 = 1e-4;

pub const DEFAULT_PVAC_GAMMA: f64 = 1.0;

fn default_pvac_gamma() -> f64 {
    DEFAULT_PVAC_GAMMA
}

/// The whole registration recipe: set definitions, stages, and solver knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sets: Vec<SetDefinition>,
    pub stages: Vec<StageSpec>,
    /// Zeroes wall-clock fields in traces so repeated runs are bit-identical.
    #[serde(default)]
    pub deterministic: bool,
    /// Translation skew weight of the per-vertex-affine baseline.
    #[serde(default = "default_pvac_gamma")]
    pub pvac_gamma: f64,
}

impl PipelineConfig {
    /// Expands stage inheritance into concrete per-stage configurations and
    /// validates them.
    pub fn resolve(&self) -> Result<Vec<StageConfig>> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("pipeline has no stages".into()));
        }
        let mut resolved: Vec<StageConfig> = Vec::with_capacity(self.stages.len());
        for (k, spec) in self.stages.iter().enumerate() {
            let prev = resolved.last();
            let missing = |field: &str| {
                Error::InvalidConfig(format!(
                    "stage '{}' does not specify {field} and has no previous stage to inherit from",
                    spec.name
                ))
            };
            let stage = StageConfig {
                name: spec.name.clone(),
                correspondence_sets: match (&spec.correspondence_sets, prev) {
                    (Some(s), _) => s.clone(),
                    (None, Some(p)) => p.correspondence_sets.clone(),
                    (None, None) => return Err(missing("correspondence_sets")),
                },
                matching: match (spec.matching, prev) {
                    (Some(m), _) => m,
                    (None, Some(p)) => p.matching,
                    (None, None) => return Err(missing("matching")),
                },
                metric_normal_weight: match (spec.metric_normal_weight, prev) {
                    (Some(w), _) => w,
                    (None, Some(p)) => p.metric_normal_weight,
                    (None, None) => 0.0,
                },
                deformation: match (spec.deformation, prev) {
                    (Some(d), _) => d,
                    (None, Some(p)) => p.deformation,
                    (None, None) => return Err(missing("deformation")),
                },
                schedule: match (spec.schedule, prev) {
                    (Some(s), _) => Some(s),
                    (None, Some(p)) => p.schedule,
                    (None, None) => None,
                },
                t_s: match (spec.t_s, prev) {
                    (Some(t), _) => Some(t),
                    (None, Some(p)) => p.t_s,
                    (None, None) => None,
                },
                i_max: match (spec.i_max, prev) {
                    (Some(i), _) => i,
                    (None, Some(p)) => p.i_max,
                    (None, None) => return Err(missing("i_max")),
                },
                max_inner: match (spec.max_inner, prev) {
                    (Some(i), _) => i,
                    (None, Some(p)) => p.max_inner,
                    (None, None) => DEFAULT_MAX_INNER,
                },
            };
            self.validate_stage(&stage, k)?;
            resolved.push(stage);
        }
        Ok(resolved)
    }

    fn validate_stage(&self, stage: &StageConfig, index: usize) -> Result<()> {
        let fail = |reason: String| {
            Error::InvalidConfig(format!("stage {} '{}': {reason}", index + 1, stage.name))
        };
        if stage.correspondence_sets.is_empty() {
            return Err(fail("no correspondence sets".into()));
        }
        for name in &stage.correspondence_sets {
            if !self.sets.iter().any(|d| &d.name == name) {
                return Err(fail(format!("references undeclared set '{name}'")));
            }
        }
        if stage.i_max == 0 {
            return Err(fail("i_max must be >= 1".into()));
        }
        if stage.deformation == DeformationModel::AffineOneshot && stage.i_max != 1 {
            return Err(fail(format!(
                "affine_oneshot requires i_max = 1, got {}",
                stage.i_max
            )));
        }
        if stage.deformation.needs_schedule() {
            let schedule = stage
                .schedule
                .as_ref()
                .ok_or_else(|| fail("deformation model needs a stiffness schedule".into()))?;
            schedule.validate()?;
            if schedule.steps < stage.i_max {
                return Err(fail(format!(
                    "schedule has {} steps but i_max is {}",
                    schedule.steps, stage.i_max
                )));
            }
        }
        if stage.max_inner == 0 {
            return Err(fail("max_inner must be >= 1".into()));
        }
        if !(stage.metric_normal_weight >= 0.0) {
            return Err(fail("metric_normal_weight must be >= 0".into()));
        }
        if let Some(t) = stage.t_s {
            if !(t > 0.0) {
                return Err(fail(format!("t_s must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
