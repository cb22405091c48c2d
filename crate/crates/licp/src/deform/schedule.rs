//! Per-iteration mesh stiffness schedules.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How a schedule moves between its endpoints. Geometric is the only
/// shipped interpolation: typical endpoints span several orders of
/// magnitude, and linear spacing would spend almost every iteration at the
/// stiff end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleInterpolation {
    #[default]
    Geometric,
}

/// Stiffness schedule from `start` down (or up) to `end` over `steps`
/// iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
    #[serde(default)]
    pub interpolation: ScheduleInterpolation,
}

impl StiffnessSchedule {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        let s = StiffnessSchedule {
            start,
            end,
            steps,
            interpolation: ScheduleInterpolation::Geometric,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0) || !(self.end > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "endpoints must be positive, got ({}, {})",
                self.start, self.end
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidSchedule("steps must be >= 1".into()));
        }
        Ok(())
    }

    /// lambda_i = start * (end/start)^(i / (steps-1)); a single step yields
    /// `start`.
    pub fn value_at(&self, i: usize) -> Result<f64> {
        if i >= self.steps {
            return Err(Error::ScheduleIndexOutOfRange {
                index: i,
                steps: self.steps,
            });
        }
        if self.steps == 1 {
            return Ok(self.start);
        }
        let t = i as f64 / (self.steps - 1) as f64;
        match self.interpolation {
            ScheduleInterpolation::Geometric => Ok(self.start * (self.end / self.start).powf(t)),
        }
    }
}

/// Free-function form of [`StiffnessSchedule::value_at`].
pub fn evaluate_schedule(schedule: &StiffnessSchedule, i: usize) -> Result<f64> {
    schedule.value_at(i)
}
