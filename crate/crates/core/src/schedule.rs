//! Step-size schedules.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("constant step size must be nonnegative, got {0}")]
    NegativeConstant(f64),
    #[error("custom schedule must be nonempty and nonnegative")]
    InvalidCustom,
    #[error("unknown schedule {0:?} (expected \"sqrt\" or \"const:<c>\")")]
    Unknown(String),
}

/// A nonnegative step-size sequence `alpha(t)`.
///
/// The default `1 / sqrt(t + 1)` is nonincreasing and converges to zero,
/// which is what the consensus argument needs; it also gives the
/// `log T / sqrt(T)` convergence rate for the ergodic averages.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    /// `alpha(t) = 1 / sqrt(t + 1)`.
    SqrtDefault,
    /// `alpha(t) = c` with `c >= 0`.
    Constant(f64),
    /// Explicit series; the final value repeats past the end.
    Custom(Vec<f64>),
}

impl StepSchedule {
    pub fn constant(c: f64) -> Result<Self, ScheduleError> {
        if c < 0.0 || !c.is_finite() {
            return Err(ScheduleError::NegativeConstant(c));
        }
        Ok(StepSchedule::Constant(c))
    }

    pub fn custom(values: Vec<f64>) -> Result<Self, ScheduleError> {
        if values.is_empty() || values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(ScheduleError::InvalidCustom);
        }
        Ok(StepSchedule::Custom(values))
    }

    /// `alpha(t)`.
    pub fn step_size(&self, t: usize) -> f64 {
        match self {
            StepSchedule::SqrtDefault => 1.0 / ((t + 1) as f64).sqrt(),
            StepSchedule::Constant(c) => *c,
            StepSchedule::Custom(values) => values[t.min(values.len() - 1)],
        }
    }

    /// Parses `"sqrt"` or `"const:<c>"`.
    pub fn parse(text: &str) -> Result<Self, ScheduleError> {
        if text == "sqrt" {
            return Ok(StepSchedule::SqrtDefault);
        }
        if let Some(c) = text.strip_prefix("const:") {
            let c: f64 = c
                .parse()
                .map_err(|_| ScheduleError::Unknown(text.to_string()))?;
            return StepSchedule::constant(c);
        }
        Err(ScheduleError::Unknown(text.to_string()))
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::SqrtDefault => write!(f, "sqrt"),
            StepSchedule::Constant(c) => write!(f, "const:{c}"),
            StepSchedule::Custom(values) => write!(f, "custom[{}]", values.len()),
        }
    }
}
