use serde::{Deserialize, Serialize};

use crate::error::{DekiError, Result};

/// Step sizes `eta_t` for `t = 0, 1, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        h: f64,
    },
    /// `eta_t = 1/(t+1)`.
    Reciprocal,
}

impl StepSchedule {
    pub fn constant(h: f64) -> Result<Self> {
        let s = StepSchedule::Constant { h };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { h } if !(h > 0.0 && h.is_finite()) => {
                Err(DekiError::InvalidArgument(format!(
                    "constant step must be positive and finite, got {h}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { h } => h,
            StepSchedule::Reciprocal => 1.0 / (t as f64 + 1.0),
        }
    }

    pub fn constant_step(&self) -> Option<f64> {
        match *self {
            StepSchedule::Constant { h } => Some(h),
            StepSchedule::Reciprocal => None,
        }
    }
}
