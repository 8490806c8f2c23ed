use thiserror::Error;

use crate::field::FieldId;

pub type Result<T> = std::result::Result<T, QniError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QniError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("pulse support [{lo_ps:.3}, {hi_ps:.3}] ps exceeds window [{win_lo_ps:.3}, {win_hi_ps:.3}] ps")]
    PulseOutsideWindow {
        lo_ps: f64,
        hi_ps: f64,
        win_lo_ps: f64,
        win_hi_ps: f64,
    },

    #[error("offset {offset_ps} ps is not a whole number of {dt_ps} ps bins")]
    NonIntegerShift { offset_ps: f64, dt_ps: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "trajectory {trajectory} diverged at stage {stage}, step {step}, bin {bin} ({field:?} non-finite)"
    )]
    Divergence {
        trajectory: u64,
        stage: u32,
        step: usize,
        bin: usize,
        field: FieldId,
    },

    #[error("dynamic object amplitude became non-finite at time index {t_index}")]
    ObjectDivergence { t_index: usize },

    #[error("estimator contract violated: {0}")]
    EstimatorContract(String),

    #[error("averaging window of {window} bins exceeds grid of {bins} bins")]
    WindowTooLarge { window: usize, bins: usize },
}

impl QniError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        QniError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad inputs rather than a failed run.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            QniError::Divergence { .. } | QniError::ObjectDivergence { .. }
        )
    }
}
