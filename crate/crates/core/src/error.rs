use thiserror::Error;

pub type Result<T> = std::result::Result<T, EqualizerError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EqualizerError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("converter index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("converter {index} is not idle")]
    NotIdle { index: usize },

    #[error("assignment needs at least one discharging and one charging converter")]
    InactiveAssignment,

    #[error("sensor fault on cell {index}: {voltage} V outside [{lo}, {hi}] V")]
    SensorFault {
        index: usize,
        voltage: f64,
        lo: f64,
        hi: f64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no discharging power; efficiency is undefined")]
    NoInputPower,
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(EqualizerError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(EqualizerError::InvalidParameter {
            name,
            reason: format!("must be non-negative and finite, got {value}"),
        })
    }
}
