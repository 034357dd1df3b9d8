use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter failed validation. `key` names the offending field.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    #[error("unknown internal label `{0}`")]
    UnknownLabel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("time {t} lies outside the schedule window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("effective two-level reduction is singular: {0} detuning is zero")]
    SingularDetuning(&'static str),

    #[error("step size underflow at t = {t} (h = {h:e}); last accepted time {last_good}")]
    StepUnderflow { t: f64, h: f64, last_good: f64 },

    #[error("trace drifted to {trace} at t = {t}")]
    TraceDrift { t: f64, trace: f64 },

    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),

    /// A configuration file could not be parsed or failed validation.
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
}

impl Error {
    /// True for failures of the numerical integration itself, as opposed to
    /// rejected input.
    pub fn is_integration_failure(&self) -> bool {
        matches!(self, Error::StepUnderflow { .. } | Error::TraceDrift { .. })
    }

    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { key: key.into(), reason: reason.into() }
    }
}
