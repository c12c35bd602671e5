use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state is not normalized: norm² = {0}")]
    NotNormalized(f64),

    #[error("non-physical density matrix: {0}")]
    NonPhysical(String),

    #[error("correlation {0} outside [-1, 1]")]
    CorrelationOutOfRange(f64),

    #[error("invalid qubit index {0} (expected 0 = atom or 1 = photon)")]
    InvalidQubit(usize),

    #[error("empty tally: no events to estimate from")]
    EmptyTally,

    #[error("tally role mismatch: {0}")]
    RoleMismatch(&'static str),

    #[error("simulation stalled: {0}")]
    Stalled(String),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(name, format!("{p} is not a probability in [0, 1]")))
    }
}
