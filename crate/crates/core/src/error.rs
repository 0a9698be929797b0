use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SipmError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation bound n_max={n_max} leaves tail mass {tail:e} (limit {limit:e})")]
    TruncationTooShort { n_max: usize, tail: f64, limit: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("event at {time} ns lies outside the trace window [0, {window}) ns")]
    EventOutsideWindow { time: f64, window: f64 },

    #[error("gate [{start}, {end}) ns lies outside the trace window [0, {window}) ns")]
    GateOutsideWindow { start: f64, end: f64, window: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("found {found} peak(s) in the spectrum, at least 2 are required")]
    TooFewPeaks { found: usize },

    #[error("no 1-photon peak found near {expected}")]
    MissingOnePhotonPeak { expected: f64 },

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("fitted `{name}` = {value} is outside its domain ({domain})")]
    OutOfDomain { name: &'static str, value: f64, domain: &'static str },

    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for SipmError {
    fn from(e: std::io::Error) -> Self {
        SipmError::Io(e.to_string())
    }
}

impl From<csv::Error> for SipmError {
    fn from(e: csv::Error) -> Self {
        SipmError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SipmError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> SipmError {
    SipmError::InvalidParameter { name, reason: reason.into() }
}

pub(crate) fn check_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {v}")))
    }
}
