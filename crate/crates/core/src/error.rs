use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum BoneError {
    /// A matrix or scalar left the domain where the requested operation is defined
    /// (non-PSD covariance, singular innovation covariance, NaN weight).
    #[error("numeric domain error in {what}: {detail}")]
    NumericDomain { what: &'static str, detail: String },

    /// A caller broke a precondition (dimension mismatch, empty input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Missing or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("operation `{op}` is not supported for the {family} family")]
    UnsupportedFamily { op: &'static str, family: &'static str },

    #[error("hypothesis {index}: {source}")]
    Hypothesis {
        index: usize,
        #[source]
        source: Box<BoneError>,
    },

    #[error("trial {trial}, step {step}: {source}")]
    Step {
        trial: usize,
        step: usize,
        #[source]
        source: Box<BoneError>,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl BoneError {
    pub(crate) fn numeric(what: &'static str, detail: impl Into<String>) -> Self {
        Self::NumericDomain {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn at_hypothesis(self, index: usize) -> Self {
        Self::Hypothesis {
            index,
            source: Box::new(self),
        }
    }

    /// Strips `Hypothesis`/`Step` wrappers and returns the underlying cause.
    pub fn root(&self) -> &BoneError {
        match self {
            Self::Hypothesis { source, .. } | Self::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Self::Config(_))
    }

    /// True when the root cause is numeric (domain error or unsupported operation on the data).
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Self::NumericDomain { .. })
    }
}

pub type Result<T, E = BoneError> = std::result::Result<T, E>;
