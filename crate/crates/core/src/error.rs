use std::fmt;

use thiserror::Error;

/// Which admissibility condition a transform target violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetCondition {
    /// `B` must be Hermitian.
    Hermitian,
    /// `B` must be positive semidefinite.
    PositiveSemidefinite,
    /// `rank B` must equal the multiplicity of the targeted eigenvalue.
    Rank,
    /// The range of `B` must meet the forbidden subspace only in zero.
    Transversality,
}

impl fmt::Display for TargetCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TargetCondition::Hermitian => "B = B*",
            TargetCondition::PositiveSemidefinite => "B >= 0",
            TargetCondition::Rank => "rank B = k_alpha",
            TargetCondition::Transversality => "E(B) intersect F_alpha = {0}",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("x = {x} lies outside [0, 1]")]
    Domain { x: f64 },

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("no eigenvalue near {guess}: best sigma_min/sigma_max = {ratio:.3e}")]
    NotAnEigenvalue { guess: f64, ratio: f64 },

    #[error("spectrum incomplete: refinement failed for clusters near {failed:?}")]
    PartialSpectrum { failed: Vec<f64> },

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("m(lambda) is singular at lambda = {lambda} (nearest eigenvalue {nearest:?})")]
    NearPole { lambda: String, nearest: Option<f64> },

    #[error("contour geometry: {0}")]
    Geometry(String),

    #[error("invalid norming operator: {0}")]
    InvalidNorming(String),

    #[error("rejected transform target, condition `{condition}` fails: {detail}")]
    RejectedTarget {
        condition: TargetCondition,
        detail: String,
    },

    #[error("I + S_alpha(x) A is near-singular at x = {x} (rcond {rcond:.3e})")]
    NumericalConditioning { x: f64, rcond: f64 },

    #[error("transform stage {index} failed: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Innermost error, looking through composition stages.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
