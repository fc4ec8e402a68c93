use thiserror::Error;

use crate::association::AssociationError;
use crate::cda::CdaError;
use crate::corpus_io::LoadError;
use crate::likelihood::LikelihoodError;
use crate::projection::ProjectionError;
use crate::report::ReportError;
use crate::selfdebias::SelfDebiasError;
use crate::stats::StatsError;

/// Any failure surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Cda(#[from] CdaError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    SelfDebias(#[from] SelfDebiasError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Usage(String),
}

/// Disjoint failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input files or invalid configuration.
    Schema,
    /// Inputs were well formed but a metric could not be computed.
    Precondition,
    /// A comparison found nothing to compare.
    Comparison,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Schema => 2,
            ErrorClass::Precondition => 3,
            ErrorClass::Comparison => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Load(_) | Error::Usage(_) => ErrorClass::Schema,
            Error::Cda(
                CdaError::InvalidLexicon { .. }
                | CdaError::ModeMismatch { .. }
                | CdaError::MissingSeed,
            ) => ErrorClass::Schema,
            Error::SelfDebias(SelfDebiasError::BadLambda(_) | SelfDebiasError::MissingSlot(_)) => {
                ErrorClass::Schema
            }
            Error::Projection(ProjectionError::BadAlpha(_) | ProjectionError::InvalidModel(_)) => {
                ErrorClass::Schema
            }
            Error::Report(ReportError::NoMatches { .. }) => ErrorClass::Comparison,
            Error::Report(_) => ErrorClass::Schema,
            _ => ErrorClass::Precondition,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}
