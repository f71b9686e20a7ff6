use std::path::PathBuf;

use thiserror::Error;

use crate::allocation::AllocationError;
use crate::compensation::HessianError;
use crate::packing::PackError;
use crate::quantizer::QuantError;
use crate::scoring::ScoringError;
use crate::tensorio::TensorIoError;

/// Whether a failure came from bad input or from the numerics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
    #[error("allocation: {0}")]
    Allocation(#[from] AllocationError),
    #[error("layer '{layer}': scoring: {source}")]
    Scoring {
        layer: String,
        #[source]
        source: ScoringError,
    },
    #[error("layer '{layer}': Hessian: {source}")]
    Hessian {
        layer: String,
        #[source]
        source: HessianError,
    },
    #[error("layer '{layer}', block {block}: {source}")]
    Quant {
        layer: String,
        block: usize,
        #[source]
        source: QuantError,
    },
    #[error("layer '{layer}': packing: {source}")]
    Pack {
        layer: String,
        #[source]
        source: PackError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Allocation(AllocationError::AllZeroModel | AllocationError::InfeasibleBudget { .. }) => {
                ErrorKind::Numerical
            }
            Error::Hessian { source: HessianError::NotPositiveDefinite { .. }, .. } => ErrorKind::Numerical,
            Error::Quant {
                source: QuantError::DegenerateHessian { .. } | QuantError::NoFeasibleCandidate { .. },
                ..
            } => ErrorKind::Numerical,
            Error::Scoring { source: ScoringError::DegenerateAxis { .. }, .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
