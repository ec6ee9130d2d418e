use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::engine::EngineError;
use crate::estimation::EstimationError;
use crate::fixedpoint::FixedPointError;
use crate::graph::GraphError;
use crate::he::HeError;
use crate::reset::ResetError;

/// Crate-level error; each module has its own enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Reset(#[from] ResetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("fixture mismatch: {0}")]
    FixtureMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
