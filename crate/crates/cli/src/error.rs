use thiserror::Error;

use tailrank::corpus::CorpusError;
use tailrank::dbn::DbnError;
use tailrank::eval::EvalError;
use tailrank::features::TableError;
use tailrank::gbrank::GbrankError;
use tailrank::ranking::RankingError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TableError> for PipelineError {
    fn from(e: TableError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<DbnError> for PipelineError {
    fn from(e: DbnError) -> Self {
        match e {
            DbnError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            DbnError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<GbrankError> for PipelineError {
    fn from(e: GbrankError) -> Self {
        match e {
            GbrankError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            GbrankError::NonFinite(_) => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<RankingError> for PipelineError {
    fn from(e: RankingError) -> Self {
        match e {
            RankingError::Dbn(d) => d.into(),
            RankingError::Model(m) => m.into(),
            RankingError::InvalidLambda(_) | RankingError::InvalidRate(_) => PipelineError::Config(e.to_string()),
            RankingError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::OutOfRange { .. } => PipelineError::Numeric(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}
