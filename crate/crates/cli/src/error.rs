use thiserror::Error;

use llmar::dataset::DataError;
use llmar::evaluation::EvalError;
use llmar::statistics::StatsError;
use llmar::training::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Provider(_) => 4,
            CliError::Internal(_) => 70,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Provider(_) => "provider",
            CliError::Internal(_) => "internal",
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Generator(_) | DataError::UnreachablePrevalence(_) | DataError::FoldCount(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Parameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::NoIterations => CliError::Config(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Stats(s) => s.into(),
            TrainError::Provider { .. } => CliError::Provider(e.to_string()),
            TrainError::Eval(inner) => (*inner).into(),
            TrainError::NotCheckpoint { .. } | TrainError::Io(_) | TrainError::Json(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Grid(_) | EvalError::Beta(_) => CliError::Config(e.to_string()),
            EvalError::Training { partition, source } => match CliError::from(*source) {
                CliError::Config(m) => CliError::Config(format!("partition {partition}: {m}")),
                CliError::Data(m) => CliError::Data(format!("partition {partition}: {m}")),
                CliError::Provider(m) => CliError::Provider(format!("partition {partition}: {m}")),
                CliError::Internal(m) => CliError::Internal(format!("partition {partition}: {m}")),
            },
            EvalError::Data(d) => d.into(),
            EvalError::EmptyRecords | EvalError::Inference(_) => CliError::Data(e.to_string()),
            EvalError::Leakage { .. } | EvalError::Io(_) | EvalError::Json(_) => CliError::Internal(e.to_string()),
        }
    }
}
