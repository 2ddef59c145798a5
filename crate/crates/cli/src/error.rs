use hrtf_core::baselines::BaselineError;
use hrtf_core::dataio::DataError;
use hrtf_core::kv::KvError;
use hrtf_core::metrics::MetricsError;
use hrtf_core::model::ModelError;
use hrtf_core::nn::checkpoint::CheckpointError;
use hrtf_core::nn::NnError;
use hrtf_core::training::TrainError;
use hrtf_core::types::TypeError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config contents.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent data and artifacts.
    #[error("{0}")]
    Data(String),
    /// A NaN or infinity aborted training.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TypeError> for CliError {
    fn from(e: TypeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Nn(NnError::NonFinite(_) | NnError::NonFiniteGrad(_)) => CliError::Numerical(e.to_string()),
            ModelError::Config(_) | ModelError::Invalid(_) | ModelError::ParamMismatch(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::UnknownMethod(_) | BaselineError::InvalidParameter(_) | BaselineError::RankDeficient { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            TrainError::Config(k) => k.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Baseline(b) => b.into(),
            TrainError::Invalid(_) | TrainError::EmptySplit(_) | TrainError::Overlap(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub fn io_error(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}
