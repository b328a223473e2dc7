use std::path::Path;

use spikesearch::ann::AnnError;
use spikesearch::convert::ConvertError;
use spikesearch::dataset::DatasetError;
use spikesearch::format::FormatError;
use spikesearch::mapper::DeploymentError;
use spikesearch::retrieval::RetrievalError;
use spikesearch::snn::SimError;
use spikesearch::sweep::SweepError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("deployment infeasible: {0}")]
    Deployment(DeploymentError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 data, 4 deployment, 5 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Deployment(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Io { .. } => 1,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            CliError::Stage { .. } => self,
            other => CliError::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AnnError> for CliError {
    fn from(e: AnnError) -> Self {
        match e {
            AnnError::Divergence { .. } => CliError::Numeric(e.to_string()),
            AnnError::Config(reason) => CliError::config("train", reason),
            AnnError::Arch(a) => CliError::config("arch", a.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ConvertError> for CliError {
    fn from(e: ConvertError) -> Self {
        match e {
            ConvertError::InvalidBits(_) => CliError::config("convert", e.to_string()),
            ConvertError::NonFiniteParam { .. } | ConvertError::DegenerateLayer { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::PotentialOverflow { .. } => CliError::Numeric(e.to_string()),
            SimError::ShapeMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::config("sim", other.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::ZeroK => CliError::config("search.ks", e.to_string()),
            RetrievalError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Sim(s) => s.into(),
            SweepError::Retrieval(r) => r.into(),
            SweepError::NoSteps => CliError::config("sweep.steps", e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DeploymentError> for CliError {
    fn from(e: DeploymentError) -> Self {
        match e {
            DeploymentError::InvalidChip(reason) => CliError::config("chip", reason),
            other => CliError::Deployment(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}
