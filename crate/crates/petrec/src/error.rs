use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("refusing to overwrite {0}; pass --force to replace it")]
    Overwrite(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 config or overwrite refusal, 3 missing prerequisite, 4 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Overwrite(_) => 2,
            Self::Missing(_) => 3,
            Self::Runtime(_) => 4,
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("io: {e}"))
    }
}

impl From<petrec_core::Error> for PipelineError {
    fn from(e: petrec_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<petrec_models::ModelError> for PipelineError {
    fn from(e: petrec_models::ModelError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(format!("json: {e}"))
    }
}
