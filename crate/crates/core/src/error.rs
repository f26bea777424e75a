use thiserror::Error;

/// Problems with a grid description or a topology that does not fit it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("inconsistent topology: {0}")]
    InconsistentTopology(String),
    #[error("io: {0}")]
    Io(String),
}

/// Reasons an action is refused by the environment.
#[derive(Debug, Clone, PartialEq, Error, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum IllegalAction {
    #[error("target in cooldown: {0}")]
    Cooldown(String),
    #[error("unknown element: {0}")]
    UnknownElement(String),
    #[error("malformed action: {0}")]
    Malformed(String),
    #[error("line {0} is under attack or maintenance")]
    LineUnavailable(usize),
    #[error("dispatch infeasible: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("chronics: {0}")]
    Chronics(String),
    #[error("episode is already done")]
    EpisodeDone,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("malformed {what}: {msg}")]
    Malformed { what: String, msg: String },
    #[error("feature layout mismatch: checkpoint built for {expected}, grid gives {found}")]
    FeatureMismatch { expected: String, found: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl ArtifactError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ArtifactError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn malformed(what: impl Into<String>, msg: impl ToString) -> Self {
        ArtifactError::Malformed { what: what.into(), msg: msg.to_string() }
    }
}
