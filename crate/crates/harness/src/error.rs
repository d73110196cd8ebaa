use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] coe_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("missing image for document {0}")]
    MissingImage(String),
    #[error("question {0} not found")]
    MissingQuestion(String),
    #[error("navigation timed out: {0}")]
    NavigationTimeout(String),
    #[error("capture failed: {0}")]
    CaptureFailed(String),
    #[error("page script failed: {0}")]
    ScriptFailure(String),
    #[error("webdriver: {0}")]
    WebDriver(String),
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("image {path}: {message}")]
    Image { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code. Model misbehavior never reaches here; only
    /// infrastructure and input problems do.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::ConfigInvalid(_) | Self::MissingQuestion(_) | Self::Core(coe_core::Error::Config(_)) => 2,
            Self::EndpointUnreachable(_) | Self::AuthFailure(_) => 3,
            Self::NavigationTimeout(_) | Self::CaptureFailed(_) | Self::ScriptFailure(_) | Self::WebDriver(_) => 4,
            _ => 1,
        }
    }
}
