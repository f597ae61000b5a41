use std::path::PathBuf;

/// Failure classes of the file layer and the pipeline. Each class maps to
/// its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
    #[error("{path}: malformed: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: shape mismatch: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },
    #[error("{path}: non-finite value at index {index}")]
    NonFinite { path: PathBuf, index: usize },
    #[error(transparent)]
    Core(#[from] augrec_core::Error),
    #[error("acceptance violated: {0}")]
    Acceptance(String),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                AppError::MissingArtifact(path)
            } else {
                AppError::Io { path, source }
            }
        }
    }

    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            AppError::Io { .. } => "io",
            AppError::Config(_) => "config",
            AppError::MissingArtifact(_) => "missing-artifact",
            AppError::Incompatible(_) | AppError::Core(augrec_core::Error::Incompatible(_)) => "incompatible",
            AppError::Malformed { .. } | AppError::ShapeMismatch { .. } | AppError::NonFinite { .. } => "data",
            AppError::Core(augrec_core::Error::Contract(_)) => "config",
            AppError::Core(_) => "data",
            AppError::Acceptance(_) => "acceptance",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class() {
            "config" => 3,
            "missing-artifact" => 4,
            "incompatible" => 5,
            "data" => 6,
            "io" => 7,
            _ => 8,
        }
    }
}
