use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stratalloc::Error),

    #[error("{path}: {source}")]
    Design { path: String, source: stratalloc::Error },

    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },

    #[error("{path}: {source}")]
    Config { path: String, source: toml::de::Error },

    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },

    #[error("{0}")]
    Invalid(String),

    #[error("{0} of {1} models did not converge")]
    NonConvergence(usize, usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NonConvergence(..) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
