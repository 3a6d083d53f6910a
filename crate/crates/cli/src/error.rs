use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("configuration error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Core(#[from] sgflux_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for anything the user can fix in the configuration, 2 for failures
    /// while solving or writing results.
    pub fn exit_code(&self) -> i32 {
        use sgflux_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Toml(_) => 1,
            CliError::Core(E::InvalidArgument(_) | E::InvalidConfiguration(_)) => 1,
            CliError::Core(_) | CliError::Io { .. } => 2,
        }
    }
}

pub fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}
