use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },

    #[error("cannot read report {path}: {message}")]
    ReportUnreadable { path: String, message: String },

    #[error("{context}: {source}")]
    Module {
        context: String,
        #[source]
        source: randmaps::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Attach a short description of the failing step to a library error.
pub trait Context<T> {
    fn context(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for randmaps::Result<T> {
    fn context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Module {
            context: what.to_string(),
            source,
        })
    }
}
