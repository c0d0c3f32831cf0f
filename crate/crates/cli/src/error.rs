use tailcalib::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(Error::Json(e))
    }
}

impl CliError {
    /// 1 for I/O, 2 for bad input or configuration, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Lib(Error::Io(_)) => 1,
            CliError::Lib(Error::Numerical(_)) => 3,
            CliError::Usage(_) | CliError::Lib(_) => 2,
        }
    }
}
