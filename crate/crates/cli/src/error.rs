use std::fmt;
use std::path::PathBuf;

/// Everything a command can fail with, sorted into the exit-code taxonomy.
#[derive(Debug)]
pub enum CliError {
    /// A library error, optionally tagged with the file it came from.
    Core {
        context: Option<PathBuf>,
        source: diffeo::Error,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed text input such as a code CSV.
    Parse {
        path: PathBuf,
        message: String,
    },
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Parse { .. } => 2,
            CliError::Core { source, .. } if source.is_io() => 2,
            CliError::Core { source, .. } if source.is_numerical() => 3,
            CliError::Core { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core {
                context: Some(path),
                source,
            } => write!(f, "{}: {source}", path.display()),
            CliError::Core { context: None, source } => write!(f, "{source}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Parse { path, message } => write!(f, "{}: {message}", path.display()),
            CliError::Usage(message) => f.write_str(message),
        }
    }
}

impl From<diffeo::Error> for CliError {
    fn from(source: diffeo::Error) -> Self {
        CliError::Core { context: None, source }
    }
}

/// Attach a path to library errors raised while reading or writing it.
pub trait WithPath<T> {
    fn at(self, path: &std::path::Path) -> Result<T, CliError>;
}

impl<T> WithPath<T> for diffeo::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: Some(path.to_path_buf()),
            source,
        })
    }
}
