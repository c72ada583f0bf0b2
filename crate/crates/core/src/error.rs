use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e} px)")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("root chain failed at level {level}: {source}")]
    ChainLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("registration diverged at level {level}, iteration {iteration}")]
    Divergence { level: usize, iteration: usize },

    #[error("rank deficient population: requested {requested} components, achieved rank {achieved}")]
    Rank { requested: usize, achieved: usize },

    #[error("atlas step failed on image {index}: {source}")]
    AtlasImage {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

impl Error {
    /// True for failures of the numerics (solver non-convergence, divergence, rank loss)
    /// as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Convergence { .. } | Error::Divergence { .. } | Error::Rank { .. } => true,
            Error::ChainLevel { source, .. } | Error::AtlasImage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedChannels(_)
            | Error::TruncatedPayload { .. }
            | Error::NonFinite(_) => true,
            Error::AtlasImage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
