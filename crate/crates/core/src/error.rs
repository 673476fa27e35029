//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file could not be decoded.
    #[error("parse error at {origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    /// Input violated a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A loaded artifact (store, fixture file, config) failed schema checks.
    #[error("schema error in {origin}: {message}")]
    Schema { origin: String, message: String },

    /// Configuration is missing or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// The live backend could not be reached after retries.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// Fixture mode had no recorded response for this request.
    /// The digest is what a fixture author needs to record one.
    #[error("fixture miss: no recorded response for request digest {digest}")]
    FixtureMiss { digest: String },

    /// The backend answered, but not in the shape the protocol promises
    /// (wrong vector count, zero vector, missing fields, ...).
    #[error("backend protocol error: {0}")]
    BackendProtocol(String),

    /// A model response yielded no extractable memory items.
    #[error("extraction format error: no list items found in response: {raw:?}")]
    ExtractionFormat { raw: String },

    /// A verification-stage model response could not be decoded.
    #[error("verification format error: {0}")]
    VerificationFormat(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable tag, used by the HTTP error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Schema { .. } => "schema",
            Error::Config(_) => "config",
            Error::BackendUnavailable(_) => "backend_unavailable",
            Error::FixtureMiss { .. } => "fixture_miss",
            Error::BackendProtocol(_) => "backend_protocol",
            Error::ExtractionFormat { .. } => "extraction_format",
            Error::VerificationFormat(_) => "verification_format",
            Error::Io { .. } => "io",
        }
    }
}
