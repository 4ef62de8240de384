//! Error type shared across the crate.

/// Errors surfaced by network construction, simulation, and checking.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or matrix argument had the wrong length.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A network spec violated a structural rule.
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    /// A config value was out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An activation or loss left the finite range during an episode.
    #[error("non-finite {quantity} at step {step}")]
    NonFinite { quantity: &'static str, step: usize },

    /// A training run produced a non-finite value; episode index attached.
    #[error("run diverged at episode {episode}: {source}")]
    Diverged {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    /// The gradient-check suite was asked to run zero instances.
    #[error("empty suite: gradient check needs at least one instance")]
    EmptySuite,

    /// A parameter id pointed outside the network.
    #[error("parameter id out of range: {0}")]
    BadParamId(String),

    /// Reading or writing an artifact failed. The cause is the error
    /// source, not part of the message, so chain-walking printers show it
    /// exactly once.
    #[error("io error at {path}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An artifact file did not parse; the message carries the location.
    #[error("malformed file {path}: {message}")]
    Parse {
        path: std::path::PathBuf,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
