use std::io;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: String, reason: String },

    #[error("state is terminal")]
    TerminalState,

    #[error("non-projective tree, crossing arcs: {0}")]
    NonProjective(String),

    #[error("invalid gold structure: {0}")]
    InvalidGold(String),

    #[error("gold structure unreachable from state: {0}")]
    Unreachable(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    Format(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
