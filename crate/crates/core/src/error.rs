use std::io;

use thiserror::Error;

/// Errors raised anywhere in the retrieval pipeline.
///
/// Variants are grouped by the stage that produced them so the CLI can
/// report a category alongside the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("record {line}: {message}")]
    Record { line: usize, message: String },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("index: {0}")]
    Index(String),

    #[error("identifiers: {0}")]
    Identifier(String),

    #[error("prompts: {0}")]
    Prompt(String),

    #[error("model: {0}")]
    Model(String),

    #[error("decoder: {0}")]
    Decode(String),

    #[error("scoring: {0}")]
    Scoring(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Short category label used for CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Record { .. } => "record",
            Error::Corpus(_) => "corpus",
            Error::Index(_) => "index",
            Error::Identifier(_) => "identifiers",
            Error::Prompt(_) => "prompts",
            Error::Model(_) => "model",
            Error::Decode(_) => "decoder",
            Error::Scoring(_) => "scoring",
            Error::Eval(_) => "evaluation",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
