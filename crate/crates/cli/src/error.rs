use std::path::PathBuf;

use onto_decode::annotator::LexiconError;
use onto_decode::lm::LmError;
use onto_decode::metrics::MetricsError;
use onto_decode::ontology::OntologyError;
use onto_decode::pipeline::PipelineError;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("unknown domain {label:?}; known domains: {}", known.join(", "))]
    UnknownDomain { label: String, known: Vec<String> },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::UnknownDomain { .. } => "unknown_domain",
            CliError::Ontology(_) => "ontology",
            CliError::Lexicon(_) => "lexicon",
            CliError::Lm(_) => "lm",
            CliError::Pipeline(_) => "pipeline",
            CliError::Metrics(_) => "metrics",
        }
    }

    /// 2 for problems with the invocation itself, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::UnknownDomain { .. } => 2,
            _ => 1,
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> Value {
        let mut body = json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        match self {
            CliError::UnknownDomain { known, .. } => {
                body["known_domains"] = json!(known);
            }
            CliError::Pipeline(PipelineError::PartialCsr {
                note_id,
                class_id,
                completed,
                ..
            }) => {
                body["note_id"] = json!(note_id);
                body["class_id"] = json!(class_id);
                body["completed_entries"] = json!(completed.entries.len());
            }
            CliError::Io { path, .. } | CliError::Parse { path, .. } => {
                body["path"] = json!(path);
            }
            _ => {}
        }
        json!({ "error": body })
    }
}
