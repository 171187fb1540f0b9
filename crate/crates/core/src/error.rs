use std::path::PathBuf;

use thiserror::Error;

use crate::market::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed instance file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid market instance:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite residual at component {index} ({name})")]
    NonFinite { index: usize, name: String },

    #[error("design mismatch: operation needs {expected}, instance is {found}")]
    DesignMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("unknown identifier: {0}")]
    Unknown(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}
