//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GlotError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("empty sentence: graph construction requires at least one valid token")]
    EmptySentence,

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("degenerate contrastive batch: need at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("token id {id} out of vocabulary (size {vocab})")]
    OutOfVocab { id: u32, vocab: usize },

    #[error("planted geometry infeasible: {0}")]
    InfeasibleGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("unknown metric {0:?}")]
    UnknownMetric(String),

    #[error("spearman undefined: gold scores are constant")]
    ConstantGold,

    #[error("bad cache magic: expected \"GEC1\"")]
    BadMagic,

    #[error("unsupported cache version {0}")]
    BadVersion(u32),

    #[error("cache checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("truncated cache payload: {0}")]
    TruncatedPayload(String),

    #[error("dataset schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GlotError>;
