//! Core data model: domain types, dataset partitions, canonical
//! serialization, and the run manifest.

use std::path::Path;

use thiserror::Error;

pub mod canonical;
pub mod manifest;
pub mod partition;
pub mod types;
pub mod validate;

pub use canonical::{
    canonical_json, canonicalize_str, digest_bytes, digest_jsonl_file, digest_lines, read_jsonl,
    write_jsonl, SchemaHeader, SCHEMA_VERSION,
};
pub use manifest::{
    AblationFlags, FailureRecord, PipelineManifest, Stage, TrainerHyperparams,
};
pub use partition::{
    require_valid, validate_partition, ClickRecord, PairSource, Partition, PartitionName,
    PartitionRecord, PseudoRecord, QaPair, SftPair,
};
pub use types::{
    ClickLabel, DialogueContext, DimensionScores, Intent, JudgeVerdict, RewardBreakdown,
    RolloutGroup, ScoredRollout, Speaker, SuggestionSet, Turn, UncertaintyRecord,
    CANDIDATE_TOKEN_LIMIT,
};
pub use validate::{all_clear, Finding, Severity};

/// Errors from serialization, file IO, and partition validation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad record in {path} line {line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("partition {name} failed validation: {details}")]
    InvalidPartition { name: String, details: String },

    #[error("digest mismatch for {key}: pinned {pinned}, observed {observed}")]
    DigestMismatch { key: String, pinned: String, observed: String },

    #[error("stage regression: {from} -> {to}")]
    StageRegression { from: String, to: String },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io { path: path.display().to_string(), source }
    }
}
