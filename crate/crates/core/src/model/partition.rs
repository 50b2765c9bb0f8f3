//! Dataset partitions and the records they carry.
//!
//! A [`Partition`] is a named, ordered collection of records of one type.
//! The pipeline moves data between partitions (clicked, unclicked, pseudo,
//! hard, test) and derives training mixes from them; every move is
//! re-validated with [`validate_partition`].

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::canonical::{digest_lines, read_jsonl, write_jsonl};
use super::types::{ClickLabel, DialogueContext, SuggestionSet, UncertaintyRecord};
use super::validate::{all_clear, Finding};
use super::ModelError;

/// The named partitions the pipeline knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionName {
    /// Exposed suggestions the user clicked.
    Click,
    /// Exposed suggestions the user did not click.
    Unclick,
    /// Model-labeled data generated from the unclicked pool.
    Pseudo,
    /// High-uncertainty subset selected from the pseudo partition.
    Hard,
    /// Held-out evaluation queries.
    Test,
    /// Interleaved domain + general supervised pairs.
    SftMix,
}

impl PartitionName {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionName::Click => "click",
            PartitionName::Unclick => "unclick",
            PartitionName::Pseudo => "pseudo",
            PartitionName::Hard => "hard",
            PartitionName::Test => "test",
            PartitionName::SftMix => "sft_mix",
        }
    }
}

/// Behavior every partition record must provide: a stable identifier and
/// per-record validation in the context of the partition it sits in.
pub trait PartitionRecord {
    fn record_id(&self) -> &str;
    fn findings(&self, partition: PartitionName) -> Vec<Finding>;
}

/// A named, ordered set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition<T> {
    pub name: PartitionName,
    pub records: Vec<T>,
}

impl<T: PartitionRecord> Partition<T> {
    pub fn new(name: PartitionName, records: Vec<T>) -> Self {
        Partition { name, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Digest over the canonical serialization of each record, in order.
    pub fn digest(&self) -> Result<String, ModelError>
    where
        T: Serialize,
    {
        let lines = self
            .records
            .iter()
            .map(super::canonical::canonical_json)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(digest_lines(&lines))
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError>
    where
        T: Serialize,
    {
        write_jsonl(path, &self.records)
    }

    pub fn read(name: PartitionName, path: &Path) -> Result<Self, ModelError>
    where
        T: DeserializeOwned,
    {
        Ok(Partition { name, records: read_jsonl(path)? })
    }
}

/// Validate a partition: record-level checks plus cross-record uniqueness.
///
/// Returns all findings; callers that need a hard gate pair this with
/// [`all_clear`].
pub fn validate_partition<T: PartitionRecord>(partition: &Partition<T>) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut seen = BTreeSet::new();
    for record in &partition.records {
        let id = record.record_id();
        if !seen.insert(id.to_owned()) {
            findings.push(Finding::error(Some(id), "duplicate record_id in partition"));
        }
        findings.extend(record.findings(partition.name));
    }
    findings
}

/// Validate and return an error listing if any finding is error-severity.
pub fn require_valid<T: PartitionRecord>(partition: &Partition<T>) -> Result<Vec<Finding>, ModelError> {
    let findings = validate_partition(partition);
    if all_clear(&findings) {
        Ok(findings)
    } else {
        let errors: Vec<String> = findings
            .iter()
            .filter(|f| f.is_error())
            .map(|f| match &f.record_id {
                Some(id) => format!("{id}: {}", f.message),
                None => f.message.clone(),
            })
            .collect();
        Err(ModelError::InvalidPartition {
            name: partition.name.as_str().to_owned(),
            details: errors.join("; "),
        })
    }
}

/// A context with the exposed suggestions that drew (or failed to draw)
/// a click. Lives in the click and unclick partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    #[serde(flatten)]
    pub context: DialogueContext,
    pub suggestions: SuggestionSet,
}

impl PartitionRecord for ClickRecord {
    fn record_id(&self) -> &str {
        &self.context.record_id
    }

    fn findings(&self, partition: PartitionName) -> Vec<Finding> {
        let mut out = self.context.findings();
        out.extend(self.suggestions.findings());
        let id = Some(self.context.record_id.as_str());
        match (partition, self.context.click_label) {
            (PartitionName::Click, ClickLabel::Clicked) => {}
            (PartitionName::Unclick, ClickLabel::Unclicked) => {}
            (PartitionName::Click, other) | (PartitionName::Unclick, other) => {
                out.push(Finding::error(
                    id,
                    format!(
                        "click_label {:?} does not match partition {}",
                        other,
                        partition.as_str()
                    ),
                ));
            }
            _ => {}
        }
        out
    }
}

/// A model-labeled record: generated suggestions plus the uncertainty
/// measured over their per-candidate rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoRecord {
    #[serde(flatten)]
    pub context: DialogueContext,
    pub suggestions: SuggestionSet,
    pub uncertainty: UncertaintyRecord,
}

impl PartitionRecord for PseudoRecord {
    fn record_id(&self) -> &str {
        &self.context.record_id
    }

    fn findings(&self, _partition: PartitionName) -> Vec<Finding> {
        let mut out = self.context.findings();
        out.extend(self.suggestions.findings());
        let id = Some(self.context.record_id.as_str());
        if self.uncertainty.context_ref != self.context.record_id {
            out.push(Finding::error(id, "uncertainty.context_ref does not match record_id"));
        }
        let rewards = &self.uncertainty.per_candidate_rewards;
        if !rewards.is_empty() {
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rewards.len() as f64;
            if (var - self.uncertainty.u).abs() > 1e-9 {
                out.push(Finding::error(
                    id,
                    format!("stored u {} != population variance {}", self.uncertainty.u, var),
                ));
            }
        } else if self.uncertainty.u != 0.0 {
            out.push(Finding::error(id, "no per-candidate rewards but u != 0"));
        }
        out
    }
}

/// Where a supervised pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    /// Built from clicked suggestion data.
    Domain,
    /// Drawn from the general instruction corpus.
    General,
}

/// One prompt/completion training pair in the supervised mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftPair {
    pub pair_id: String,
    pub prompt: String,
    pub completion: String,
    pub source: PairSource,
}

impl PartitionRecord for SftPair {
    fn record_id(&self) -> &str {
        &self.pair_id
    }

    fn findings(&self, _partition: PartitionName) -> Vec<Finding> {
        let mut out = Vec::new();
        let id = Some(self.pair_id.as_str());
        if self.prompt.is_empty() {
            out.push(Finding::error(id, "empty prompt"));
        }
        if self.completion.is_empty() {
            out.push(Finding::error(id, "empty completion"));
        }
        out
    }
}

/// A general-corpus instruction pair used to balance the supervised mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub record_id: String,
    pub prompt: String,
    pub completion: String,
}

impl PartitionRecord for QaPair {
    fn record_id(&self) -> &str {
        &self.record_id
    }

    fn findings(&self, _partition: PartitionName) -> Vec<Finding> {
        let mut out = Vec::new();
        let id = Some(self.record_id.as_str());
        if self.prompt.is_empty() {
            out.push(Finding::error(id, "empty prompt"));
        }
        if self.completion.is_empty() {
            out.push(Finding::error(id, "empty completion"));
        }
        out
    }
}

/// Test-set records are bare contexts.
impl PartitionRecord for DialogueContext {
    fn record_id(&self) -> &str {
        &self.record_id
    }

    fn findings(&self, _partition: PartitionName) -> Vec<Finding> {
        DialogueContext::findings(self)
    }
}
