//! Pipeline manifest: the single source of truth for resumable runs.
//!
//! The manifest is rewritten atomically after every completed stage and
//! carries no timestamps or absolute paths, so two runs with the same
//! inputs and seed produce byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::canonical::{canonical_json, digest_bytes};
use super::ModelError;

/// Stages a pipeline run moves through, in order. The manifest records
/// the last stage that *completed*; a fresh run sits at [`Stage::Init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    SftBuild,
    RlRound,
    Sampling,
    Done,
}

impl Stage {
    /// Position in the stage order, for monotonicity checks.
    pub fn ordinal(self) -> u8 {
        match self {
            Stage::Init => 0,
            Stage::SftBuild => 1,
            Stage::RlRound => 2,
            Stage::Sampling => 3,
            Stage::Done => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::SftBuild => "sft_build",
            Stage::RlRound => "rl_round",
            Stage::Sampling => "sampling",
            Stage::Done => "done",
        }
    }
}

/// A failed stage attempt, kept for audit. Carries no wall-clock time so
/// manifests stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub iteration: u32,
    pub stage_attempted: Stage,
    pub message: String,
}

/// Hyperparameters recorded in the manifest and handed to the trainer
/// hook. The pipeline does not interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerHyperparams {
    pub sft_learning_rate: f64,
    pub sft_epochs: u32,
    pub max_sequence_len: u32,
    pub sft_batch_size: u32,
    pub rl_batch_size: u32,
    pub max_prompt_tokens: u32,
    pub max_response_tokens: u32,
    pub actor_learning_rate: f64,
    pub kl_coefficient: f64,
}

impl Default for TrainerHyperparams {
    fn default() -> Self {
        TrainerHyperparams {
            sft_learning_rate: 1e-4,
            sft_epochs: 3,
            max_sequence_len: 4096,
            sft_batch_size: 256,
            rl_batch_size: 256,
            max_prompt_tokens: 2048,
            max_response_tokens: 512,
            actor_learning_rate: 1e-6,
            kl_coefficient: 0.001,
        }
    }
}

/// Ablation switches recorded with the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AblationFlags {
    /// Skip uncertainty selection; take every usable pseudo record.
    pub no_uncertainty: bool,
    /// The supervised warm-up stage was skipped entirely.
    pub sft_skipped: bool,
}

/// State of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    /// Last stage that completed.
    pub stage: Stage,
    /// Iteration the stage belongs to (0 for the supervised build).
    pub iteration: u32,
    /// Candidates requested per suggestion set.
    pub k_budget: usize,
    /// Model identifier currently serving the policy.
    pub policy_endpoint: String,
    /// Model identifier serving judge calls during training.
    pub judge_endpoint: String,
    /// Digest of every partition and export the run has produced or
    /// consumed, keyed by a stable name such as `click` or
    /// `export_round_1`.
    pub partition_digests: BTreeMap<String, String>,
    /// Digest of the canonical form of the run's configuration.
    pub config_digest: String,
    /// Declared (unresolved) configuration, embedded for audit.
    pub config_snapshot: serde_json::Value,
    pub trainer_hyperparams: TrainerHyperparams,
    #[serde(default)]
    pub failures: Vec<FailureRecord>,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// Root seed the run was started with.
    pub seed: u64,
}

impl PipelineManifest {
    pub fn new(
        k_budget: usize,
        policy_endpoint: impl Into<String>,
        judge_endpoint: impl Into<String>,
        config_snapshot: serde_json::Value,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let config_digest = digest_bytes(canonical_json(&config_snapshot)?.as_bytes());
        Ok(PipelineManifest {
            stage: Stage::Init,
            iteration: 0,
            k_budget,
            policy_endpoint: policy_endpoint.into(),
            judge_endpoint: judge_endpoint.into(),
            partition_digests: BTreeMap::new(),
            config_digest,
            config_snapshot,
            trainer_hyperparams: TrainerHyperparams::default(),
            failures: Vec::new(),
            ablation: AblationFlags::default(),
            seed,
        })
    }

    /// Record a digest under a stable key, erroring when the key exists
    /// with a different value (an integrity violation on resume).
    pub fn pin_digest(&mut self, key: &str, digest: &str) -> Result<(), ModelError> {
        match self.partition_digests.get(key) {
            Some(existing) if existing != digest => Err(ModelError::DigestMismatch {
                key: key.to_owned(),
                pinned: existing.clone(),
                observed: digest.to_owned(),
            }),
            Some(_) => Ok(()),
            None => {
                self.partition_digests.insert(key.to_owned(), digest.to_owned());
                Ok(())
            }
        }
    }

    /// Advance to a later (or equal, for repeated sampling stages in later
    /// iterations) stage position.
    pub fn advance(&mut self, stage: Stage, iteration: u32) -> Result<(), ModelError> {
        let forward = iteration > self.iteration
            || (iteration == self.iteration && stage.ordinal() >= self.stage.ordinal());
        if !forward {
            return Err(ModelError::StageRegression {
                from: format!("{}/{}", self.stage.as_str(), self.iteration),
                to: format!("{}/{}", stage.as_str(), iteration),
            });
        }
        self.stage = stage;
        self.iteration = iteration;
        Ok(())
    }

    pub fn record_failure(&mut self, iteration: u32, stage: Stage, message: impl Into<String>) {
        self.failures.push(FailureRecord {
            iteration,
            stage_attempted: stage,
            message: message.into(),
        });
    }

    /// Canonical serialization of the whole manifest.
    pub fn to_canonical_json(&self) -> Result<String, ModelError> {
        canonical_json(self)
    }

    /// Digest of the canonical manifest text.
    pub fn digest(&self) -> Result<String, ModelError> {
        Ok(digest_bytes(self.to_canonical_json()?.as_bytes()))
    }

    /// Atomic write: serialize canonically, write to a sibling temp file,
    /// rename into place.
    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        let text = self.to_canonical_json()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, format!("{text}\n")).map_err(|e| ModelError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| ModelError::io(path, e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| ModelError::Record {
            path: path.display().to_string(),
            line: 1,
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> PipelineManifest {
        PipelineManifest::new(3, "policy-v0", "judge-v0", serde_json::json!({"seed": 7}), 7)
            .unwrap()
    }

    #[test]
    fn digest_pinning_detects_mismatch() {
        let mut m = manifest();
        m.pin_digest("click", "abc").unwrap();
        m.pin_digest("click", "abc").unwrap();
        let err = m.pin_digest("click", "def").unwrap_err();
        assert!(matches!(err, ModelError::DigestMismatch { .. }));
    }

    #[test]
    fn stage_cannot_move_backwards() {
        let mut m = manifest();
        m.advance(Stage::RlRound, 1).unwrap();
        m.advance(Stage::Sampling, 1).unwrap();
        m.advance(Stage::RlRound, 2).unwrap();
        assert!(m.advance(Stage::SftBuild, 0).is_err());
    }

    #[test]
    fn write_is_atomic_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = manifest();
        m.write(&path).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        m.write(&path).unwrap();
        let second = std::fs::read_to_string(&path).unwrap();
        assert_eq!(first, second);
        let back = PipelineManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert!(!dir.path().join("manifest.tmp").exists());
    }

    #[test]
    fn failures_do_not_change_stage() {
        let mut m = manifest();
        let digest_before = m.digest().unwrap();
        m.record_failure(1, Stage::RlRound, "trainer hook exited 1");
        assert_eq!(m.stage, Stage::Init);
        assert_ne!(m.digest().unwrap(), digest_before);
    }
}
