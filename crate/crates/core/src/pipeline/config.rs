//! Declarative run configuration.
//!
//! One TOML file drives every stage. The parsed struct is embedded in
//! the manifest verbatim (paths as written, secrets by env-var name
//! only), and its canonical-JSON digest pins a resumed run to the
//! configuration it started with.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{derive_seed, PipelineError};
use crate::gateway::{EndpointConfig, Gateway, HttpBackend, MockBackend};
use crate::model::canonical::{canonical_json, digest_bytes};
use crate::model::{AblationFlags, Finding, TrainerHyperparams};

/// Model endpoints. The policy generates suggestion sets; the judge
/// scores them during training; `eval_judge` optionally dedicates a
/// (typically stronger) model to offline evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointsConfig {
    pub policy: EndpointConfig,
    pub judge: EndpointConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_judge: Option<EndpointConfig>,
}

impl Default for EndpointsConfig {
    fn default() -> Self {
        let judge =
            EndpointConfig { model_name: "judge".to_owned(), ..EndpointConfig::default() };
        EndpointsConfig { policy: EndpointConfig::default(), judge, eval_judge: None }
    }
}

/// Reward and advantage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Rollouts generated per training context (the advantage group).
    pub group_size: usize,
    /// Keep rollouts whose verdicts came from the aggregate-only
    /// fallback. Off by default: degraded verdicts carry invented
    /// per-candidate detail.
    pub include_degraded: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { group_size: 8, include_degraded: false }
    }
}

/// Hard-example selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Maximum hard records per round. 0 sizes the hard set to the
    /// click partition.
    pub budget: usize,
    /// Minimum uncertainty for selection.
    pub min_uncertainty: f64,
    /// Keep hard sets from earlier rounds instead of replacing them.
    pub accumulate_hard: bool,
    /// Ablation: skip uncertainty ranking and take every usable pseudo
    /// record.
    pub no_uncertainty: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            budget: 0,
            min_uncertainty: 0.0,
            accumulate_hard: false,
            no_uncertainty: false,
        }
    }
}

/// Loop-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    /// Rounds of the train-then-sample loop.
    pub iterations: u32,
    /// General-corpus pairs per domain pair in the supervised mix.
    pub mix_ratio: f64,
    /// Ablation: start reinforcement directly from the base policy.
    pub skip_sft: bool,
    /// External trainer command, invoked as
    /// `hook <export> <hyperparams> <result>`. None runs a built-in
    /// echo that keeps the policy endpoint unchanged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainer_hook: Option<PathBuf>,
    /// Recorded in the manifest and passed to the hook; the pipeline
    /// itself does not interpret these.
    pub hyperparams: TrainerHyperparams,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            iterations: 3,
            mix_ratio: 1.0,
            skip_sft: false,
            trainer_hook: None,
            hyperparams: TrainerHyperparams::default(),
        }
    }
}

/// Offline evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Independent judging passes; reports carry mean and sample std.
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { repeats: 3 }
    }
}

/// Offline backend selection. When enabled, every completion is served
/// by the deterministic hash backend instead of HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockConfig {
    pub enabled: bool,
    /// Fraction of calls that fail with a retryable transport error.
    pub failure_rate: f64,
    /// Fraction of generations that return non-JSON text.
    pub malformed_rate: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig { enabled: false, failure_rate: 0.0, malformed_rate: 0.0 }
    }
}

/// Input files and the run directory. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Run directory: manifest, lock, exports, sampled partitions.
    pub workdir: PathBuf,
    pub click: PathBuf,
    pub unclick: PathBuf,
    pub general: PathBuf,
    pub test: PathBuf,
    pub events: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            workdir: PathBuf::from("work"),
            click: PathBuf::from("sampledata/click.jsonl"),
            unclick: PathBuf::from("sampledata/unclick.jsonl"),
            general: PathBuf::from("sampledata/general.jsonl"),
            test: PathBuf::from("sampledata/test.jsonl"),
            events: PathBuf::from("sampledata/events.jsonl"),
        }
    }
}

impl PathsConfig {
    /// Resolve every path against `base` (the config file's directory).
    pub fn resolved(&self, base: &Path) -> PathsConfig {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        PathsConfig {
            workdir: join(&self.workdir),
            click: join(&self.click),
            unclick: join(&self.unclick),
            general: join(&self.general),
            test: join(&self.test),
            events: join(&self.events),
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Top-level seed; every stage derives its own from it.
    pub seed: u64,
    /// Candidates per suggestion set (the k of the quality reward).
    pub candidates_per_set: usize,
    /// Concurrent in-flight completions.
    pub parallelism: usize,
    pub endpoints: EndpointsConfig,
    pub reward: RewardConfig,
    pub sampler: SamplerConfig,
    pub orchestrator: OrchestratorConfig,
    pub eval: EvalConfig,
    pub mock: MockConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            candidates_per_set: 3,
            parallelism: 4,
            endpoints: EndpointsConfig::default(),
            reward: RewardConfig::default(),
            sampler: SamplerConfig::default(),
            orchestrator: OrchestratorConfig::default(),
            eval: EvalConfig::default(),
            mock: MockConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| super::io_error(path, e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Configuration issues. Errors make the run unrunnable; warnings
    /// flag suspicious but legal values.
    pub fn findings(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        if self.candidates_per_set == 0 {
            out.push(Finding::error(None, "candidates_per_set must be at least 1"));
        }
        if self.parallelism == 0 {
            out.push(Finding::error(None, "parallelism must be at least 1"));
        }
        if self.orchestrator.iterations == 0 {
            out.push(Finding::error(None, "orchestrator.iterations must be at least 1"));
        }
        if self.reward.group_size < 2 {
            out.push(Finding::error(
                None,
                "reward.group_size must be at least 2 (relative advantages need a group)",
            ));
        }
        if !(self.orchestrator.mix_ratio.is_finite() && self.orchestrator.mix_ratio >= 0.0) {
            out.push(Finding::error(None, "orchestrator.mix_ratio must be finite and >= 0"));
        }
        if !(self.sampler.min_uncertainty.is_finite() && self.sampler.min_uncertainty >= 0.0) {
            out.push(Finding::error(None, "sampler.min_uncertainty must be finite and >= 0"));
        }
        if self.eval.repeats == 0 {
            out.push(Finding::error(None, "eval.repeats must be at least 1"));
        }
        for (name, rate) in
            [("failure_rate", self.mock.failure_rate), ("malformed_rate", self.mock.malformed_rate)]
        {
            if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
                out.push(Finding::error(None, format!("mock.{name} must lie in [0, 1]")));
            }
        }
        let mut endpoints = vec![("policy", &self.endpoints.policy), ("judge", &self.endpoints.judge)];
        if let Some(eval_judge) = &self.endpoints.eval_judge {
            endpoints.push(("eval_judge", eval_judge));
        }
        for (name, endpoint) in endpoints {
            if let Err(error) = endpoint.validate() {
                out.push(Finding::error(None, format!("endpoints.{name}: {error}")));
            }
        }
        if self.mock.enabled && (self.mock.failure_rate > 0.9 || self.mock.malformed_rate > 0.9) {
            out.push(Finding::warning(
                None,
                "mock fault rates above 0.9 will starve most stages",
            ));
        }
        out
    }

    /// Fail on any error-severity finding.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let errors: Vec<String> = self
            .findings()
            .into_iter()
            .filter(Finding::is_error)
            .map(|f| f.message)
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(errors.join("; ")))
        }
    }

    /// The configuration as embedded in manifests.
    pub fn snapshot(&self) -> Result<serde_json::Value, PipelineError> {
        Ok(serde_json::to_value(self).map_err(crate::model::ModelError::from)?)
    }

    /// Digest of the canonical snapshot; resumes must match it.
    pub fn digest(&self) -> Result<String, PipelineError> {
        let text = canonical_json(&self.snapshot()?)?;
        Ok(digest_bytes(text.as_bytes()))
    }

    /// Hard-set budget with 0 resolved to the click-partition size.
    pub fn effective_budget(&self, click_len: usize) -> usize {
        if self.sampler.budget == 0 { click_len } else { self.sampler.budget }
    }

    /// Judge endpoint for offline evaluation.
    pub fn eval_judge(&self) -> &EndpointConfig {
        self.endpoints.eval_judge.as_ref().unwrap_or(&self.endpoints.judge)
    }

    pub fn ablation_flags(&self) -> AblationFlags {
        AblationFlags {
            no_uncertainty: self.sampler.no_uncertainty,
            sft_skipped: self.orchestrator.skip_sft,
        }
    }

    /// Build the completion gateway this run talks through.
    pub fn build_gateway(&self) -> Gateway {
        if self.mock.enabled {
            let backend = MockBackend::new(
                derive_seed(self.seed, "mock-backend"),
                self.candidates_per_set,
            )
            .with_failure_rate(self.mock.failure_rate)
            .with_malformed_rate(self.mock.malformed_rate);
            Gateway::mock(backend)
        } else {
            Gateway::new(Arc::new(HttpBackend::new()))
        }
    }
}
