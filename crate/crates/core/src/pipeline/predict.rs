//! Test-set prediction: one suggestion set per held-out query,
//! persisted for the evaluation harness.

use std::path::{Path, PathBuf};

use super::{derive_seed, PipelineError};
use crate::gateway::{EndpointConfig, Gateway, GenerationRequest};
use crate::model::canonical::{digest_jsonl_file, read_jsonl, write_jsonl};
use crate::model::{DialogueContext, Finding, Partition, PipelineManifest, Stage, SuggestionSet};
use crate::prompt::{parse_options, render_generation_prompt};

#[derive(Debug, Clone)]
pub struct PredictOptions<'a> {
    /// Candidates per suggestion set.
    pub k: usize,
    pub parallelism: usize,
    pub root_seed: u64,
    /// Evaluate this endpoint instead of the trained policy. Bypasses
    /// the trained-run gate, enabling baseline comparisons.
    pub endpoint_override: Option<&'a EndpointConfig>,
    /// Where the suggestion sets are written (line-delimited).
    pub output_path: &'a Path,
}

#[derive(Debug, Clone)]
pub struct PredictOutcome {
    /// One set per test record, aligned to the partition order.
    pub sets: Vec<SuggestionSet>,
    pub output_path: PathBuf,
    pub digest: String,
    /// Items whose generation never arrived; they count as format
    /// failures downstream.
    pub transport_failures: usize,
    pub findings: Vec<Finding>,
}

/// Generate suggestions for every test record.
///
/// Without an endpoint override the run must be complete (`done`):
/// evaluating a half-trained policy silently would corrupt comparisons.
/// Failures stay per-item: a transport failure or malformed generation
/// becomes a format-failed set, never a lost record, so the output is
/// always aligned with the test partition.
pub fn predict_testset(
    gateway: &Gateway,
    policy: &EndpointConfig,
    manifest: Option<&PipelineManifest>,
    test: &Partition<DialogueContext>,
    opts: &PredictOptions<'_>,
) -> Result<PredictOutcome, PipelineError> {
    let endpoint = match opts.endpoint_override {
        Some(endpoint) => endpoint.clone(),
        None => {
            let manifest = manifest.ok_or(PipelineError::StageNotReady {
                required: "done",
                found: "no manifest".to_owned(),
            })?;
            if manifest.stage != Stage::Done {
                return Err(PipelineError::StageNotReady {
                    required: "done",
                    found: format!(
                        "{} (iteration {})",
                        manifest.stage.as_str(),
                        manifest.iteration
                    ),
                });
            }
            let mut endpoint = policy.clone();
            endpoint.model_name = manifest.policy_endpoint.clone();
            endpoint
        }
    };

    let mut findings = Vec::new();
    let requests: Vec<GenerationRequest> = test
        .records
        .iter()
        .map(|ctx| {
            GenerationRequest::new(
                render_generation_prompt(ctx, opts.k).user_text,
                derive_seed(opts.root_seed, &format!("predict/gen/{}", ctx.record_id)),
            )
        })
        .collect();

    let mut sets: Vec<Option<SuggestionSet>> = vec![None; test.records.len()];
    let mut transport_failures = 0usize;
    for (index, outcome) in gateway.complete_batch(&endpoint, &requests, opts.parallelism) {
        let ctx = &test.records[index];
        match outcome {
            Err(error) => {
                transport_failures += 1;
                findings.push(Finding::error(
                    Some(&ctx.record_id),
                    format!("prediction failed, recorded as format failure: {error}"),
                ));
                sets[index] = Some(SuggestionSet::malformed(&ctx.record_id, opts.k, ""));
            }
            Ok(raw) => {
                sets[index] = Some(parse_options(&raw, opts.k).for_context(&ctx.record_id));
            }
        }
    }
    let sets: Vec<SuggestionSet> =
        sets.into_iter().map(|s| s.expect("every index filled")).collect();
    if transport_failures == test.len() && !test.is_empty() {
        return Err(PipelineError::TransportExhausted { stage: "predict" });
    }

    write_jsonl(opts.output_path, &sets)?;
    let digest = digest_jsonl_file(opts.output_path)?;
    Ok(PredictOutcome {
        sets,
        output_path: opts.output_path.to_path_buf(),
        digest,
        transport_failures,
        findings,
    })
}

/// Load persisted predictions back, aligned against a test partition.
pub fn read_predictions(
    path: &Path,
    test: &Partition<DialogueContext>,
) -> Result<Vec<SuggestionSet>, PipelineError> {
    let sets: Vec<SuggestionSet> = read_jsonl(path)?;
    if sets.len() != test.len() {
        return Err(PipelineError::Config(format!(
            "{} holds {} predictions but the test partition has {} records",
            path.display(),
            sets.len(),
            test.len()
        )));
    }
    for (set, ctx) in sets.iter().zip(&test.records) {
        if set.context_ref != ctx.record_id {
            return Err(PipelineError::Config(format!(
                "prediction for {} does not match test record {}",
                set.context_ref, ctx.record_id
            )));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::synth;

    fn done_manifest(policy: &str) -> PipelineManifest {
        let mut manifest =
            PipelineManifest::new(3, policy, "judge", serde_json::json!({}), 7).unwrap();
        manifest.advance(Stage::Done, 3).unwrap();
        manifest
    }

    #[test]
    fn aligned_sets_for_every_record_and_stable_digest() {
        let dir = tempfile::tempdir().unwrap();
        let test = synth::test_partition(51, 12);
        let gateway = Gateway::mock(MockBackend::new(9, 3));
        let policy = EndpointConfig::default();
        let manifest = done_manifest("policy-final");
        let out_a = dir.path().join("a.jsonl");
        let first = predict_testset(
            &gateway,
            &policy,
            Some(&manifest),
            &test,
            &PredictOptions {
                k: 3,
                parallelism: 3,
                root_seed: 7,
                endpoint_override: None,
                output_path: &out_a,
            },
        )
        .unwrap();
        assert_eq!(first.sets.len(), 12);
        for (set, ctx) in first.sets.iter().zip(&test.records) {
            assert_eq!(set.context_ref, ctx.record_id);
        }
        let out_b = dir.path().join("b.jsonl");
        let second = predict_testset(
            &gateway,
            &policy,
            Some(&manifest),
            &test,
            &PredictOptions {
                k: 3,
                parallelism: 1,
                root_seed: 7,
                endpoint_override: None,
                output_path: &out_b,
            },
        )
        .unwrap();
        assert_eq!(first.digest, second.digest, "parallelism does not leak into outputs");
        let loaded = read_predictions(&out_a, &test).unwrap();
        assert_eq!(loaded, first.sets);
    }

    #[test]
    fn unfinished_run_is_gated_but_override_passes() {
        let dir = tempfile::tempdir().unwrap();
        let test = synth::test_partition(51, 3);
        let gateway = Gateway::mock(MockBackend::new(9, 3));
        let policy = EndpointConfig::default();
        let mut unfinished =
            PipelineManifest::new(3, "policy", "judge", serde_json::json!({}), 7).unwrap();
        unfinished.advance(Stage::RlRound, 1).unwrap();
        let out = dir.path().join("p.jsonl");
        let opts = PredictOptions {
            k: 3,
            parallelism: 2,
            root_seed: 7,
            endpoint_override: None,
            output_path: &out,
        };
        let err =
            predict_testset(&gateway, &policy, Some(&unfinished), &test, &opts).unwrap_err();
        assert!(matches!(err, PipelineError::StageNotReady { required: "done", .. }));

        let baseline = EndpointConfig { model_name: "baseline".into(), ..EndpointConfig::default() };
        let overridden = PredictOptions { endpoint_override: Some(&baseline), ..opts };
        let outcome =
            predict_testset(&gateway, &policy, None, &test, &overridden).unwrap();
        assert_eq!(outcome.sets.len(), 3, "baseline override needs no manifest at all");
    }

    #[test]
    fn transport_failures_become_format_failures() {
        let dir = tempfile::tempdir().unwrap();
        let test = synth::test_partition(51, 10);
        let gateway = Gateway::mock(MockBackend::new(9, 3).with_failure_rate(0.4));
        let policy = EndpointConfig::default();
        let manifest = done_manifest("policy-final");
        let out = dir.path().join("p.jsonl");
        let outcome = predict_testset(
            &gateway,
            &policy,
            Some(&manifest),
            &test,
            &PredictOptions {
                k: 3,
                parallelism: 2,
                root_seed: 7,
                endpoint_override: None,
                output_path: &out,
            },
        )
        .unwrap();
        assert_eq!(outcome.sets.len(), 10, "alignment survives failures");
        assert!(outcome.transport_failures > 0, "0.4 failure rate must hit something");
        let format_failures = outcome.sets.iter().filter(|s| !s.format_ok).count();
        assert!(format_failures >= outcome.transport_failures);
        assert_eq!(outcome.findings.len(), outcome.transport_failures);
    }

    #[test]
    fn empty_test_partition_yields_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let test = Partition::new(crate::model::PartitionName::Test, Vec::new());
        let gateway = Gateway::mock(MockBackend::new(9, 3));
        let policy = EndpointConfig::default();
        let manifest = done_manifest("policy-final");
        let out = dir.path().join("empty.jsonl");
        let outcome = predict_testset(
            &gateway,
            &policy,
            Some(&manifest),
            &test,
            &PredictOptions {
                k: 3,
                parallelism: 2,
                root_seed: 7,
                endpoint_override: None,
                output_path: &out,
            },
        )
        .unwrap();
        assert!(outcome.sets.is_empty());
        assert!(out.exists());
        assert!(read_predictions(&out, &test).unwrap().is_empty());
    }

    #[test]
    fn misaligned_predictions_are_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let test = synth::test_partition(51, 4);
        let sets: Vec<SuggestionSet> = test
            .records
            .iter()
            .rev()
            .map(|ctx| SuggestionSet::malformed(&ctx.record_id, 3, ""))
            .collect();
        let path = dir.path().join("bad.jsonl");
        write_jsonl(&path, &sets).unwrap();
        assert!(read_predictions(&path, &test).is_err());
        let short = &sets[..2];
        write_jsonl(&path, short).unwrap();
        assert!(read_predictions(&path, &test).is_err());
    }
}
