//! One reinforcement round: rollout generation, judging, group
//! scoring, export, and the external trainer hand-off.
//!
//! Training itself happens outside this process. The round produces a
//! line-delimited export of (prompt, candidates, reward, advantage)
//! groups, invokes the trainer hook with it, and adopts the policy
//! reference the hook writes back.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{derive_seed, PipelineError};
use crate::gateway::{EndpointConfig, Gateway, GenerationRequest};
use crate::model::canonical::{digest_jsonl_file, write_jsonl};
use crate::model::{DialogueContext, Finding, JudgeVerdict, SuggestionSet, TrainerHyperparams};
use crate::prompt::{parse_judge_output, parse_options, render_generation_prompt, render_judge_prompt};
use crate::reward::{export_records, score_rollout_group, GrpoExportRecord};

/// Everything the trainer needs besides the export file, written next
/// to it as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerHandoff {
    /// Policy the rollouts were sampled from; training continues from it.
    pub policy_endpoint: String,
    pub iteration: u32,
    pub hyperparams: TrainerHyperparams,
}

#[derive(Debug, Clone)]
pub struct RlRoundOptions<'a> {
    /// 1-based round number.
    pub iteration: u32,
    /// Candidates per suggestion set.
    pub k: usize,
    /// Rollouts per context (the advantage group size).
    pub group_size: usize,
    pub parallelism: usize,
    pub root_seed: u64,
    /// Keep rollouts whose verdicts came from the aggregate-only
    /// fallback instead of dropping them before grouping.
    pub include_degraded: bool,
    /// External trainer command; None uses the built-in echo.
    pub trainer_hook: Option<&'a Path>,
    /// Directory for the export, hand-off, and result files.
    pub round_dir: &'a Path,
    pub hyperparams: &'a TrainerHyperparams,
}

#[derive(Debug, Clone)]
pub struct RlRoundOutcome {
    pub export_path: PathBuf,
    pub export_digest: String,
    /// Contexts that produced a scored group.
    pub groups: usize,
    /// Export lines (rollouts) across all groups.
    pub exported_rollouts: usize,
    /// Contexts dropped because fewer than two rollouts survived.
    pub skipped_contexts: usize,
    /// Policy reference returned by the trainer.
    pub new_policy_endpoint: String,
    pub findings: Vec<Finding>,
}

/// A rollout that survived generation, before judging.
struct PendingRollout {
    context_index: usize,
    rollout_index: usize,
    set: SuggestionSet,
}

/// Run one round over the merged training contexts.
///
/// Per-rollout failures degrade gracefully: a transport failure or an
/// unusable judge reply drops that rollout with a finding, and a
/// context keeps training as long as two rollouts survive. Only a
/// whole-stage transport blackout or a trainer-hook failure aborts.
pub fn run_rl_round(
    gateway: &Gateway,
    policy: &EndpointConfig,
    judge: &EndpointConfig,
    policy_reference: &str,
    contexts: &[DialogueContext],
    opts: &RlRoundOptions,
) -> Result<RlRoundOutcome, PipelineError> {
    if contexts.is_empty() {
        return Err(PipelineError::EmptyPartition { partition: "training contexts" });
    }
    fs::create_dir_all(opts.round_dir).map_err(|e| super::io_error(opts.round_dir, e))?;
    let mut findings = Vec::new();

    // Generation: group_size rollouts per context, each with its own
    // derived seed so decoding noise is reproducible per slot.
    let mut requests = Vec::with_capacity(contexts.len() * opts.group_size);
    let mut targets = Vec::with_capacity(requests.capacity());
    let prompts: Vec<String> = contexts
        .iter()
        .map(|ctx| render_generation_prompt(ctx, opts.k).user_text)
        .collect();
    for (context_index, ctx) in contexts.iter().enumerate() {
        for rollout_index in 0..opts.group_size {
            let label =
                format!("rl/{}/gen/{}/{rollout_index}", opts.iteration, ctx.record_id);
            requests.push(GenerationRequest::new(
                prompts[context_index].clone(),
                derive_seed(opts.root_seed, &label),
            ));
            targets.push((context_index, rollout_index));
        }
    }
    let mut generated: Vec<Option<PendingRollout>> = Vec::new();
    generated.resize_with(requests.len(), || None);
    let mut transport_failures = 0usize;
    for (queue_index, outcome) in gateway.complete_batch(policy, &requests, opts.parallelism) {
        let (context_index, rollout_index) = targets[queue_index];
        let ctx = &contexts[context_index];
        match outcome {
            Err(error) => {
                transport_failures += 1;
                findings.push(Finding::error(
                    Some(&ctx.record_id),
                    format!("rollout {rollout_index} generation failed: {error}"),
                ));
            }
            Ok(raw) => {
                let set = parse_options(&raw, opts.k).for_context(&ctx.record_id);
                generated[queue_index] =
                    Some(PendingRollout { context_index, rollout_index, set });
            }
        }
    }
    if transport_failures == requests.len() {
        return Err(PipelineError::TransportExhausted { stage: "rl_round" });
    }

    // Judging: only well-formed sets go to the judge; malformed ones
    // already score zero by the format gate.
    let mut judge_requests = Vec::new();
    let mut judge_targets = Vec::new();
    for (slot, pending) in generated.iter().enumerate() {
        let Some(pending) = pending else { continue };
        if !pending.set.format_ok {
            continue;
        }
        let ctx = &contexts[pending.context_index];
        let prompt = render_judge_prompt(ctx, &pending.set)?;
        let label = format!(
            "rl/{}/judge/{}/{}",
            opts.iteration, ctx.record_id, pending.rollout_index
        );
        judge_requests.push(GenerationRequest::new(
            prompt.user_text,
            derive_seed(opts.root_seed, &label),
        ));
        judge_targets.push(slot);
    }
    let mut verdicts: Vec<Option<JudgeVerdict>> = vec![None; generated.len()];
    for (queue_index, outcome) in gateway.complete_batch(judge, &judge_requests, opts.parallelism) {
        let slot = judge_targets[queue_index];
        let pending = generated[slot].as_ref().expect("slot was queued for judging");
        let ctx = &contexts[pending.context_index];
        match outcome {
            Err(error) => findings.push(Finding::error(
                Some(&ctx.record_id),
                format!("rollout {} unjudged, dropped: {error}", pending.rollout_index),
            )),
            Ok(raw) => match parse_judge_output(&raw, pending.set.candidates.len()) {
                Ok(verdict) => verdicts[slot] = Some(verdict),
                Err(error) => findings.push(Finding::error(
                    Some(&ctx.record_id),
                    format!(
                        "rollout {} judge reply unusable, dropped: {error}",
                        pending.rollout_index
                    ),
                )),
            },
        }
    }

    // Grouping: reassemble per context, drop rollouts without a usable
    // verdict (and degraded ones unless configured in), score the rest.
    let mut per_context: Vec<Vec<(SuggestionSet, Option<JudgeVerdict>)>> =
        vec![Vec::new(); contexts.len()];
    for (slot, pending) in generated.into_iter().enumerate() {
        let Some(pending) = pending else { continue };
        let ctx = &contexts[pending.context_index];
        if !pending.set.format_ok {
            per_context[pending.context_index].push((pending.set, None));
            continue;
        }
        match verdicts[slot].take() {
            None => {} // already reported above
            Some(verdict) if verdict.degraded && !opts.include_degraded => {
                findings.push(Finding::warning(
                    Some(&ctx.record_id),
                    format!(
                        "rollout {} dropped: aggregate-only verdict (enable include_degraded to keep)",
                        pending.rollout_index
                    ),
                ));
            }
            Some(verdict) => per_context[pending.context_index].push((pending.set, Some(verdict))),
        }
    }

    let mut export: Vec<GrpoExportRecord> = Vec::new();
    let mut groups = 0usize;
    let mut skipped_contexts = 0usize;
    for (context_index, rollouts) in per_context.into_iter().enumerate() {
        let ctx = &contexts[context_index];
        if rollouts.len() < 2 {
            skipped_contexts += 1;
            findings.push(Finding::warning(
                Some(&ctx.record_id),
                format!(
                    "context skipped: {} usable rollout(s), need at least 2 for relative advantages",
                    rollouts.len()
                ),
            ));
            continue;
        }
        let group = score_rollout_group(&ctx.record_id, rollouts)?;
        export.extend(export_records(&group, &prompts[context_index])?);
        groups += 1;
    }
    if groups == 0 {
        return Err(PipelineError::TransportExhausted { stage: "rl_round" });
    }

    let export_path = opts.round_dir.join("grpo_export.jsonl");
    write_jsonl(&export_path, &export)?;
    let export_digest = digest_jsonl_file(&export_path)?;

    let handoff = TrainerHandoff {
        policy_endpoint: policy_reference.to_owned(),
        iteration: opts.iteration,
        hyperparams: opts.hyperparams.clone(),
    };
    let handoff_path = opts.round_dir.join("trainer_handoff.json");
    let handoff_text = crate::model::canonical::canonical_json(&handoff)
        .map_err(PipelineError::Model)?;
    fs::write(&handoff_path, format!("{handoff_text}\n"))
        .map_err(|e| super::io_error(&handoff_path, e))?;

    let result_path = opts.round_dir.join("trainer_result.txt");
    let new_policy_endpoint = match opts.trainer_hook {
        Some(hook) => {
            invoke_hook(hook, &export_path, &handoff_path, &result_path)?;
            read_result_file(&result_path)?
        }
        None => {
            // Built-in echo: training is a no-op, the policy reference
            // stays put. Written through the same file so dry runs and
            // real runs share an audit trail.
            fs::write(&result_path, format!("{policy_reference}\n"))
                .map_err(|e| super::io_error(&result_path, e))?;
            policy_reference.to_owned()
        }
    };

    Ok(RlRoundOutcome {
        export_path,
        export_digest,
        groups,
        exported_rollouts: export.len(),
        skipped_contexts,
        new_policy_endpoint,
        findings,
    })
}

fn invoke_hook(
    hook: &Path,
    export: &Path,
    handoff: &Path,
    result: &Path,
) -> Result<(), PipelineError> {
    let output = Command::new(hook)
        .arg(export)
        .arg(handoff)
        .arg(result)
        .output()
        .map_err(|e| PipelineError::TrainerHook {
            detail: format!("could not launch {}: {e}", hook.display()),
        })?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let stderr = stderr.trim();
        let mut detail = format!("{} exited with {}", hook.display(), output.status);
        if !stderr.is_empty() {
            detail.push_str(&format!("; stderr: {:.200}", stderr));
        }
        return Err(PipelineError::TrainerHook { detail });
    }
    Ok(())
}

/// The hook's result file: the first non-empty line names the policy.
fn read_result_file(path: &Path) -> Result<String, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::TrainerHook {
        detail: format!("result file {} unreadable: {e}", path.display()),
    })?;
    text.lines()
        .map(str::trim)
        .find(|line| !line.is_empty())
        .map(str::to_owned)
        .ok_or_else(|| PipelineError::TrainerHook {
            detail: format!("result file {} names no endpoint", path.display()),
        })
}
