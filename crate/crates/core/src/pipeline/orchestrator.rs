//! The K-round training loop, resumable through the manifest.
//!
//! Each round trains on the clicked data merged with the latest hard
//! set, then re-labels the unclicked pool with the updated policy and
//! re-selects hard examples. The manifest is written after every
//! completed stage, so a killed run resumes at the stage it lost, and
//! digest pinning guarantees the resumed run sees the same bytes.

use std::path::{Path, PathBuf};

use super::round::{run_rl_round, RlRoundOptions};
use super::{PipelineConfig, PipelineError, WorkdirLock};
use crate::gateway::EndpointConfig;
use crate::model::canonical::{canonical_json, digest_lines};
use crate::model::{
    require_valid, ClickRecord, DialogueContext, Finding, ModelError, Partition, PartitionName,
    PipelineManifest, PseudoRecord, QaPair, Stage,
};
use crate::sampler::{build_pseudo, select_hard, BuildPseudoOptions};

/// The three input datasets of the loop.
#[derive(Debug, Clone, Copy)]
pub struct IterateInputs<'a> {
    pub click: &'a Partition<ClickRecord>,
    pub unclick: &'a Partition<ClickRecord>,
    pub general: &'a [QaPair],
}

/// Loop controls beyond the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct IterateOptions {
    /// Stop after this round's sampling completes, simulating a crash
    /// for resume tests. The run reports success; a later `iterate`
    /// with the same config picks up at the next round.
    pub halt_after_round: Option<u32>,
}

#[derive(Debug)]
pub struct IterateOutcome {
    pub manifest: PipelineManifest,
    pub manifest_path: PathBuf,
    pub findings: Vec<Finding>,
}

/// True when `stage` of round `iteration` already completed.
fn stage_done(manifest: &PipelineManifest, stage: Stage, iteration: u32) -> bool {
    manifest.iteration > iteration
        || (manifest.iteration == iteration && manifest.stage.ordinal() >= stage.ordinal())
}

/// Clicked contexts plus hard contexts, deduplicated by record id with
/// click precedence. Order is deterministic: click partition order,
/// then surviving hard records in their selection order.
pub fn merge_training_contexts(
    click: &Partition<ClickRecord>,
    hard: &Partition<PseudoRecord>,
) -> Vec<DialogueContext> {
    let mut seen: std::collections::BTreeSet<&str> =
        click.records.iter().map(|r| r.context.record_id.as_str()).collect();
    let mut contexts: Vec<DialogueContext> =
        click.records.iter().map(|r| r.context.clone()).collect();
    for record in &hard.records {
        if seen.insert(record.context.record_id.as_str()) {
            contexts.push(record.context.clone());
        }
    }
    contexts
}

fn general_digest(general: &[QaPair]) -> Result<String, PipelineError> {
    let lines: Vec<String> =
        general.iter().map(canonical_json).collect::<Result<_, ModelError>>()?;
    Ok(digest_lines(&lines))
}

/// Endpoint the current policy reference resolves to: the configured
/// policy connection, pointed at the model the manifest names.
fn policy_endpoint(config: &PipelineConfig, manifest: &PipelineManifest) -> EndpointConfig {
    let mut endpoint = config.endpoints.policy.clone();
    endpoint.model_name = manifest.policy_endpoint.clone();
    endpoint
}

/// Hard partition feeding round `round`: the previous round's
/// selection, or every prior selection when accumulation is on.
/// Round 1 starts from an empty hard set.
fn hard_input_for_round(
    workdir: &Path,
    manifest: &mut PipelineManifest,
    config: &PipelineConfig,
    round: u32,
) -> Result<Partition<PseudoRecord>, PipelineError> {
    let source_rounds: Vec<u32> = if config.sampler.accumulate_hard {
        // Latest selection takes precedence for duplicated ids.
        (1..round).rev().collect()
    } else if round > 1 {
        vec![round - 1]
    } else {
        Vec::new()
    };
    let mut seen = std::collections::BTreeSet::new();
    let mut records = Vec::new();
    for source in source_rounds {
        let path = workdir.join(format!("hard-{source}.jsonl"));
        let partition = Partition::<PseudoRecord>::read(PartitionName::Hard, &path)?;
        // Re-pinning verifies the file still matches what sampling wrote.
        manifest.pin_digest(&format!("hard_round_{source}"), &partition.digest()?)?;
        for record in partition.records {
            if seen.insert(record.context.record_id.clone()) {
                records.push(record);
            }
        }
    }
    Ok(Partition::new(PartitionName::Hard, records))
}

/// Run (or resume) the full loop: supervised build, then K rounds of
/// train-and-resample, finishing with the manifest at `done`.
pub fn iterate(
    config: &PipelineConfig,
    inputs: IterateInputs<'_>,
    workdir: &Path,
    options: &IterateOptions,
) -> Result<IterateOutcome, PipelineError> {
    config.validate()?;
    let mut findings = Vec::new();
    findings.extend(require_valid(inputs.click)?);
    findings.extend(require_valid(inputs.unclick)?);

    let _lock = WorkdirLock::acquire(workdir)?;
    let manifest_path = workdir.join("manifest.json");
    let config_digest = config.digest()?;
    let mut manifest = if manifest_path.exists() {
        let existing = PipelineManifest::read(&manifest_path)?;
        if existing.config_digest != config_digest {
            return Err(ModelError::DigestMismatch {
                key: "config".to_owned(),
                pinned: existing.config_digest,
                observed: config_digest,
            }
            .into());
        }
        findings.push(Finding::warning(
            None,
            format!(
                "resuming: stage {} of iteration {} already complete",
                existing.stage.as_str(),
                existing.iteration
            ),
        ));
        existing
    } else {
        let mut fresh = PipelineManifest::new(
            config.candidates_per_set,
            config.endpoints.policy.model_name.clone(),
            config.endpoints.judge.model_name.clone(),
            config.snapshot()?,
            config.seed,
        )?;
        fresh.trainer_hyperparams = config.orchestrator.hyperparams.clone();
        fresh.ablation = config.ablation_flags();
        fresh
    };

    // Inputs are pinned on every entry, so a resume against edited
    // data fails loudly instead of mixing datasets.
    manifest.pin_digest("click", &inputs.click.digest()?)?;
    manifest.pin_digest("unclick", &inputs.unclick.digest()?)?;
    manifest.pin_digest("general", &general_digest(inputs.general)?)?;

    let gateway = config.build_gateway();

    if manifest.stage == Stage::Init {
        if config.orchestrator.skip_sft {
            findings.push(Finding::warning(
                None,
                "supervised warm-up skipped; reinforcement starts from the base policy",
            ));
        } else {
            let built = super::build_sft_dataset(
                inputs.click,
                inputs.general,
                config.orchestrator.mix_ratio,
                config.candidates_per_set,
                config.seed,
            )?;
            let sft_path = workdir.join("sft_mix.jsonl");
            built.partition.write(&sft_path)?;
            manifest.pin_digest("sft_mix", &built.partition.digest()?)?;
        }
        manifest.advance(Stage::SftBuild, 0)?;
        manifest.write(&manifest_path)?;
    }

    let rounds = config.orchestrator.iterations;
    for round in 1..=rounds {
        if !stage_done(&manifest, Stage::RlRound, round) {
            let hard = hard_input_for_round(workdir, &mut manifest, config, round)?;
            let contexts = merge_training_contexts(inputs.click, &hard);
            let round_dir = workdir.join(format!("round-{round}"));
            let round_options = RlRoundOptions {
                iteration: round,
                k: config.candidates_per_set,
                group_size: config.reward.group_size,
                parallelism: config.parallelism,
                root_seed: config.seed,
                include_degraded: config.reward.include_degraded,
                trainer_hook: config.orchestrator.trainer_hook.as_deref(),
                round_dir: &round_dir,
                hyperparams: &config.orchestrator.hyperparams,
            };
            let policy = policy_endpoint(config, &manifest);
            match run_rl_round(
                &gateway,
                &policy,
                &config.endpoints.judge,
                &manifest.policy_endpoint,
                &contexts,
                &round_options,
            ) {
                Ok(outcome) => {
                    findings.extend(outcome.findings);
                    manifest.pin_digest(&format!("export_round_{round}"), &outcome.export_digest)?;
                    manifest.policy_endpoint = outcome.new_policy_endpoint;
                    manifest.advance(Stage::RlRound, round)?;
                    manifest.write(&manifest_path)?;
                }
                Err(error) => {
                    manifest.record_failure(round, Stage::RlRound, error.to_string());
                    manifest.write(&manifest_path)?;
                    return Err(error);
                }
            }
        }

        if !stage_done(&manifest, Stage::Sampling, round) {
            let policy = policy_endpoint(config, &manifest);
            let sample_options = BuildPseudoOptions {
                k: config.candidates_per_set,
                parallelism: config.parallelism,
                root_seed: config.seed,
                iteration: round,
            };
            let sampled = build_pseudo(
                &gateway,
                &policy,
                &config.endpoints.judge,
                inputs.unclick,
                &sample_options,
            );
            let staged = sampled.map_err(PipelineError::from).and_then(|(pseudo, notes)| {
                findings.extend(notes);
                if pseudo.is_empty() && !inputs.unclick.is_empty() {
                    return Err(PipelineError::TransportExhausted { stage: "sampling" });
                }
                let hard = if config.sampler.no_uncertainty {
                    // Ablation: every usable pseudo record trains.
                    let records: Vec<PseudoRecord> = pseudo
                        .records
                        .iter()
                        .filter(|r| !r.uncertainty.excluded)
                        .cloned()
                        .collect();
                    Partition::new(PartitionName::Hard, records)
                } else {
                    select_hard(
                        &pseudo,
                        config.effective_budget(inputs.click.len()),
                        config.sampler.min_uncertainty,
                    )?
                };
                Ok((pseudo, hard))
            });
            match staged {
                Ok((pseudo, hard)) => {
                    let pseudo_path = workdir.join(format!("pseudo-{round}.jsonl"));
                    pseudo.write(&pseudo_path)?;
                    manifest.pin_digest(&format!("pseudo_round_{round}"), &pseudo.digest()?)?;
                    let hard_path = workdir.join(format!("hard-{round}.jsonl"));
                    hard.write(&hard_path)?;
                    manifest.pin_digest(&format!("hard_round_{round}"), &hard.digest()?)?;
                    manifest.advance(Stage::Sampling, round)?;
                    manifest.write(&manifest_path)?;
                }
                Err(error) => {
                    manifest.record_failure(round, Stage::Sampling, error.to_string());
                    manifest.write(&manifest_path)?;
                    return Err(error);
                }
            }
        }

        if options.halt_after_round == Some(round) && round < rounds {
            findings.push(Finding::warning(
                None,
                format!("halted after round {round} as requested; resume to continue"),
            ));
            return Ok(IterateOutcome { manifest, manifest_path, findings });
        }
    }

    if manifest.stage != Stage::Done {
        manifest.advance(Stage::Done, rounds)?;
        manifest.write(&manifest_path)?;
    }
    Ok(IterateOutcome { manifest, manifest_path, findings })
}
