//! Uncertainty scoring and hard-subset mining over unclicked data.
//!
//! Each unclicked context gets one generated suggestion set; the
//! variance of its per-candidate rewards is the uncertainty score, and
//! the highest-variance records form the hard subset fed into the next
//! training round.

use thiserror::Error;

use crate::gateway::{EndpointConfig, Gateway, GenerationRequest};
use crate::model::{
    ClickRecord, Finding, Partition, PartitionName, PseudoRecord, SuggestionSet,
    UncertaintyRecord,
};
use crate::pipeline::derive_seed;
use crate::prompt::{
    parse_judge_output, parse_options, render_generation_prompt, render_judge_prompt, PromptError,
};
use crate::reward::{per_candidate_reward, RewardError};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("per-candidate reward list is empty")]
    EmptyRewards,

    #[error("reward at index {index} is {value}, outside [0,1]")]
    RewardOutOfRange { index: usize, value: f64 },

    #[error("selection budget must be positive")]
    ZeroBudget,

    #[error(transparent)]
    Prompt(#[from] PromptError),

    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Population variance of the per-candidate rewards: (1/k) Σ (R_i − mean)².
pub fn uncertainty_score(per_candidate_rewards: &[f64]) -> Result<f64, SamplerError> {
    if per_candidate_rewards.is_empty() {
        return Err(SamplerError::EmptyRewards);
    }
    for (index, &value) in per_candidate_rewards.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(SamplerError::RewardOutOfRange { index, value });
        }
    }
    let k = per_candidate_rewards.len() as f64;
    let mean = per_candidate_rewards.iter().sum::<f64>() / k;
    Ok(per_candidate_rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k)
}

/// Select up to `budget` usable records with u ≥ `min_u`, ordered by
/// (u descending, record_id ascending). Excluded records (malformed or
/// unjudged generations) never qualify.
pub fn select_hard(
    pseudo: &Partition<PseudoRecord>,
    budget: usize,
    min_u: f64,
) -> Result<Partition<PseudoRecord>, SamplerError> {
    if budget == 0 {
        return Err(SamplerError::ZeroBudget);
    }
    let mut eligible: Vec<PseudoRecord> = pseudo
        .records
        .iter()
        .filter(|r| !r.uncertainty.excluded && r.uncertainty.u >= min_u)
        .cloned()
        .collect();
    eligible.sort_by(|a, b| {
        b.uncertainty
            .u
            .partial_cmp(&a.uncertainty.u)
            .expect("uncertainty scores are finite")
            .then_with(|| a.context.record_id.cmp(&b.context.record_id))
    });
    eligible.truncate(budget);
    Ok(Partition::new(PartitionName::Hard, eligible))
}

/// Settings for one pseudo-labeling pass.
#[derive(Debug, Clone)]
pub struct BuildPseudoOptions {
    /// Candidates per suggestion set.
    pub k: usize,
    /// Gateway parallelism.
    pub parallelism: usize,
    /// Run-level seed; per-call seeds are derived from it.
    pub root_seed: u64,
    /// Iteration index, kept in the seed labels so each round samples
    /// fresh generations.
    pub iteration: u32,
}

/// Generate and judge one suggestion set per unclicked record, scoring
/// each with its reward-variance uncertainty.
///
/// Per-record failures never abort the pass: a transport failure skips
/// the record with a finding; a malformed generation or unusable judge
/// reply yields an excluded record with u = 0.
pub fn build_pseudo(
    gateway: &Gateway,
    policy: &EndpointConfig,
    judge: &EndpointConfig,
    unclick: &Partition<ClickRecord>,
    opts: &BuildPseudoOptions,
) -> Result<(Partition<PseudoRecord>, Vec<Finding>), SamplerError> {
    let mut findings = Vec::new();
    let requests: Vec<GenerationRequest> = unclick
        .records
        .iter()
        .map(|record| {
            let id = &record.context.record_id;
            let prompt = render_generation_prompt(&record.context, opts.k);
            let seed =
                derive_seed(opts.root_seed, &format!("pseudo/{}/gen/{id}", opts.iteration));
            GenerationRequest::new(prompt.user_text, seed)
        })
        .collect();
    let generated = gateway.complete_batch(policy, &requests, opts.parallelism);

    // Records that parsed cleanly move on to judging; the rest are
    // either skipped (transport) or kept as excluded.
    let mut slots: Vec<Option<PseudoRecord>> = vec![None; unclick.records.len()];
    let mut to_judge: Vec<(usize, SuggestionSet)> = Vec::new();
    for (index, outcome) in generated {
        let record = &unclick.records[index];
        let id = record.context.record_id.clone();
        match outcome {
            Err(error) => {
                findings.push(Finding::error(
                    Some(&id),
                    format!("generation failed, record skipped: {error}"),
                ));
            }
            Ok(raw) => {
                let set = parse_options(&raw, opts.k).for_context(&id);
                if set.format_ok {
                    to_judge.push((index, set));
                } else {
                    findings.push(Finding::warning(
                        Some(&id),
                        "generation did not satisfy the output contract; excluded from selection",
                    ));
                    slots[index] = Some(excluded_record(record, set));
                }
            }
        }
    }

    let judge_requests: Vec<GenerationRequest> = to_judge
        .iter()
        .map(|(index, set)| {
            let record = &unclick.records[*index];
            let prompt = render_judge_prompt(&record.context, set)?;
            let seed = derive_seed(
                opts.root_seed,
                &format!("pseudo/{}/judge/{}", opts.iteration, record.context.record_id),
            );
            Ok(GenerationRequest::new(prompt.user_text, seed))
        })
        .collect::<Result<_, PromptError>>()?;
    let judged = gateway.complete_batch(judge, &judge_requests, opts.parallelism);

    for (queue_index, outcome) in judged {
        let (record_index, set) = &to_judge[queue_index];
        let record = &unclick.records[*record_index];
        let id = record.context.record_id.clone();
        let verdict = match outcome {
            Err(error) => {
                findings.push(Finding::warning(
                    Some(&id),
                    format!("judge unreachable; excluded from selection: {error}"),
                ));
                None
            }
            Ok(raw) => match parse_judge_output(&raw, opts.k) {
                Ok(verdict) => Some(verdict),
                Err(error) => {
                    findings.push(Finding::warning(
                        Some(&id),
                        format!("judge reply unusable; excluded from selection: {error}"),
                    ));
                    None
                }
            },
        };
        slots[*record_index] = Some(match verdict {
            None => excluded_record(record, set.clone()),
            Some(verdict) => {
                let rewards = (0..verdict.k())
                    .map(|i| per_candidate_reward(&verdict, i))
                    .collect::<Result<Vec<_>, _>>()?;
                let u = uncertainty_score(&rewards)?;
                PseudoRecord {
                    context: record.context.clone(),
                    suggestions: set.clone(),
                    uncertainty: UncertaintyRecord {
                        context_ref: id,
                        per_candidate_rewards: rewards,
                        u,
                        excluded: false,
                    },
                }
            }
        });
    }

    let records: Vec<PseudoRecord> = slots.into_iter().flatten().collect();
    Ok((Partition::new(PartitionName::Pseudo, records), findings))
}

fn excluded_record(source: &ClickRecord, suggestions: SuggestionSet) -> PseudoRecord {
    PseudoRecord {
        context: source.context.clone(),
        suggestions,
        uncertainty: UncertaintyRecord {
            context_ref: source.context.record_id.clone(),
            per_candidate_rewards: Vec::new(),
            u: 0.0,
            excluded: true,
        },
    }
}
