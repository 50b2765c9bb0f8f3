//! Reward computation and group-relative advantages.
//!
//! A rollout's reward is the format reward times the mean of the
//! per-candidate quality products; advantages normalize rewards within
//! each rollout group. Everything here is pure arithmetic over already
//! parsed verdicts, so callers may parallelize freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{JudgeVerdict, RewardBreakdown, RolloutGroup, ScoredRollout, SuggestionSet};

/// Damping term added to the population std in advantage normalization.
pub const ADVANTAGE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("candidate index {index} out of range for k={k}")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("per-candidate product list is empty")]
    EmptyProducts,

    #[error("format reward must be 0 or 1, got {0}")]
    BadFormatReward(u8),

    #[error("product at index {index} is {value}, outside [0,1]")]
    ProductOutOfRange { index: usize, value: f64 },

    #[error("advantage group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),

    #[error("rollout for context {context_ref} parsed cleanly but carries no verdict")]
    MissingVerdict { context_ref: String },

    #[error("verdict covers {verdict_k} candidates but the suggestion set has {set_k}")]
    ArityMismatch { verdict_k: usize, set_k: usize },

    #[error("rollout in group {group_id} has no advantage; score the group first")]
    MissingAdvantage { group_id: String },
}

/// Format reward: 1 iff the rollout satisfied the output contract.
pub fn format_reward(suggestions: &SuggestionSet) -> u8 {
    u8::from(suggestions.format_ok)
}

/// Quality reward of candidate `i`: the product of its three binary
/// dimension scores.
pub fn per_candidate_reward(verdict: &JudgeVerdict, i: usize) -> Result<f64, RewardError> {
    verdict
        .per_candidate
        .get(i)
        .map(|d| d.product())
        .ok_or(RewardError::IndexOutOfRange { index: i, k: verdict.k() })
}

/// Rollout reward: r_f × (1/k) × Σ products.
pub fn rollout_reward(r_f: u8, products: &[f64]) -> Result<f64, RewardError> {
    if r_f > 1 {
        return Err(RewardError::BadFormatReward(r_f));
    }
    if products.is_empty() {
        return Err(RewardError::EmptyProducts);
    }
    for (index, &value) in products.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(RewardError::ProductOutOfRange { index, value });
        }
    }
    let mean = products.iter().sum::<f64>() / products.len() as f64;
    Ok(f64::from(r_f) * mean)
}

/// Group-relative advantages: (r_i − mean) / (std_pop + ε). A group of
/// identical rewards has all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    let n = rewards.len();
    if n < 2 {
        return Err(RewardError::GroupTooSmall(n));
    }
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return Ok(vec![0.0; n]);
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = variance.sqrt() + ADVANTAGE_EPSILON;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Score a group of rollouts for one context: compute each rollout's
/// reward breakdown and fill in group-relative advantages.
///
/// A well-formed rollout must come with a verdict; malformed rollouts
/// must not (their candidates were never judged) and score zero.
pub fn score_rollout_group(
    context_ref: &str,
    rollouts: Vec<(SuggestionSet, Option<JudgeVerdict>)>,
) -> Result<RolloutGroup, RewardError> {
    let n = rollouts.len();
    if n < 2 {
        return Err(RewardError::GroupTooSmall(n));
    }
    let mut scored = Vec::with_capacity(n);
    for (suggestions, verdict) in rollouts {
        let r_f = format_reward(&suggestions);
        let (products, degraded) = if suggestions.format_ok {
            let verdict = verdict.ok_or_else(|| RewardError::MissingVerdict {
                context_ref: context_ref.to_owned(),
            })?;
            if verdict.k() != suggestions.candidates.len() {
                return Err(RewardError::ArityMismatch {
                    verdict_k: verdict.k(),
                    set_k: suggestions.candidates.len(),
                });
            }
            let products = (0..verdict.k())
                .map(|i| per_candidate_reward(&verdict, i))
                .collect::<Result<Vec<_>, _>>()?;
            (products, verdict.degraded)
        } else {
            (vec![0.0; suggestions.k], false)
        };
        let reward = rollout_reward(r_f, &products)?;
        scored.push(ScoredRollout {
            suggestion_set: suggestions,
            reward: RewardBreakdown {
                format_reward: r_f,
                per_candidate_products: products,
                rollout_reward: reward,
            },
            advantage: None,
            degraded,
        });
    }
    let rewards: Vec<f64> = scored.iter().map(|r| r.reward.rollout_reward).collect();
    let advantages = group_advantages(&rewards)?;
    for (rollout, advantage) in scored.iter_mut().zip(advantages) {
        rollout.advantage = Some(advantage);
    }
    Ok(RolloutGroup { context_ref: context_ref.to_owned(), rollouts: scored, n })
}

/// One line of the GRPO export file consumed by the external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoExportRecord {
    /// Record id of the training context; all rollouts of one context
    /// share it.
    pub group_id: String,
    /// Rendered generation prompt the rollout answered.
    pub prompt: String,
    pub candidates: Vec<String>,
    pub reward: f64,
    pub advantage: f64,
    pub degraded: bool,
}

/// Flatten a scored group into export lines. The group must already
/// carry advantages.
pub fn export_records(group: &RolloutGroup, prompt: &str) -> Result<Vec<GrpoExportRecord>, RewardError> {
    group
        .rollouts
        .iter()
        .map(|rollout| {
            let advantage = rollout.advantage.ok_or_else(|| RewardError::MissingAdvantage {
                group_id: group.context_ref.clone(),
            })?;
            Ok(GrpoExportRecord {
                group_id: group.context_ref.clone(),
                prompt: prompt.to_owned(),
                candidates: rollout.suggestion_set.candidates.clone(),
                reward: rollout.reward.rollout_reward,
                advantage,
                degraded: rollout.degraded,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DimensionScores;
    use proptest::prelude::*;

    fn set(context_ref: &str, format_ok: bool, k: usize) -> SuggestionSet {
        if format_ok {
            SuggestionSet {
                context_ref: context_ref.to_owned(),
                candidates: (0..k).map(|i| format!("q{i}")).collect(),
                k,
                format_ok: true,
                raw_output: String::new(),
            }
        } else {
            SuggestionSet::malformed(context_ref, k, "junk")
        }
    }

    fn verdict(dims: &[(bool, bool, bool)]) -> JudgeVerdict {
        let per_candidate: Vec<DimensionScores> =
            dims.iter().map(|&(a, f, g)| DimensionScores::new(a, f, g)).collect();
        let aggregate = per_candidate.iter().filter(|d| d.passes_all()).count() as u32;
        JudgeVerdict {
            per_candidate,
            aggregate_score: aggregate,
            reason: String::new(),
            raw_output: String::new(),
            degraded: false,
        }
    }

    #[test]
    fn format_reward_is_the_format_flag() {
        assert_eq!(format_reward(&set("r", true, 3)), 1);
        assert_eq!(format_reward(&set("r", false, 3)), 0);
    }

    #[test]
    fn per_candidate_reward_is_the_dimension_product() {
        let v = verdict(&[(true, true, true), (true, false, true), (false, false, false)]);
        assert_eq!(per_candidate_reward(&v, 0).unwrap(), 1.0);
        assert_eq!(per_candidate_reward(&v, 1).unwrap(), 0.0);
        assert_eq!(per_candidate_reward(&v, 2).unwrap(), 0.0);
        assert!(matches!(
            per_candidate_reward(&v, 3),
            Err(RewardError::IndexOutOfRange { index: 3, k: 3 })
        ));
    }

    #[test]
    fn rollout_reward_matches_the_stated_form() {
        assert_eq!(rollout_reward(1, &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rollout_reward(0, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(rollout_reward(1, &[1.0, 0.0, 0.0]).unwrap(), 1.0 / 3.0);
        assert!(matches!(rollout_reward(1, &[]), Err(RewardError::EmptyProducts)));
        assert!(matches!(rollout_reward(2, &[1.0]), Err(RewardError::BadFormatReward(2))));
        assert!(matches!(
            rollout_reward(1, &[1.5]),
            Err(RewardError::ProductOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn equal_rewards_have_zero_advantages() {
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0, 1.0]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[0.1, 0.1]).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn two_point_group_matches_the_hand_oracle() {
        let adv = group_advantages(&[0.0, 1.0]).unwrap();
        let expected = 0.5 / (0.5 + ADVANTAGE_EPSILON);
        assert!((adv[0] + expected).abs() < 1e-12);
        assert!((adv[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn three_point_group_matches_brute_force() {
        let rewards = [0.2, 0.4, 0.6];
        let adv = group_advantages(&rewards).unwrap();
        let mean: f64 = rewards.iter().sum::<f64>() / 3.0;
        let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        for (a, r) in adv.iter().zip(rewards) {
            assert!((a - (r - mean) / (std + ADVANTAGE_EPSILON)).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_groups_are_rejected() {
        assert!(matches!(group_advantages(&[1.0]), Err(RewardError::GroupTooSmall(1))));
        assert!(matches!(
            score_rollout_group("r", vec![(set("r", true, 3), Some(verdict(&[(true, true, true); 3])))]),
            Err(RewardError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn perfect_versus_malformed_pair() {
        let group = score_rollout_group(
            "r",
            vec![
                (set("r", true, 3), Some(verdict(&[(true, true, true); 3]))),
                (set("r", false, 3), None),
            ],
        )
        .unwrap();
        let rewards: Vec<f64> = group.rollouts.iter().map(|r| r.reward.rollout_reward).collect();
        assert_eq!(rewards, vec![1.0, 0.0]);
        let expected = 0.5 / (0.5 + ADVANTAGE_EPSILON);
        assert!((group.rollouts[0].advantage.unwrap() - expected).abs() < 1e-12);
        assert!((group.rollouts[1].advantage.unwrap() + expected).abs() < 1e-12);
    }

    #[test]
    fn all_malformed_group_is_flat_zero() {
        let group = score_rollout_group(
            "r",
            vec![(set("r", false, 3), None), (set("r", false, 3), None)],
        )
        .unwrap();
        for rollout in &group.rollouts {
            assert_eq!(rollout.reward.rollout_reward, 0.0);
            assert_eq!(rollout.reward.per_candidate_products, vec![0.0; 3]);
            assert_eq!(rollout.advantage, Some(0.0));
        }
    }

    #[test]
    fn well_formed_rollout_requires_a_verdict() {
        let err = score_rollout_group(
            "r",
            vec![(set("r", true, 3), None), (set("r", false, 3), None)],
        )
        .unwrap_err();
        assert!(matches!(err, RewardError::MissingVerdict { .. }));

        let err = score_rollout_group(
            "r",
            vec![
                (set("r", true, 3), Some(verdict(&[(true, true, true); 2]))),
                (set("r", false, 3), None),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, RewardError::ArityMismatch { verdict_k: 2, set_k: 3 }));
    }

    #[test]
    fn degraded_flag_flows_to_the_scored_rollout() {
        let mut v = verdict(&[(true, true, true); 3]);
        v.degraded = true;
        let group = score_rollout_group(
            "r",
            vec![(set("r", true, 3), Some(v)), (set("r", false, 3), None)],
        )
        .unwrap();
        assert!(group.rollouts[0].degraded);
        assert!(!group.rollouts[1].degraded);
    }

    #[test]
    fn export_records_flatten_a_scored_group() {
        let group = score_rollout_group(
            "ctx-7",
            vec![
                (set("ctx-7", true, 3), Some(verdict(&[(true, true, true); 3]))),
                (set("ctx-7", false, 3), None),
            ],
        )
        .unwrap();
        let records = export_records(&group, "PROMPT").unwrap();
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.group_id == "ctx-7" && r.prompt == "PROMPT"));
        assert_eq!(records[0].reward, 1.0);
        assert_eq!(records[1].candidates, Vec::<String>::new());

        let unscored = RolloutGroup { context_ref: "ctx-7".into(), rollouts: vec![ScoredRollout {
            suggestion_set: set("ctx-7", false, 3),
            reward: RewardBreakdown { format_reward: 0, per_candidate_products: vec![0.0; 3], rollout_reward: 0.0 },
            advantage: None,
            degraded: false,
        }], n: 1 };
        assert!(matches!(
            export_records(&unscored, "PROMPT"),
            Err(RewardError::MissingAdvantage { .. })
        ));
    }

    fn products_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0)], 1..8)
    }

    proptest! {
        #[test]
        fn reward_bounds_hold(r_f in 0u8..=1, products in products_strategy()) {
            let r = rollout_reward(r_f, &products).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            if r_f == 0 {
                prop_assert_eq!(r, 0.0);
            }
        }

        #[test]
        fn reward_is_permutation_invariant(products in products_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = products.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(
                rollout_reward(1, &products).unwrap(),
                rollout_reward(1, &shuffled).unwrap()
            );
        }

        #[test]
        fn flipping_a_dimension_up_never_decreases_reward(
            dims in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..6),
            flip_index in any::<prop::sample::Index>(),
        ) {
            let v = verdict(&dims);
            let products: Vec<f64> =
                (0..v.k()).map(|i| per_candidate_reward(&v, i).unwrap()).collect();
            let before = rollout_reward(1, &products).unwrap();

            let i = flip_index.index(dims.len());
            let mut flipped = dims.clone();
            flipped[i] = (true, flipped[i].1, flipped[i].2);
            let v = verdict(&flipped);
            let products: Vec<f64> =
                (0..v.k()).map(|j| per_candidate_reward(&v, j).unwrap()).collect();
            let after = rollout_reward(1, &products).unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn advantages_are_centered_and_sign_consistent(
            rewards in proptest::collection::vec(0.0f64..=1.0, 2..12)
        ) {
            let adv = group_advantages(&rewards).unwrap();
            let mean_adv: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
            prop_assert!(mean_adv.abs() < 1e-9);
            let mean: f64 = rewards.iter().sum::<f64>() / rewards.len() as f64;
            for (a, r) in adv.iter().zip(&rewards) {
                if *r > mean {
                    prop_assert!(*a > 0.0);
                } else if *r < mean {
                    prop_assert!(*a < 0.0);
                }
            }
        }

        #[test]
        fn positive_scaling_preserves_advantage_ordering(
            rewards in proptest::collection::vec(0.0f64..=1.0, 2..10),
            scale in 0.01f64..100.0,
        ) {
            let base = group_advantages(&rewards).unwrap();
            let scaled_rewards: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
            let scaled = group_advantages(&scaled_rewards).unwrap();
            let order = |xs: &[f64]| {
                let mut idx: Vec<usize> = (0..xs.len()).collect();
                idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap().then(a.cmp(&b)));
                idx
            };
            prop_assert_eq!(order(&base), order(&scaled));
        }
    }
}
