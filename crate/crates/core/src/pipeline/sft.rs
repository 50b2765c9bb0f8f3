//! Supervised warm-up dataset.
//!
//! Clicked suggestion sets become prompt/completion pairs: the same
//! generation prompt the policy sees at serving time, completed with
//! the clicked candidates as a compact options object. General
//! instruction pairs are mixed in at a configurable ratio so the
//! warm-up does not erase the base model's broad instruction skills,
//! and ratio 0 reproduces the domain-only ablation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, PipelineError};
use crate::model::canonical::canonical_json;
use crate::model::{ClickRecord, PairSource, Partition, PartitionName, QaPair, SftPair};
use crate::prompt::render_generation_prompt;

/// The supervised mix plus its composition, for summaries and logs.
#[derive(Debug, Clone)]
pub struct SftBuildOutcome {
    pub partition: Partition<SftPair>,
    pub domain_pairs: usize,
    pub general_pairs: usize,
}

/// Build the supervised mix from clicked data and a general corpus.
///
/// The general share is `round(mix_ratio * domain_pairs)` drawn from a
/// seeded shuffle of the corpus, and the combined list is interleaved
/// by a second seeded shuffle, so the dataset is a pure function of
/// (inputs, mix_ratio, k, seed).
pub fn build_sft_dataset(
    click: &Partition<ClickRecord>,
    general: &[QaPair],
    mix_ratio: f64,
    k: usize,
    seed: u64,
) -> Result<SftBuildOutcome, PipelineError> {
    if click.is_empty() {
        return Err(PipelineError::EmptyPartition { partition: "click" });
    }
    if !(mix_ratio.is_finite() && mix_ratio >= 0.0) {
        return Err(PipelineError::Config("mix_ratio must be finite and >= 0".to_owned()));
    }

    let mut pairs: Vec<SftPair> = click
        .records
        .iter()
        .map(|record| {
            let prompt = render_generation_prompt(&record.context, k).user_text;
            let completion =
                canonical_json(&serde_json::json!({ "options": record.suggestions.candidates }))?;
            Ok(SftPair {
                pair_id: format!("domain/{}", record.context.record_id),
                prompt,
                completion,
                source: PairSource::Domain,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let domain_pairs = pairs.len();

    let general_pairs = (mix_ratio * domain_pairs as f64).round() as usize;
    if general_pairs > general.len() {
        return Err(PipelineError::InsufficientGeneralCorpus {
            needed: general_pairs,
            available: general.len(),
        });
    }
    let mut corpus: Vec<&QaPair> = general.iter().collect();
    corpus.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "sft-general-sample")));
    pairs.extend(corpus.into_iter().take(general_pairs).map(|qa| SftPair {
        pair_id: format!("general/{}", qa.record_id),
        prompt: qa.prompt.clone(),
        completion: qa.completion.clone(),
        source: PairSource::General,
    }));

    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "sft-interleave")));
    Ok(SftBuildOutcome {
        partition: Partition::new(PartitionName::SftMix, pairs),
        domain_pairs,
        general_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::require_valid;
    use crate::synth;

    fn inputs(click_count: usize, general_count: usize) -> (Partition<ClickRecord>, Vec<QaPair>) {
        (synth::click_partition(31, click_count), synth::general_corpus(32, general_count))
    }

    #[test]
    fn ratio_one_doubles_the_domain_pairs() {
        let (click, general) = inputs(100, 120);
        let built = build_sft_dataset(&click, &general, 1.0, 3, 42).unwrap();
        assert_eq!(built.partition.len(), 200);
        assert_eq!((built.domain_pairs, built.general_pairs), (100, 100));
        require_valid(&built.partition).unwrap();
    }

    #[test]
    fn ratio_zero_is_the_domain_only_ablation() {
        let (click, general) = inputs(100, 120);
        let built = build_sft_dataset(&click, &general, 0.0, 3, 42).unwrap();
        assert_eq!(built.partition.len(), 100);
        assert!(built.partition.records.iter().all(|p| p.source == PairSource::Domain));
    }

    #[test]
    fn fractional_ratio_rounds_to_nearest() {
        let (click, general) = inputs(100, 120);
        let built = build_sft_dataset(&click, &general, 0.5, 3, 42).unwrap();
        assert_eq!(built.partition.len(), 150);
    }

    #[test]
    fn interleave_is_seeded_and_mixed() {
        let (click, general) = inputs(60, 80);
        let first = build_sft_dataset(&click, &general, 1.0, 3, 42).unwrap();
        let second = build_sft_dataset(&click, &general, 1.0, 3, 42).unwrap();
        assert_eq!(
            first.partition.digest().unwrap(),
            second.partition.digest().unwrap(),
            "same seed, same interleaving"
        );
        let reseeded = build_sft_dataset(&click, &general, 1.0, 3, 43).unwrap();
        assert_ne!(first.partition.digest().unwrap(), reseeded.partition.digest().unwrap());
        let head_sources: Vec<PairSource> =
            first.partition.records.iter().take(20).map(|p| p.source).collect();
        assert!(head_sources.contains(&PairSource::Domain));
        assert!(head_sources.contains(&PairSource::General), "shuffle interleaves sources");
    }

    #[test]
    fn completion_is_the_clicked_options_object() {
        let (click, general) = inputs(5, 5);
        let built = build_sft_dataset(&click, &general, 0.0, 3, 42).unwrap();
        let pair = &built.partition.records[0];
        let parsed: serde_json::Value = serde_json::from_str(&pair.completion).unwrap();
        let options = parsed["options"].as_array().unwrap();
        assert_eq!(options.len(), 3);
        assert!(pair.prompt.contains("user query:"));
    }

    #[test]
    fn small_corpus_is_rejected_with_counts() {
        let (click, general) = inputs(100, 40);
        let err = build_sft_dataset(&click, &general, 1.0, 3, 42).unwrap_err();
        match err {
            PipelineError::InsufficientGeneralCorpus { needed, available } => {
                assert_eq!((needed, available), (100, 40));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_click_partition_is_rejected() {
        let click = Partition::new(PartitionName::Click, Vec::new());
        let err = build_sft_dataset(&click, &[], 1.0, 3, 42).unwrap_err();
        assert!(matches!(err, PipelineError::EmptyPartition { partition: "click" }));
    }
}
