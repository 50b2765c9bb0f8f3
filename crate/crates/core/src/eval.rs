//! Offline evaluation: judging predicted suggestions and computing
//! strict accuracy, valid rate, per-dimension accuracy, intent
//! breakdowns, repeated-run statistics, and judge-human agreement.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EndpointConfig, Gateway, GenerationRequest};
use crate::model::{
    canonical_json, DialogueContext, Finding, Intent, JudgeVerdict, ModelError, SuggestionSet,
};
use crate::pipeline::derive_seed;
use crate::prompt::{parse_judge_output, render_judge_prompt, PromptError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric computed over an empty verdict list")]
    Empty,

    #[error("repeats must be >= 1, got {0}")]
    BadRepeats(usize),

    #[error("label lists differ in length: judge {judge} vs human {human}")]
    LengthMismatch { judge: usize, human: usize },

    #[error("run {run} produced different metric keys than run 0")]
    KeyMismatch { run: usize },

    #[error(transparent)]
    Prompt(#[from] PromptError),

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The three quality dimensions of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Answerable,
    Factual,
    Informative,
}

impl Dimension {
    pub const ALL: [Dimension; 3] =
        [Dimension::Answerable, Dimension::Factual, Dimension::Informative];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Answerable => "answerable",
            Dimension::Factual => "factual",
            Dimension::Informative => "informative",
        }
    }
}

/// Judge every prediction, aligned by index. Format failures are judged
/// locally as all-fail verdicts (the format penalty is the model's own);
/// transport failures and unusable judge replies leave `None` with a
/// finding so infrastructure trouble never poses as model quality.
pub fn judge_outputs(
    gateway: &Gateway,
    judge: &EndpointConfig,
    items: &[(DialogueContext, SuggestionSet)],
    root_seed: u64,
    repeat: usize,
    parallelism: usize,
) -> Result<(Vec<Option<JudgeVerdict>>, Vec<Finding>), EvalError> {
    let mut findings = Vec::new();
    let mut verdicts: Vec<Option<JudgeVerdict>> = vec![None; items.len()];
    let mut requests = Vec::new();
    let mut request_targets = Vec::new();
    for (index, (ctx, set)) in items.iter().enumerate() {
        if !set.format_ok {
            verdicts[index] =
                Some(JudgeVerdict::all_fail(set.k, "output contract violated; judged locally"));
            continue;
        }
        let prompt = render_judge_prompt(ctx, set)?;
        let seed = derive_seed(
            root_seed,
            &format!("eval/{repeat}/judge/{}", ctx.record_id),
        );
        requests.push(GenerationRequest::new(prompt.user_text, seed));
        request_targets.push(index);
    }

    for (queue_index, outcome) in gateway.complete_batch(judge, &requests, parallelism) {
        let index = request_targets[queue_index];
        let (ctx, set) = &items[index];
        match outcome {
            Err(error) => findings.push(Finding::error(
                Some(&ctx.record_id),
                format!("judge unreachable; item unjudged: {error}"),
            )),
            Ok(raw) => match parse_judge_output(&raw, set.k) {
                Ok(verdict) => verdicts[index] = Some(verdict),
                Err(error) => findings.push(Finding::error(
                    Some(&ctx.record_id),
                    format!("judge reply unusable; item unjudged: {error}"),
                )),
            },
        }
    }
    Ok((verdicts, findings))
}

/// Fraction of queries whose every candidate passes all three rules.
pub fn strict_accuracy(verdicts: &[JudgeVerdict]) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty);
    }
    let strict = verdicts.iter().filter(|v| v.passing() == v.k()).count();
    Ok(strict as f64 / verdicts.len() as f64)
}

/// Fraction of individual candidates passing all three rules.
pub fn valid_rate(verdicts: &[JudgeVerdict]) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: usize = verdicts.iter().map(JudgeVerdict::k).sum();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let valid: usize = verdicts.iter().map(JudgeVerdict::passing).sum();
    Ok(valid as f64 / total as f64)
}

/// Fraction of candidates passing one dimension.
pub fn dimension_accuracy(verdicts: &[JudgeVerdict], dim: Dimension) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: usize = verdicts.iter().map(JudgeVerdict::k).sum();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let passing: usize = verdicts
        .iter()
        .flat_map(|v| v.per_candidate.iter())
        .filter(|d| match dim {
            Dimension::Answerable => d.answerable,
            Dimension::Factual => d.factual,
            Dimension::Informative => d.informative,
        })
        .count();
    Ok(passing as f64 / total as f64)
}

/// All five scalar metrics under their report keys.
pub fn metric_set(verdicts: &[JudgeVerdict]) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut metrics = BTreeMap::new();
    metrics.insert("strict_accuracy".to_owned(), strict_accuracy(verdicts)?);
    metrics.insert("valid_rate".to_owned(), valid_rate(verdicts)?);
    for dim in Dimension::ALL {
        metrics.insert(
            format!("{}_accuracy", dim.as_str()),
            dimension_accuracy(verdicts, dim)?,
        );
    }
    Ok(metrics)
}

/// Mean and spread of one metric over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); absent for a single run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

/// Run `run_fn` `repeats` times (it receives the repeat index) and fold
/// the per-run metric maps into mean ± sample std per key.
pub fn repeated_runs<F>(
    mut run_fn: F,
    repeats: usize,
) -> Result<BTreeMap<String, MeanStd>, EvalError>
where
    F: FnMut(usize) -> Result<BTreeMap<String, f64>, EvalError>,
{
    if repeats < 1 {
        return Err(EvalError::BadRepeats(repeats));
    }
    let mut runs: Vec<BTreeMap<String, f64>> = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let metrics = run_fn(repeat)?;
        if repeat > 0 && !keys_match(&runs[0], &metrics) {
            return Err(EvalError::KeyMismatch { run: repeat });
        }
        runs.push(metrics);
    }
    let mut out = BTreeMap::new();
    for key in runs[0].keys() {
        let values: Vec<f64> = runs.iter().map(|r| r[key]).collect();
        // Identical runs must report exactly zero spread; the summed
        // mean of equal values can round and leave 1e-16 residue.
        if values.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()) {
            let std = (values.len() > 1).then_some(0.0);
            out.insert(key.clone(), MeanStd { mean: values[0], std });
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (values.len() - 1) as f64).sqrt()
        });
        out.insert(key.clone(), MeanStd { mean, std });
    }
    Ok(out)
}

fn keys_match(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> bool {
    a.len() == b.len() && a.keys().zip(b.keys()).all(|(x, y)| x == y)
}

/// Strict accuracy and valid rate within one intent bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub count: usize,
    pub strict_accuracy: f64,
    pub valid_rate: f64,
}

/// Metrics grouped by intent. Intents with no records are absent from
/// the map, never reported as zero.
pub fn intent_breakdown(
    items: &[(Intent, JudgeVerdict)],
) -> Result<BTreeMap<Intent, BucketMetrics>, EvalError> {
    let mut grouped: BTreeMap<Intent, Vec<JudgeVerdict>> = BTreeMap::new();
    for (intent, verdict) in items {
        grouped.entry(*intent).or_default().push(verdict.clone());
    }
    let mut out = BTreeMap::new();
    for (intent, verdicts) in grouped {
        out.insert(
            intent,
            BucketMetrics {
                count: verdicts.len(),
                strict_accuracy: strict_accuracy(&verdicts)?,
                valid_rate: valid_rate(&verdicts)?,
            },
        );
    }
    Ok(out)
}

/// Fraction of sampled suggestions where the judge's pass/fail matches
/// the human label.
pub fn judge_human_agreement(judge: &[bool], human: &[bool]) -> Result<f64, EvalError> {
    if judge.len() != human.len() {
        return Err(EvalError::LengthMismatch { judge: judge.len(), human: human.len() });
    }
    if judge.is_empty() {
        return Err(EvalError::Empty);
    }
    let agree = judge.iter().zip(human).filter(|(j, h)| j == h).count();
    Ok(agree as f64 / judge.len() as f64)
}

/// One sampled suggestion with its judge verdict and human annotation,
/// as exchanged in line-delimited label files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub item_id: String,
    pub judge_pass: bool,
    pub human_pass: bool,
}

/// Agreement fraction over paired label records.
pub fn agreement_from_records(records: &[AgreementRecord]) -> Result<f64, EvalError> {
    let judge: Vec<bool> = records.iter().map(|r| r.judge_pass).collect();
    let human: Vec<bool> = records.iter().map(|r| r.human_pass).collect();
    judge_human_agreement(&judge, &human)
}

/// Full evaluation report, serialized canonically for digest-stable
/// comparison across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub judge_model: String,
    pub config_digest: String,
    pub repeats: usize,
    pub repeat_seeds: Vec<u64>,
    /// Spread convention used in `metrics`.
    pub std_convention: String,
    pub metrics: BTreeMap<String, MeanStd>,
    pub intent_buckets: BTreeMap<String, BucketMetrics>,
    /// Items excluded from denominators because judging failed.
    pub unjudged: usize,
    /// Fraction of judged verdicts that were aggregate-only fallbacks.
    pub degraded_fraction: f64,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let text = canonical_json(self)?;
        fs::write(path, format!("{text}\n"))
            .map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })?;
        Ok(())
    }

    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut lines = Vec::new();
        lines.push(format!("judge model: {}", self.judge_model));
        lines.push(format!("repeats: {} (std: {})", self.repeats, self.std_convention));
        lines.push(format!("unjudged items: {}", self.unjudged));
        lines.push(format!("degraded verdict fraction: {:.4}", self.degraded_fraction));
        lines.push(String::new());
        lines.push(format!("{:<24} {:>10} {:>10}", "metric", "mean", "std"));
        for (key, value) in &self.metrics {
            let std = value
                .std
                .map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "-".to_owned());
            lines.push(format!("{key:<24} {:>10.4} {std:>10}", value.mean));
        }
        if !self.intent_buckets.is_empty() {
            lines.push(String::new());
            lines.push(format!(
                "{:<24} {:>8} {:>10} {:>10}",
                "intent", "count", "strict", "valid"
            ));
            for (intent, bucket) in &self.intent_buckets {
                lines.push(format!(
                    "{intent:<24} {:>8} {:>10.4} {:>10.4}",
                    bucket.count, bucket.strict_accuracy, bucket.valid_rate
                ));
            }
        }
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::model::DimensionScores;
    use proptest::prelude::*;

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

    fn all_pass() -> JudgeVerdict {
        verdict(&[(true, true, true); 3])
    }

    fn one_fail() -> JudgeVerdict {
        verdict(&[(true, true, true), (true, false, true), (true, true, true)])
    }

    #[test]
    fn strict_and_valid_match_their_definitions() {
        let verdicts = vec![all_pass(), one_fail()];
        assert_eq!(strict_accuracy(&verdicts).unwrap(), 0.5);
        assert_eq!(valid_rate(&verdicts).unwrap(), 5.0 / 6.0);
        assert_eq!(strict_accuracy(&[all_pass()]).unwrap(), 1.0);
        let all_fail = vec![verdict(&[(false, false, false); 3])];
        assert_eq!(valid_rate(&all_fail).unwrap(), 0.0);
        assert!(matches!(strict_accuracy(&[]), Err(EvalError::Empty)));
        assert!(matches!(valid_rate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn dimension_accuracy_counts_single_dimensions() {
        let verdicts = vec![verdict(&[(true, false, true); 3]); 4];
        assert_eq!(dimension_accuracy(&verdicts, Dimension::Answerable).unwrap(), 1.0);
        assert_eq!(dimension_accuracy(&verdicts, Dimension::Factual).unwrap(), 0.0);
        assert_eq!(dimension_accuracy(&verdicts, Dimension::Informative).unwrap(), 1.0);

        let single = vec![verdict(&[(true, true, true)])];
        for dim in Dimension::ALL {
            assert_eq!(dimension_accuracy(&single, dim).unwrap(), 1.0);
        }
    }

    #[test]
    fn repeated_runs_fold_mean_and_sample_std() {
        let values = [0.4, 0.5, 0.6];
        let stats = repeated_runs(
            |i| Ok(BTreeMap::from([("m".to_owned(), values[i])])),
            3,
        )
        .unwrap();
        let m = &stats["m"];
        assert!((m.mean - 0.5).abs() < 1e-12);
        assert!((m.std.unwrap() - 0.1).abs() < 1e-12);

        let constant = repeated_runs(|_| Ok(BTreeMap::from([("m".to_owned(), 0.7)])), 3).unwrap();
        assert_eq!(constant["m"].std.unwrap(), 0.0);

        let single = repeated_runs(|_| Ok(BTreeMap::from([("m".to_owned(), 0.7)])), 1).unwrap();
        assert!(single["m"].std.is_none());

        assert!(matches!(repeated_runs(|_| Ok(BTreeMap::new()), 0), Err(EvalError::BadRepeats(0))));

        let mismatched = repeated_runs(
            |i| Ok(BTreeMap::from([(format!("m{i}"), 0.0)])),
            2,
        );
        assert!(matches!(mismatched, Err(EvalError::KeyMismatch { run: 1 })));
    }

    #[test]
    fn intent_buckets_report_only_populated_intents() {
        let items = vec![
            (Intent::PlatformQa, all_pass()),
            (Intent::PlatformQa, one_fail()),
            (Intent::SmallTalk, all_pass()),
        ];
        let buckets = intent_breakdown(&items).unwrap();
        assert_eq!(buckets.len(), 2);
        assert!(!buckets.contains_key(&Intent::ProductQa));
        let platform = &buckets[&Intent::PlatformQa];
        assert_eq!(platform.count, 2);
        assert_eq!(platform.strict_accuracy, 0.5);
        assert_eq!(platform.valid_rate, 5.0 / 6.0);
        assert_eq!(buckets[&Intent::SmallTalk].strict_accuracy, 1.0);
    }

    #[test]
    fn agreement_matches_hand_counts() {
        let mut judge = vec![true; 500];
        let human = vec![true; 500];
        for slot in judge.iter_mut().take(48) {
            *slot = false;
        }
        assert_eq!(judge_human_agreement(&judge, &human).unwrap(), 0.904);
        assert_eq!(judge_human_agreement(&human, &human).unwrap(), 1.0);
        let complement: Vec<bool> = human.iter().map(|b| !b).collect();
        assert_eq!(judge_human_agreement(&complement, &human).unwrap(), 0.0);
        assert!(matches!(
            judge_human_agreement(&[true], &[true, false]),
            Err(EvalError::LengthMismatch { judge: 1, human: 2 })
        ));
    }

    fn eval_items(count: usize) -> Vec<(DialogueContext, SuggestionSet)> {
        (0..count)
            .map(|i| {
                let ctx = DialogueContext::new(format!("t{i:03}"), format!("test query {i}"));
                let set = SuggestionSet {
                    context_ref: ctx.record_id.clone(),
                    candidates: vec![
                        format!("first follow-up {i}"),
                        format!("second follow-up {i}"),
                        format!("third follow-up {i}"),
                    ],
                    k: 3,
                    format_ok: true,
                    raw_output: String::new(),
                };
                (ctx, set)
            })
            .collect()
    }

    #[test]
    fn judging_covers_every_item_and_flags_failures() {
        let items = eval_items(20);
        let gateway = Gateway::mock(MockBackend::new(3, 3));
        let (verdicts, findings) =
            judge_outputs(&gateway, &EndpointConfig::default(), &items, 11, 0, 4).unwrap();
        assert_eq!(verdicts.len(), 20);
        assert!(verdicts.iter().all(Option::is_some));
        assert!(findings.is_empty());

        let failing = Gateway::mock(MockBackend::new(3, 3).with_failure_rate(1.0));
        let (verdicts, findings) =
            judge_outputs(&failing, &EndpointConfig::default(), &items, 11, 0, 4).unwrap();
        assert!(verdicts.iter().all(Option::is_none));
        assert_eq!(findings.len(), 20);
    }

    #[test]
    fn malformed_predictions_are_judged_locally_as_all_fail() {
        let mut items = eval_items(3);
        items[1].1 = SuggestionSet::malformed("t001", 3, "garbage");
        let gateway = Gateway::mock(MockBackend::new(3, 3));
        let (verdicts, findings) =
            judge_outputs(&gateway, &EndpointConfig::default(), &items, 11, 0, 2).unwrap();
        assert!(findings.is_empty());
        let middle = verdicts[1].as_ref().unwrap();
        assert_eq!(middle.passing(), 0);
        assert_eq!(middle.k(), 3);
    }

    /// Uniform candidate count across verdicts: strict ≤ valid relies on
    /// every query contributing the same number of candidates, which is
    /// how the pipeline always evaluates.
    fn verdicts_strategy() -> impl Strategy<Value = Vec<JudgeVerdict>> {
        (1usize..5).prop_flat_map(|k| {
            proptest::collection::vec(
                proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), k)
                    .prop_map(|dims| verdict(&dims)),
                1..40,
            )
        })
    }

    proptest! {
        #[test]
        fn strict_is_bounded_by_valid_and_dimensions(verdicts in verdicts_strategy()) {
            let strict = strict_accuracy(&verdicts).unwrap();
            let valid = valid_rate(&verdicts).unwrap();
            prop_assert!(strict <= valid + 1e-12);
            for dim in Dimension::ALL {
                prop_assert!(valid <= dimension_accuracy(&verdicts, dim).unwrap() + 1e-12);
            }
        }
    }
}
