//! Domain types shared by every pipeline stage.
//!
//! All types are immutable after construction; pipeline stages build new
//! values instead of mutating shared ones, so everything here is safe to
//! hand to concurrent workers.

use serde::{Deserialize, Serialize};

use super::validate::{Finding, Severity};

/// Who produced a dialogue turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Assistant,
}

/// One prior turn of the conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
}

impl Turn {
    pub fn user(utterance: impl Into<String>) -> Self {
        Turn { speaker: Speaker::User, utterance: utterance.into() }
    }

    pub fn assistant(utterance: impl Into<String>) -> Self {
        Turn { speaker: Speaker::Assistant, utterance: utterance.into() }
    }
}

/// Query intent classes carried on every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    SmallTalk,
    ProductRecommendation,
    ProductQa,
    PlatformQa,
    #[default]
    Unknown,
}

impl Intent {
    pub const ALL: [Intent; 5] = [
        Intent::SmallTalk,
        Intent::ProductRecommendation,
        Intent::ProductQa,
        Intent::PlatformQa,
        Intent::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::SmallTalk => "small_talk",
            Intent::ProductRecommendation => "product_recommendation",
            Intent::ProductQa => "product_qa",
            Intent::PlatformQa => "platform_qa",
            Intent::Unknown => "unknown",
        }
    }
}

/// Click signal attached to a record, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClickLabel {
    Clicked,
    Unclicked,
    /// Test-set records carry no click signal.
    #[default]
    Unlabeled,
}

/// One user turn's full input: profile, history, current query, intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub record_id: String,
    #[serde(default)]
    pub user_profile: String,
    #[serde(default)]
    pub history: Vec<Turn>,
    pub current_query: String,
    #[serde(default)]
    pub intent: Intent,
    #[serde(default)]
    pub click_label: ClickLabel,
    /// Which candidate was clicked, when the upstream log recorded it.
    /// Reserved in the schema; no operation requires it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clicked_index: Option<usize>,
}

impl DialogueContext {
    pub fn new(record_id: impl Into<String>, current_query: impl Into<String>) -> Self {
        DialogueContext {
            record_id: record_id.into(),
            user_profile: String::new(),
            history: Vec::new(),
            current_query: current_query.into(),
            intent: Intent::Unknown,
            click_label: ClickLabel::Unlabeled,
            clicked_index: None,
        }
    }

    pub fn with_intent(mut self, intent: Intent) -> Self {
        self.intent = intent;
        self
    }

    pub fn with_click_label(mut self, label: ClickLabel) -> Self {
        self.click_label = label;
        self
    }

    pub fn with_history(mut self, history: Vec<Turn>) -> Self {
        self.history = history;
        self
    }

    pub fn with_profile(mut self, profile: impl Into<String>) -> Self {
        self.user_profile = profile.into();
        self
    }

    /// Per-record validation findings (empty query is an error,
    /// non-alternating history only warns).
    pub fn findings(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        if self.current_query.trim().is_empty() {
            out.push(Finding::error(
                Some(&self.record_id),
                "current_query is empty after trimming",
            ));
        }
        if !speakers_alternate(&self.history) {
            out.push(Finding::warning(
                Some(&self.record_id),
                "history speakers do not strictly alternate",
            ));
        }
        out
    }
}

fn speakers_alternate(history: &[Turn]) -> bool {
    history.windows(2).all(|w| w[0].speaker != w[1].speaker)
}

/// An ordered group of `k` generated candidate queries plus parse status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionSet {
    /// `record_id` of the source [`DialogueContext`].
    pub context_ref: String,
    pub candidates: Vec<String>,
    pub k: usize,
    /// True iff the raw model output parsed cleanly per the output contract.
    pub format_ok: bool,
    /// Original model text, retained for audit.
    pub raw_output: String,
}

/// Soft length bound on a candidate, in whitespace-delimited tokens.
/// Violations warn; they never clear `format_ok`.
pub const CANDIDATE_TOKEN_LIMIT: usize = 30;

impl SuggestionSet {
    /// A set that failed the output contract. Candidates are dropped;
    /// the raw text is kept for audit.
    pub fn malformed(context_ref: impl Into<String>, k: usize, raw_output: impl Into<String>) -> Self {
        SuggestionSet {
            context_ref: context_ref.into(),
            candidates: Vec::new(),
            k,
            format_ok: false,
            raw_output: raw_output.into(),
        }
    }

    pub fn for_context(mut self, context_ref: impl Into<String>) -> Self {
        self.context_ref = context_ref.into();
        self
    }

    /// Invariant checks. Format violations are errors; overlong candidates
    /// (> [`CANDIDATE_TOKEN_LIMIT`] tokens) only warn.
    pub fn findings(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let id = Some(self.context_ref.as_str());
        if self.format_ok {
            if self.candidates.len() != self.k {
                out.push(Finding::error(
                    id,
                    format!("format_ok set but {} candidates != k={}", self.candidates.len(), self.k),
                ));
            }
            if self.candidates.iter().any(|c| c.trim().is_empty()) {
                out.push(Finding::error(id, "format_ok set but a candidate is empty"));
            }
            for i in 0..self.candidates.len() {
                for j in (i + 1)..self.candidates.len() {
                    if self.candidates[i] == self.candidates[j] {
                        out.push(Finding::error(
                            id,
                            format!("candidates {i} and {j} are duplicates"),
                        ));
                    }
                }
            }
        }
        for (i, c) in self.candidates.iter().enumerate() {
            let tokens = c.split_whitespace().count();
            if tokens > CANDIDATE_TOKEN_LIMIT {
                out.push(Finding::warning(
                    id,
                    format!("candidate {i} has {tokens} tokens (> {CANDIDATE_TOKEN_LIMIT})"),
                ));
            }
        }
        out
    }
}

/// Pass/fail scores for one candidate across the three quality dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub answerable: bool,
    pub factual: bool,
    pub informative: bool,
}

impl DimensionScores {
    pub const PASS: DimensionScores =
        DimensionScores { answerable: true, factual: true, informative: true };
    pub const FAIL: DimensionScores =
        DimensionScores { answerable: false, factual: false, informative: false };

    pub fn new(answerable: bool, factual: bool, informative: bool) -> Self {
        DimensionScores { answerable, factual, informative }
    }

    pub fn passes_all(&self) -> bool {
        self.answerable && self.factual && self.informative
    }

    /// Product of the three binary dimension scores.
    pub fn product(&self) -> f64 {
        if self.passes_all() {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-candidate, per-dimension quality scores from the judge model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub per_candidate: Vec<DimensionScores>,
    /// Judge's aggregate: number of candidates passing every rule, 0..=k.
    pub aggregate_score: u32,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub raw_output: String,
    /// True when the verdict was reconstructed from dimension-level counts
    /// instead of genuine per-candidate fields.
    #[serde(default)]
    pub degraded: bool,
}

impl JudgeVerdict {
    /// Synthetic all-fail verdict used for format failures.
    pub fn all_fail(k: usize, reason: impl Into<String>) -> Self {
        JudgeVerdict {
            per_candidate: vec![DimensionScores::FAIL; k],
            aggregate_score: 0,
            reason: reason.into(),
            raw_output: String::new(),
            degraded: false,
        }
    }

    pub fn k(&self) -> usize {
        self.per_candidate.len()
    }

    /// Candidates passing all three rules.
    pub fn passing(&self) -> usize {
        self.per_candidate.iter().filter(|d| d.passes_all()).count()
    }

    /// Consistency check: aggregate must equal k minus the number of
    /// candidates with any failing dimension.
    pub fn findings(&self) -> Vec<Finding> {
        let expected = self.passing() as u32;
        if self.aggregate_score != expected {
            vec![Finding {
                severity: Severity::Error,
                record_id: None,
                message: format!(
                    "aggregate_score {} inconsistent with per-candidate scores (expect {})",
                    self.aggregate_score, expected
                ),
            }]
        } else {
            Vec::new()
        }
    }
}

/// Format reward, per-candidate quality products, and the rollout reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// 1 when the rollout parsed cleanly, else 0.
    pub format_reward: u8,
    /// Per-candidate products of the three dimension scores, each in [0,1].
    pub per_candidate_products: Vec<f64>,
    /// format_reward x mean(per_candidate_products).
    pub rollout_reward: f64,
}

impl RewardBreakdown {
    pub fn findings(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        if self.format_reward > 1 {
            out.push(Finding::error(None, "format_reward outside {0,1}"));
        }
        let mean = if self.per_candidate_products.is_empty() {
            0.0
        } else {
            self.per_candidate_products.iter().sum::<f64>() / self.per_candidate_products.len() as f64
        };
        let expected = f64::from(self.format_reward) * mean;
        if self.rollout_reward != expected {
            out.push(Finding::error(
                None,
                format!("rollout_reward {} != format_reward x mean products {}", self.rollout_reward, expected),
            ));
        }
        out
    }
}

/// A suggestion set joined with its reward and, after group processing,
/// its relative advantage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRollout {
    pub suggestion_set: SuggestionSet,
    pub reward: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    /// Set when the verdict behind the reward was degraded.
    #[serde(default)]
    pub degraded: bool,
}

/// `n` scored rollouts for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub context_ref: String,
    pub rollouts: Vec<ScoredRollout>,
    pub n: usize,
}

/// Per-candidate rewards of one generated set plus their variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub context_ref: String,
    pub per_candidate_rewards: Vec<f64>,
    /// Population variance of `per_candidate_rewards`.
    pub u: f64,
    /// Malformed generations are recorded with u = 0 and excluded from
    /// hard-subset selection.
    #[serde(default)]
    pub excluded: bool,
}
