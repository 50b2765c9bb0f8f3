//! Deterministic mock backend.
//!
//! Every reply is a pure function of (backend seed, model name, call
//! seed, prompt bytes), so pipeline runs against the mock replay
//! byte-identically. Two fault lanes, also deterministic, inject
//! transport failures and malformed text at configurable rates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::model::{DimensionScores, JudgeVerdict};
use crate::prompt::{render_judge_reply, JUDGE_INPUT_MARKER};

use super::{AttemptError, CompletionBackend, EndpointConfig};

const SUGGESTION_POOL: [&str; 24] = [
    "Can you recommend something popular right now?",
    "Are there any deals on electronics today?",
    "I'm buying a gift for a friend. Any suggestions?",
    "Which wireless earbuds under 2,000 PHP have noise cancellation?",
    "Does this phone support fast charging over Type-C?",
    "What routers under 2,500 PHP support Wi-Fi 6?",
    "Can you compare the battery life of these two laptops?",
    "Is the inner pot of this rice cooker stainless steel?",
    "Which air fryer size fits a family of four?",
    "Are there waterproof fitness trackers with heart-rate monitoring?",
    "What is the warranty period for this blender?",
    "Can you show me highly rated office chairs under 5,000 PHP?",
    "Which flowers are best for gifting elderly people?",
    "Do these sneakers run true to size?",
    "Is there a bundle discount if I buy the keyboard and mouse together?",
    "How long does standard shipping usually take?",
    "Can I pay cash on delivery for this order?",
    "What is the return policy for opened electronics?",
    "Which power banks are allowed on airplanes?",
    "Are there hypoallergenic pillows under 1,500 PHP?",
    "Can you recommend a beginner espresso machine with a milk frother?",
    "Does this monitor support 144Hz at 1440p?",
    "Which baby strollers fold with one hand?",
    "What desk lamps have adjustable color temperature?",
];

/// Offline stand-in for both the policy and the judge endpoint.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    default_k: usize,
    failure_rate: f64,
    malformed_rate: f64,
}

impl MockBackend {
    pub fn new(seed: u64, default_k: usize) -> Self {
        MockBackend { seed, default_k, failure_rate: 0.0, malformed_rate: 0.0 }
    }

    /// Fraction of calls that fail with a retryable transport error.
    /// A faulted (model, call seed, prompt) combination fails on every
    /// retry, so injected faults deterministically exhaust the budget.
    pub fn with_failure_rate(mut self, rate: f64) -> Self {
        self.failure_rate = rate;
        self
    }

    /// Fraction of calls that return non-JSON text.
    pub fn with_malformed_rate(mut self, rate: f64) -> Self {
        self.malformed_rate = rate;
        self
    }

    fn digest(&self, model_name: &str, call_seed: u64, prompt: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(model_name.as_bytes());
        hasher.update([0u8]);
        hasher.update(call_seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        hasher.finalize().into()
    }

    fn lane(h: &[u8; 32], offset: usize) -> f64 {
        let bytes: [u8; 8] = h[offset..offset + 8].try_into().expect("8-byte lane");
        u64::from_le_bytes(bytes) as f64 / u64::MAX as f64
    }

    fn generation_reply(&self, h: [u8; 32], k: usize) -> String {
        let mut rng = ChaCha8Rng::from_seed(h);
        let mut pool: Vec<String> = SUGGESTION_POOL.iter().map(|s| (*s).to_owned()).collect();
        pool.shuffle(&mut rng);
        while pool.len() < k {
            let i = pool.len();
            pool.push(format!("What else should I check before buying? (angle {i})"));
        }
        pool.truncate(k);
        serde_json::json!({ "options": pool }).to_string()
    }

    fn judge_reply(&self, h: [u8; 32], candidates: usize) -> String {
        let per_candidate: Vec<DimensionScores> = (0..candidates)
            .map(|i| {
                let mut hasher = Sha256::new();
                hasher.update(h);
                hasher.update((i as u64).to_le_bytes());
                let hi: [u8; 32] = hasher.finalize().into();
                DimensionScores::new(
                    !hi[0].is_multiple_of(4),
                    !hi[1].is_multiple_of(8),
                    !hi[2].is_multiple_of(4),
                )
            })
            .collect();
        let passing = per_candidate.iter().filter(|d| d.passes_all()).count();
        let verdict = JudgeVerdict {
            aggregate_score: passing as u32,
            reason: format!("{passing} of {candidates} follow-up questions comply with every rule"),
            per_candidate,
            raw_output: String::new(),
            degraded: false,
        };
        render_judge_reply(&verdict)
    }
}

/// Candidate lines enumerated after the judge input marker: `1. ...`.
fn enumerated_candidates(prompt: &str) -> usize {
    let Some(pos) = prompt.rfind(JUDGE_INPUT_MARKER) else {
        return 0;
    };
    prompt[pos..]
        .lines()
        .skip(1)
        .take_while(|line| {
            let digits = line.chars().take_while(char::is_ascii_digit).count();
            digits > 0 && line[digits..].starts_with(". ")
        })
        .count()
}

/// Candidate count the generation templates ask for
/// ("Generate N follow-up options").
fn requested_count(prompt: &str, fallback: usize) -> usize {
    if let Some(pos) = prompt.find("Generate ") {
        let rest = &prompt[pos + "Generate ".len()..];
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        if !digits.is_empty() && rest[digits.len()..].starts_with(" follow-up option") {
            if let Ok(k) = digits.parse() {
                return k;
            }
        }
    }
    fallback
}

impl CompletionBackend for MockBackend {
    fn complete_once(
        &self,
        cfg: &EndpointConfig,
        prompt: &str,
        seed: u64,
    ) -> Result<String, AttemptError> {
        let h = self.digest(&cfg.model_name, seed, prompt);
        if Self::lane(&h, 0) < self.failure_rate {
            return Err(AttemptError::Retryable("injected transport fault".to_owned()));
        }
        if Self::lane(&h, 8) < self.malformed_rate {
            return Ok("I'm sorry, I can't produce structured output right now.".to_owned());
        }
        let judged = enumerated_candidates(prompt);
        if judged > 0 {
            Ok(self.judge_reply(h, judged))
        } else {
            Ok(self.generation_reply(h, requested_count(prompt, self.default_k)))
        }
    }
}
