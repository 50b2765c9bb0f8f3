//! Template loading and prompt rendering.

use crate::model::{DialogueContext, Intent, Speaker, SuggestionSet};

use super::{PromptError, PromptText, TemplateId};

/// Generation template for every intent except product recommendation.
pub const GENERAL_INTENT_TEMPLATE: &str = include_str!("../../templates/general_intent.txt");
/// Generation template for the product-recommendation intent.
pub const PRODUCT_RECOMMENDATION_TEMPLATE: &str =
    include_str!("../../templates/product_recommendation.txt");
/// Quality-evaluation template for the judge model.
pub const JUDGE_TEMPLATE: &str = include_str!("../../templates/judge.txt");

/// Line that introduces the enumerated candidates in a judge prompt.
pub const JUDGE_INPUT_MARKER: &str = "Follow-up questions to evaluate:";

/// Candidate count the template text is written for; other counts get
/// the count phrases substituted.
const NATIVE_K: usize = 3;

const GENERAL_EXAMPLE_BLOCK: &str = "{\n\"options\": [\n    \"Follow-up option 1\",\n    \"Follow-up option 2\",\n    \"Follow-up option 3\"\n    ]\n}";

fn general_example_block(k: usize) -> String {
    let mut block = String::from("{\n\"options\": [\n");
    for i in 1..=k {
        let sep = if i < k { "," } else { "" };
        block.push_str(&format!("    \"Follow-up option {i}\"{sep}\n"));
    }
    block.push_str("    ]\n}");
    block
}

fn generalize_general_intent(k: usize) -> String {
    GENERAL_INTENT_TEMPLATE
        .replace(
            "Generate 3 follow-up options",
            &format!("Generate {k} follow-up options"),
        )
        .replace("infer 3 probable questions", &format!("infer {k} probable questions"))
        .replace(GENERAL_EXAMPLE_BLOCK, &general_example_block(k))
}

fn generalize_product_recommendation(k: usize) -> String {
    PRODUCT_RECOMMENDATION_TEMPLATE
        .replace(
            "Generate 3 follow-up options",
            &format!("Generate {k} follow-up options"),
        )
        .replace(
            "then phrase three as user-initiated",
            &format!("then phrase {k} as user-initiated"),
        )
        .replace(
            "generating three user-initiated questions",
            &format!("generating {k} user-initiated questions"),
        )
}

fn generalize_judge(k: usize) -> String {
    let text = JUDGE_TEMPLATE
        .replace(
            "whether the three follow-up questions",
            &format!("whether the {k} follow-up questions"),
        )
        .replace(
            "Evaluate each of the three follow-up questions",
            &format!("Evaluate each of the {k} follow-up questions"),
        )
        .replace(
            "If all three follow-up questions fully comply",
            &format!("If all {k} follow-up questions fully comply"),
        )
        .replace(
            "return {\"score\": 3,\"reason\":\"reason for score\", \"Answerability\":3,\"Factual_Accuracy\":3,\"Information_Gain\":3}",
            &format!(
                "return {{\"score\": {k},\"reason\":\"reason for score\", \"Answerability\":{k},\"Factual_Accuracy\":{k},\"Information_Gain\":{k}}}"
            ),
        );
    // The scoring rubric enumerates the three-question case; restate it
    // count-generically.
    text.lines()
        .map(|line| {
            if line.contains("If exactly one question violates any rule") {
                format!(
                    "- Each follow-up question that violates any rule lowers the overall score by 1; if all {k} violate, overall score got 0.  "
                )
            } else {
                line.to_owned()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

fn generation_template(intent: Intent, k: usize) -> (String, TemplateId) {
    match intent {
        Intent::ProductRecommendation => {
            let text = if k == NATIVE_K {
                PRODUCT_RECOMMENDATION_TEMPLATE.to_owned()
            } else {
                generalize_product_recommendation(k)
            };
            (text, TemplateId::ProductRecommendation)
        }
        _ => {
            let text = if k == NATIVE_K {
                GENERAL_INTENT_TEMPLATE.to_owned()
            } else {
                generalize_general_intent(k)
            };
            (text, TemplateId::GeneralIntent)
        }
    }
}

fn speaker_tag(speaker: Speaker) -> &'static str {
    match speaker {
        Speaker::User => "user",
        Speaker::Assistant => "assistant",
    }
}

/// Render the generation prompt for a context: product recommendation
/// gets the shopping template, every other intent the general one. The
/// profile, history turns, and current query are appended verbatim in
/// order.
pub fn render_generation_prompt(ctx: &DialogueContext, k: usize) -> PromptText {
    let (template, template_id) = generation_template(ctx.intent, k);
    let mut user_text = template;
    user_text.push_str("\n# Conversation\n");
    user_text.push_str(&format!("user profile: {}\n", ctx.user_profile));
    for turn in &ctx.history {
        user_text.push_str(&format!("{}: {}\n", speaker_tag(turn.speaker), turn.utterance));
    }
    user_text.push_str(&format!("user query: {}", ctx.current_query));
    PromptText { system_text: None, user_text, template_id }
}

/// Render the judge prompt for a well-formed suggestion set. The golden
/// template is extended with an instruction requesting a per-question
/// array (the aggregate counts alone cannot say which candidate failed),
/// then the query and candidates are appended. Candidates are flattened
/// onto single lines so the enumeration stays parseable.
pub fn render_judge_prompt(
    ctx: &DialogueContext,
    suggestions: &SuggestionSet,
) -> Result<PromptText, PromptError> {
    if !suggestions.format_ok {
        return Err(PromptError::MalformedSuggestions {
            context_ref: suggestions.context_ref.clone(),
        });
    }
    let k = suggestions.k;
    let mut user_text =
        if k == NATIVE_K { JUDGE_TEMPLATE.to_owned() } else { generalize_judge(k) };
    user_text.push_str(&format!(
        "\nAdditional Output Requirement\n- In the same JSON object, also return a key \"per_question\": an array of exactly {k} objects, one per follow-up question in the order given. Each object must hold the keys \"Answerability\", \"Factual_Accuracy\", and \"Information_Gain\", each set to 1 if that question complies with the rule and 0 if it violates it.\n"
    ));
    user_text.push_str(&format!("\n# Input\nuser query: {}\n{JUDGE_INPUT_MARKER}\n", ctx.current_query));
    for (i, candidate) in suggestions.candidates.iter().enumerate() {
        let flat = candidate.split_whitespace().collect::<Vec<_>>().join(" ");
        user_text.push_str(&format!("{}. {flat}\n", i + 1));
    }
    Ok(PromptText { system_text: None, user_text, template_id: TemplateId::Judge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Turn;
    use sha2::{Digest, Sha256};

    fn sha256_hex(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    #[test]
    fn golden_template_digests() {
        assert_eq!(
            sha256_hex(GENERAL_INTENT_TEMPLATE),
            "5d5b27c56877c7bf09b4133ea09ff95a142c0dc349213e0edc08eb755714c9a1"
        );
        assert_eq!(
            sha256_hex(PRODUCT_RECOMMENDATION_TEMPLATE),
            "3c88f8876b5acb88adcd13a6ad100bbcffa832b6588010adcd5b3aa7c2397b6c"
        );
        assert_eq!(
            sha256_hex(JUDGE_TEMPLATE),
            "0b3b9a19e2450058363928187cc1fc8ebe3c7980feb91880b9e0c53cbdc0bf77"
        );
    }

    #[test]
    fn intent_selects_template() {
        let rec = DialogueContext::new("r1", "Buy something")
            .with_intent(Intent::ProductRecommendation);
        let rendered = render_generation_prompt(&rec, 3);
        assert_eq!(rendered.template_id, TemplateId::ProductRecommendation);
        assert!(rendered.user_text.contains("Buy something"));
        assert!(rendered.user_text.starts_with(PRODUCT_RECOMMENDATION_TEMPLATE));

        for intent in [Intent::SmallTalk, Intent::ProductQa, Intent::PlatformQa, Intent::Unknown] {
            let ctx = DialogueContext::new("r2", "hello").with_intent(intent);
            let rendered = render_generation_prompt(&ctx, 3);
            assert_eq!(rendered.template_id, TemplateId::GeneralIntent);
            assert!(rendered.user_text.starts_with(GENERAL_INTENT_TEMPLATE));
        }
    }

    #[test]
    fn history_is_injected_in_order() {
        let ctx = DialogueContext::new("r1", "what about red ones?")
            .with_profile("frequent flower buyer")
            .with_history(vec![
                Turn::user("I want flowers"),
                Turn::assistant("Roses or tulips?"),
            ]);
        let text = render_generation_prompt(&ctx, 3).user_text;
        let profile_at = text.find("user profile: frequent flower buyer").unwrap();
        let first = text.find("user: I want flowers").unwrap();
        let second = text.find("assistant: Roses or tulips?").unwrap();
        let query = text.find("user query: what about red ones?").unwrap();
        assert!(profile_at < first && first < second && second < query);
    }

    #[test]
    fn nonstandard_count_rewrites_count_phrases() {
        let ctx = DialogueContext::new("r1", "buy a phone");
        let text = render_generation_prompt(&ctx, 5).user_text;
        assert!(text.contains("Generate 5 follow-up options"));
        assert!(text.contains("infer 5 probable questions"));
        assert!(text.contains("\"Follow-up option 5\""));
        assert!(!text.contains("Generate 3 follow-up options"));

        let rec = ctx.clone().with_intent(Intent::ProductRecommendation);
        let text = render_generation_prompt(&rec, 2).user_text;
        assert!(text.contains("Generate 2 follow-up options"));
        assert!(!text.contains("generating three user-initiated"));
    }

    fn suggestion_set(k: usize) -> SuggestionSet {
        SuggestionSet {
            context_ref: "r1".into(),
            candidates: (0..k).map(|i| format!("candidate {i}")).collect(),
            k,
            format_ok: true,
            raw_output: String::new(),
        }
    }

    #[test]
    fn judge_prompt_enumerates_candidates() {
        let ctx = DialogueContext::new("r1", "I want a router");
        let set = suggestion_set(3);
        let text = render_judge_prompt(&ctx, &set).unwrap().user_text;
        assert!(text.starts_with(JUDGE_TEMPLATE));
        assert!(text.contains("1. Answerability"));
        assert!(text.contains("2.Factual Accuracy"));
        assert!(text.contains("3. Information Gain"));
        assert!(text.contains("user query: I want a router"));
        assert!(text.contains("1. candidate 0"));
        assert!(text.contains("2. candidate 1"));
        assert!(text.contains("3. candidate 2"));
        assert!(text.contains("\"per_question\""));
    }

    #[test]
    fn judge_prompt_flattens_multiline_candidates() {
        let ctx = DialogueContext::new("r1", "q");
        let mut set = suggestion_set(3);
        set.candidates[1] = "line one\nline two".into();
        let text = render_judge_prompt(&ctx, &set).unwrap().user_text;
        assert!(text.contains("2. line one line two"));
    }

    #[test]
    fn judge_prompt_rejects_malformed_sets() {
        let ctx = DialogueContext::new("r1", "q");
        let set = SuggestionSet::malformed("r1", 3, "junk");
        let err = render_judge_prompt(&ctx, &set).unwrap_err();
        assert!(matches!(err, PromptError::MalformedSuggestions { .. }));
    }

    #[test]
    fn judge_generalization_replaces_every_count_phrase() {
        let ctx = DialogueContext::new("r1", "q");
        let set = suggestion_set(4);
        let text = render_judge_prompt(&ctx, &set).unwrap().user_text;
        assert!(text.contains("whether the 4 follow-up questions"));
        assert!(text.contains("Evaluate each of the 4 follow-up questions"));
        assert!(text.contains("\"score\": 4"));
        assert!(text.contains("lowers the overall score by 1"));
        assert!(!text.contains("the three follow-up questions"));
        assert!(!text.contains("If exactly one question violates"));
    }
}
