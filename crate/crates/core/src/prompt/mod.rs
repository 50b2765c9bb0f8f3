//! Prompt rendering and structured-output parsing.
//!
//! Three fixed templates drive the pipeline: two generation prompts
//! (general intent, product recommendation) and one judge prompt. The
//! templates are golden artifacts under `templates/`; rendering appends
//! context blocks and never edits template text, except when the
//! candidate count differs from the templates' native count of three,
//! in which case the count phrases are substituted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod extract;
mod parse;
mod render;

pub use parse::{parse_judge_output, parse_options, render_judge_reply};
pub use render::{
    render_generation_prompt, render_judge_prompt, GENERAL_INTENT_TEMPLATE, JUDGE_INPUT_MARKER,
    JUDGE_TEMPLATE, PRODUCT_RECOMMENDATION_TEMPLATE,
};

/// Which golden template a prompt was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    GeneralIntent,
    ProductRecommendation,
    Judge,
}

/// A rendered prompt ready for the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptText {
    /// Reserved; the current templates are single-message user prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    pub template_id: TemplateId,
}

/// Errors from prompt rendering and judge-output parsing.
#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot render a judge prompt for a malformed suggestion set (context {context_ref})")]
    MalformedSuggestions { context_ref: String },

    #[error("no balanced JSON object found in judge output")]
    NoJsonObject,

    /// Distinct from a legitimate score of 0.
    #[error("judge output is missing required field {0:?}")]
    MissingField(&'static str),

    #[error("judge output field {field:?} is malformed: {detail}")]
    BadField { field: &'static str, detail: String },

    #[error("judge output is internally inconsistent: {0}")]
    Inconsistent(String),
}
