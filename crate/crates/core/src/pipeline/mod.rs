//! Run orchestration: configuration, seed fan-out, the supervised
//! warm-up build, reinforcement rounds with an external trainer hook,
//! and the resumable K-round iteration loop.

mod config;
mod lock;
mod orchestrator;
mod predict;
mod round;
mod seed;
mod sft;

pub use config::{
    EndpointsConfig, EvalConfig, MockConfig, OrchestratorConfig, PathsConfig, PipelineConfig,
    RewardConfig, SamplerConfig,
};
pub use lock::{WorkdirLock, LOCK_FILE_NAME};
pub use orchestrator::{iterate, merge_training_contexts, IterateInputs, IterateOptions, IterateOutcome};
pub use predict::{predict_testset, read_predictions, PredictOptions, PredictOutcome};
pub use round::{run_rl_round, RlRoundOptions, RlRoundOutcome, TrainerHandoff};
pub use seed::derive_seed;
pub use sft::{build_sft_dataset, SftBuildOutcome};

use std::path::Path;

use thiserror::Error;

use crate::eval::EvalError;
use crate::gateway::GatewayError;
use crate::model::ModelError;
use crate::prompt::PromptError;
use crate::reward::RewardError;
use crate::sampler::SamplerError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("workdir already locked by another run: {path}")]
    Locked { path: String },
    #[error("{partition} partition is empty")]
    EmptyPartition { partition: &'static str },
    #[error("general corpus too small: need {needed} pairs, have {available}")]
    InsufficientGeneralCorpus { needed: usize, available: usize },
    #[error("trainer hook failed ({detail})")]
    TrainerHook { detail: String },
    #[error("every item in stage {stage} failed on transport; endpoint unreachable")]
    TransportExhausted { stage: &'static str },
    #[error("run is at stage {found}, but {required} is required (pass an endpoint override to evaluate a baseline)")]
    StageNotReady { required: &'static str, found: String },
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}
