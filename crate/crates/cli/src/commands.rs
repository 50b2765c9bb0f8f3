//! Command implementations. Each returns the JSON summary printed to
//! stdout; anything a human should read along the way goes to stderr.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qspipe_core::engagement::{arm_report, chat_pv, chat_uv, InteractionEvent};
use qspipe_core::eval::{
    agreement_from_records, intent_breakdown, judge_outputs, metric_set, repeated_runs,
    AgreementRecord, EvalError, EvalReport, MeanStd,
};
use qspipe_core::gateway::EndpointConfig;
use qspipe_core::model::{
    read_jsonl, require_valid, validate_partition, ClickRecord, DialogueContext, Finding,
    ModelError, Partition, PartitionName, PipelineManifest, PseudoRecord, QaPair, Severity,
};
use qspipe_core::pipeline::{
    build_sft_dataset, derive_seed, iterate, merge_training_contexts, predict_testset,
    read_predictions, run_rl_round, IterateInputs, IterateOptions, PathsConfig, PipelineConfig,
    PipelineError, PredictOptions, RlRoundOptions, WorkdirLock,
};
use qspipe_core::sampler::{build_pseudo, select_hard, BuildPseudoOptions};

use crate::{Command, GlobalArgs};

/// Anything a command can fail with, carrying enough structure for the
/// exit-code and summary-line contract.
#[derive(Debug)]
pub enum CliError {
    Pipeline(PipelineError),
    Model(ModelError),
    Eval(EvalError),
    Validation { message: String, findings: Vec<Finding> },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Pipeline(e) => write!(f, "{e}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Eval(e) => write!(f, "{e}"),
            CliError::Validation { message, .. } => write!(f, "{message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}

impl CliError {
    /// Process exit code: 2 when the model transport gave out, 3 when
    /// the trainer hook failed, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(PipelineError::TransportExhausted { .. }) => 2,
            CliError::Pipeline(PipelineError::Gateway(g)) if g.is_transport() => 2,
            CliError::Pipeline(PipelineError::TrainerHook { .. }) => 3,
            _ => 1,
        }
    }

    /// Stable machine-readable failure category for the summary line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Pipeline(e) => match e {
                PipelineError::Config(_) => "config",
                PipelineError::Io { .. } => "io",
                PipelineError::Locked { .. } => "locked",
                PipelineError::EmptyPartition { .. } => "empty_partition",
                PipelineError::InsufficientGeneralCorpus { .. } => "insufficient_general_corpus",
                PipelineError::TrainerHook { .. } => "trainer_hook",
                PipelineError::TransportExhausted { .. } => "transport_exhausted",
                PipelineError::StageNotReady { .. } => "stage_not_ready",
                PipelineError::Model(_) => "model",
                PipelineError::Prompt(_) => "prompt",
                PipelineError::Reward(_) => "reward",
                PipelineError::Sampler(_) => "sampler",
                PipelineError::Eval(_) => "eval",
                PipelineError::Gateway(g) if g.is_transport() => "transport_exhausted",
                PipelineError::Gateway(_) => "gateway",
            },
            CliError::Model(_) => "model",
            CliError::Eval(_) => "eval",
            CliError::Validation { .. } => "validation",
        }
    }

    /// Findings to attach to the error summary, when the failure was a
    /// validation pass with per-record detail.
    pub fn findings(&self) -> Option<&[Finding]> {
        match self {
            CliError::Validation { findings, .. } => Some(findings),
            _ => None,
        }
    }
}

/// Loaded configuration with overrides applied and data paths resolved
/// against the configuration file's directory.
struct RunContext {
    config: PipelineConfig,
    paths: PathsConfig,
    dry_run: bool,
}

impl RunContext {
    fn load(command: &Command, globals: &GlobalArgs) -> Result<Self, CliError> {
        let mut config = PipelineConfig::load(&globals.config)?;
        if let Some(seed) = globals.seed {
            config.seed = seed;
        }
        if let Some(parallelism) = globals.parallelism {
            config.parallelism = parallelism;
        }
        if let Some(k) = globals.k {
            config.orchestrator.iterations = k;
        }
        if globals.mock {
            config.mock.enabled = true;
        }
        // Subcommand toggles land in the config so the run manifest's
        // snapshot records them like any other setting.
        match command {
            Command::Sample { no_uncertainty, .. } if *no_uncertainty => {
                config.sampler.no_uncertainty = true;
            }
            Command::Iterate { no_uncertainty, skip_sft, .. } => {
                if *no_uncertainty {
                    config.sampler.no_uncertainty = true;
                }
                if *skip_sft {
                    config.orchestrator.skip_sft = true;
                }
            }
            _ => {}
        }

        let base = match globals.config.parent() {
            Some(parent) if !parent.as_os_str().is_empty() => parent.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let paths = config.paths.resolved(&base);
        Ok(RunContext { config, paths, dry_run: globals.dry_run })
    }
}

pub fn run(command: &Command, globals: &GlobalArgs) -> Result<Value, CliError> {
    let ctx = RunContext::load(command, globals)?;
    if ctx.dry_run {
        return Ok(plan(command, &ctx));
    }
    match command {
        Command::Validate => validate(&ctx),
        Command::SftBuild => sft_build(&ctx),
        Command::RlRound { round } => rl_round(&ctx, *round),
        Command::Sample { round, .. } => sample(&ctx, *round),
        Command::Iterate { halt_after_round, .. } => run_iterate(&ctx, *halt_after_round),
        Command::Predict { output, use_base_policy } => {
            predict(&ctx, output.as_deref(), *use_base_policy)
        }
        Command::Eval { repeats, predictions, labels, output } => eval(
            &ctx,
            *repeats,
            predictions.as_deref(),
            labels.as_deref(),
            output.as_deref(),
        ),
        Command::Metrics { log, start, end } => metrics(&ctx, log.as_deref(), *start, *end),
        Command::Report => report(&ctx),
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn io_at(path: &Path, source: std::io::Error) -> CliError {
    CliError::Pipeline(PipelineError::Io { path: path_str(path), source })
}

/// Print findings where a human will see them. The JSON line on stdout
/// stays machine-readable.
fn report_findings(findings: &[Finding]) {
    for finding in findings {
        let severity = match finding.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &finding.record_id {
            Some(id) => eprintln!("{severity} [{id}]: {}", finding.message),
            None => eprintln!("{severity}: {}", finding.message),
        }
    }
}

fn read_click(ctx: &RunContext) -> Result<Partition<ClickRecord>, CliError> {
    let partition = Partition::<ClickRecord>::read(PartitionName::Click, &ctx.paths.click)?;
    report_findings(&require_valid(&partition)?);
    Ok(partition)
}

fn read_unclick(ctx: &RunContext) -> Result<Partition<ClickRecord>, CliError> {
    let partition = Partition::<ClickRecord>::read(PartitionName::Unclick, &ctx.paths.unclick)?;
    report_findings(&require_valid(&partition)?);
    Ok(partition)
}

fn read_test(ctx: &RunContext) -> Result<Partition<DialogueContext>, CliError> {
    let partition = Partition::<DialogueContext>::read(PartitionName::Test, &ctx.paths.test)?;
    report_findings(&require_valid(&partition)?);
    Ok(partition)
}

// ---------------------------------------------------------------------
// dry-run plan

fn endpoint_plan(endpoint: &EndpointConfig) -> Value {
    // Deliberately never includes key material, only where calls go.
    json!({ "base_url": endpoint.base_url, "model": endpoint.model_name })
}

fn plan(command: &Command, ctx: &RunContext) -> Value {
    let config = &ctx.config;
    let paths = &ctx.paths;
    let workdir = &paths.workdir;
    let rounds = config.orchestrator.iterations;

    let (stages, inputs, outputs): (Vec<String>, Vec<PathBuf>, Vec<PathBuf>) = match command {
        Command::Validate => (
            vec!["validate_config".into(), "validate_inputs".into()],
            vec![
                paths.click.clone(),
                paths.unclick.clone(),
                paths.general.clone(),
                paths.test.clone(),
                paths.events.clone(),
            ],
            vec![],
        ),
        Command::SftBuild => (
            vec!["sft_build".into()],
            vec![paths.click.clone(), paths.general.clone()],
            vec![workdir.join("sft_mix.jsonl")],
        ),
        Command::RlRound { round } => {
            let mut inputs = vec![paths.click.clone()];
            if *round > 1 {
                inputs.push(workdir.join(format!("hard-{}.jsonl", round - 1)));
            }
            let round_dir = workdir.join(format!("round-{round}"));
            (
                vec![format!("rl_round {round}")],
                inputs,
                vec![round_dir.join("grpo_export.jsonl"), round_dir.join("trainer_result.txt")],
            )
        }
        Command::Sample { round, .. } => (
            vec![format!("sampling {round}")],
            vec![paths.click.clone(), paths.unclick.clone()],
            vec![
                workdir.join(format!("pseudo-{round}.jsonl")),
                workdir.join(format!("hard-{round}.jsonl")),
            ],
        ),
        Command::Iterate { .. } => {
            let mut stages = Vec::new();
            if config.orchestrator.skip_sft {
                stages.push("sft_build (skipped)".to_owned());
            } else {
                stages.push("sft_build".to_owned());
            }
            for round in 1..=rounds {
                stages.push(format!("rl_round {round}"));
                stages.push(format!("sampling {round}"));
            }
            (
                stages,
                vec![paths.click.clone(), paths.unclick.clone(), paths.general.clone()],
                vec![workdir.join("manifest.json"), workdir.clone()],
            )
        }
        Command::Predict { output, .. } => (
            vec!["predict".into()],
            vec![paths.test.clone(), workdir.join("manifest.json")],
            vec![output
                .clone()
                .unwrap_or_else(|| workdir.join("predictions.jsonl"))],
        ),
        Command::Eval { predictions, labels, output, .. } => {
            let mut inputs = vec![
                paths.test.clone(),
                predictions
                    .clone()
                    .unwrap_or_else(|| workdir.join("predictions.jsonl")),
            ];
            if let Some(labels) = labels {
                inputs.push(labels.clone());
            }
            (
                vec!["eval".into()],
                inputs,
                vec![output
                    .clone()
                    .unwrap_or_else(|| workdir.join("eval_report.json"))],
            )
        }
        Command::Metrics { log, .. } => (
            vec!["metrics".into()],
            vec![log.clone().unwrap_or_else(|| paths.events.clone())],
            vec![],
        ),
        Command::Report => (
            vec!["report".into()],
            vec![
                workdir.join("manifest.json"),
                workdir.join("eval_report.json"),
                paths.events.clone(),
            ],
            vec![],
        ),
    };

    json!({
        "command": command.name(),
        "status": "plan",
        "dry_run": true,
        "seed": config.seed,
        "parallelism": config.parallelism,
        "candidates_per_set": config.candidates_per_set,
        "iterations": rounds,
        "backend": if config.mock.enabled { "mock" } else { "http" },
        "endpoints": {
            "policy": endpoint_plan(&config.endpoints.policy),
            "judge": endpoint_plan(&config.endpoints.judge),
            "eval_judge": endpoint_plan(config.eval_judge()),
        },
        "stages": stages,
        "inputs": inputs.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        "outputs": outputs.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
    })
}

// ---------------------------------------------------------------------
// validate

fn relabel(findings: Vec<Finding>, label: &str) -> impl Iterator<Item = Finding> + '_ {
    findings.into_iter().map(move |finding| Finding {
        severity: finding.severity,
        record_id: finding.record_id,
        message: format!("{label}: {}", finding.message),
    })
}

fn validate(ctx: &RunContext) -> Result<Value, CliError> {
    let mut findings = ctx.config.findings();

    fn check_partition<T>(
        findings: &mut Vec<Finding>,
        name: PartitionName,
        label: &str,
        path: &Path,
    ) where
        T: qspipe_core::model::PartitionRecord + serde::de::DeserializeOwned,
    {
        if !path.exists() {
            findings.push(Finding::error(
                None,
                format!("{label} file missing: {}", path.display()),
            ));
            return;
        }
        match Partition::<T>::read(name, path) {
            Ok(partition) => findings.extend(relabel(validate_partition(&partition), label)),
            Err(error) => findings.push(Finding::error(None, format!("{label}: {error}"))),
        }
    }

    check_partition::<ClickRecord>(&mut findings, PartitionName::Click, "click", &ctx.paths.click);
    check_partition::<ClickRecord>(
        &mut findings,
        PartitionName::Unclick,
        "unclick",
        &ctx.paths.unclick,
    );
    check_partition::<DialogueContext>(
        &mut findings,
        PartitionName::Test,
        "test",
        &ctx.paths.test,
    );

    // The general corpus is a bare QA list, not a partition, so the
    // duplicate and empty-field checks are done here.
    if !ctx.paths.general.exists() {
        findings.push(Finding::error(
            None,
            format!("general file missing: {}", ctx.paths.general.display()),
        ));
    } else {
        match read_jsonl::<QaPair>(&ctx.paths.general) {
            Ok(pairs) => {
                let mut seen = BTreeSet::new();
                for pair in &pairs {
                    if !seen.insert(pair.record_id.clone()) {
                        findings.push(Finding::error(
                            Some(&pair.record_id),
                            "general: duplicate record id".to_owned(),
                        ));
                    }
                    if pair.prompt.trim().is_empty() {
                        findings.push(Finding::error(
                            Some(&pair.record_id),
                            "general: empty prompt".to_owned(),
                        ));
                    }
                    if pair.completion.trim().is_empty() {
                        findings.push(Finding::error(
                            Some(&pair.record_id),
                            "general: empty completion".to_owned(),
                        ));
                    }
                }
            }
            Err(error) => findings.push(Finding::error(None, format!("general: {error}"))),
        }
    }

    if !ctx.paths.events.exists() {
        findings.push(Finding::warning(
            None,
            format!("events file missing: {}", ctx.paths.events.display()),
        ));
    } else if let Err(error) = read_jsonl::<InteractionEvent>(&ctx.paths.events) {
        findings.push(Finding::error(None, format!("events: {error}")));
    }

    let errors = findings.iter().filter(|f| f.is_error()).count();
    let warnings = findings.len() - errors;
    report_findings(&findings);
    if errors > 0 {
        return Err(CliError::Validation {
            message: format!("{errors} validation error(s)"),
            findings,
        });
    }
    Ok(json!({
        "command": "validate",
        "status": "ok",
        "errors": errors,
        "warnings": warnings,
        "config_digest": ctx.config.digest()?,
    }))
}

// ---------------------------------------------------------------------
// sft-build

fn sft_build(ctx: &RunContext) -> Result<Value, CliError> {
    ctx.config.validate()?;
    let _lock = WorkdirLock::acquire(&ctx.paths.workdir)?;
    let click = read_click(ctx)?;
    let general: Vec<QaPair> = read_jsonl(&ctx.paths.general)?;
    let built = build_sft_dataset(
        &click,
        &general,
        ctx.config.orchestrator.mix_ratio,
        ctx.config.candidates_per_set,
        ctx.config.seed,
    )?;
    let output = ctx.paths.workdir.join("sft_mix.jsonl");
    built.partition.write(&output)?;
    Ok(json!({
        "command": "sft-build",
        "status": "ok",
        "pairs": built.partition.len(),
        "domain_pairs": built.domain_pairs,
        "general_pairs": built.general_pairs,
        "digest": built.partition.digest()?,
        "output": path_str(&output),
    }))
}

// ---------------------------------------------------------------------
// rl-round

fn rl_round(ctx: &RunContext, round: u32) -> Result<Value, CliError> {
    if round == 0 {
        return Err(PipelineError::Config("--round must be at least 1".to_owned()).into());
    }
    ctx.config.validate()?;
    let _lock = WorkdirLock::acquire(&ctx.paths.workdir)?;
    let click = read_click(ctx)?;
    let hard = if round > 1 {
        let path = ctx.paths.workdir.join(format!("hard-{}.jsonl", round - 1));
        if path.exists() {
            Partition::<PseudoRecord>::read(PartitionName::Hard, &path)?
        } else {
            eprintln!(
                "warning: {} not found; training on clicked data only",
                path.display()
            );
            Partition::new(PartitionName::Hard, Vec::new())
        }
    } else {
        Partition::new(PartitionName::Hard, Vec::new())
    };
    let contexts = merge_training_contexts(&click, &hard);
    let round_dir = ctx.paths.workdir.join(format!("round-{round}"));
    let gateway = ctx.config.build_gateway();
    let outcome = run_rl_round(
        &gateway,
        &ctx.config.endpoints.policy,
        &ctx.config.endpoints.judge,
        &ctx.config.endpoints.policy.model_name,
        &contexts,
        &RlRoundOptions {
            iteration: round,
            k: ctx.config.candidates_per_set,
            group_size: ctx.config.reward.group_size,
            parallelism: ctx.config.parallelism,
            root_seed: ctx.config.seed,
            include_degraded: ctx.config.reward.include_degraded,
            trainer_hook: ctx.config.orchestrator.trainer_hook.as_deref(),
            round_dir: &round_dir,
            hyperparams: &ctx.config.orchestrator.hyperparams,
        },
    )?;
    report_findings(&outcome.findings);
    Ok(json!({
        "command": "rl-round",
        "status": "ok",
        "round": round,
        "contexts": contexts.len(),
        "groups": outcome.groups,
        "rollouts": outcome.exported_rollouts,
        "skipped_contexts": outcome.skipped_contexts,
        "export": path_str(&outcome.export_path),
        "export_digest": outcome.export_digest,
        "policy_endpoint": outcome.new_policy_endpoint,
    }))
}

// ---------------------------------------------------------------------
// sample

fn sample(ctx: &RunContext, round: u32) -> Result<Value, CliError> {
    if round == 0 {
        return Err(PipelineError::Config("--round must be at least 1".to_owned()).into());
    }
    ctx.config.validate()?;
    let _lock = WorkdirLock::acquire(&ctx.paths.workdir)?;
    let click = read_click(ctx)?;
    let unclick = read_unclick(ctx)?;
    let gateway = ctx.config.build_gateway();
    let (pseudo, findings) = build_pseudo(
        &gateway,
        &ctx.config.endpoints.policy,
        &ctx.config.endpoints.judge,
        &unclick,
        &BuildPseudoOptions {
            k: ctx.config.candidates_per_set,
            parallelism: ctx.config.parallelism,
            root_seed: ctx.config.seed,
            iteration: round,
        },
    )
    .map_err(PipelineError::from)?;
    report_findings(&findings);
    if pseudo.is_empty() && !unclick.is_empty() {
        return Err(PipelineError::TransportExhausted { stage: "sampling" }.into());
    }

    let budget = ctx.config.effective_budget(click.len());
    let hard = if ctx.config.sampler.no_uncertainty {
        Partition::new(
            PartitionName::Hard,
            pseudo
                .records
                .iter()
                .filter(|r| !r.uncertainty.excluded)
                .cloned()
                .collect(),
        )
    } else {
        select_hard(&pseudo, budget, ctx.config.sampler.min_uncertainty)
            .map_err(PipelineError::from)?
    };

    let pseudo_path = ctx.paths.workdir.join(format!("pseudo-{round}.jsonl"));
    let hard_path = ctx.paths.workdir.join(format!("hard-{round}.jsonl"));
    pseudo.write(&pseudo_path)?;
    hard.write(&hard_path)?;
    Ok(json!({
        "command": "sample",
        "status": "ok",
        "round": round,
        "pseudo": pseudo.len(),
        "usable": pseudo.records.iter().filter(|r| !r.uncertainty.excluded).count(),
        "hard": hard.len(),
        "budget": budget,
        "no_uncertainty": ctx.config.sampler.no_uncertainty,
        "pseudo_output": path_str(&pseudo_path),
        "hard_output": path_str(&hard_path),
        "hard_digest": hard.digest()?,
    }))
}

// ---------------------------------------------------------------------
// iterate

fn run_iterate(ctx: &RunContext, halt_after_round: Option<u32>) -> Result<Value, CliError> {
    let click = read_click(ctx)?;
    let unclick = read_unclick(ctx)?;
    let general: Vec<QaPair> = read_jsonl(&ctx.paths.general)?;
    let outcome = iterate(
        &ctx.config,
        IterateInputs { click: &click, unclick: &unclick, general: &general },
        &ctx.paths.workdir,
        &IterateOptions { halt_after_round },
    )?;
    report_findings(&outcome.findings);
    let manifest = &outcome.manifest;
    Ok(json!({
        "command": "iterate",
        "status": "ok",
        "stage": manifest.stage.as_str(),
        "iteration": manifest.iteration,
        "policy_endpoint": manifest.policy_endpoint,
        "manifest": path_str(&outcome.manifest_path),
        "manifest_digest": manifest.digest()?,
        "failures": manifest.failures.len(),
        "ablation": {
            "no_uncertainty": manifest.ablation.no_uncertainty,
            "sft_skipped": manifest.ablation.sft_skipped,
        },
    }))
}

// ---------------------------------------------------------------------
// predict

fn predict(
    ctx: &RunContext,
    output: Option<&Path>,
    use_base_policy: bool,
) -> Result<Value, CliError> {
    ctx.config.validate()?;
    let test = read_test(ctx)?;
    let manifest_path = ctx.paths.workdir.join("manifest.json");
    let manifest = if manifest_path.exists() {
        Some(PipelineManifest::read(&manifest_path)?)
    } else {
        None
    };
    let output = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.paths.workdir.join("predictions.jsonl"));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_at(parent, e))?;
    }
    let gateway = ctx.config.build_gateway();
    let outcome = predict_testset(
        &gateway,
        &ctx.config.endpoints.policy,
        manifest.as_ref(),
        &test,
        &PredictOptions {
            k: ctx.config.candidates_per_set,
            parallelism: ctx.config.parallelism,
            root_seed: ctx.config.seed,
            endpoint_override: use_base_policy.then_some(&ctx.config.endpoints.policy),
            output_path: &output,
        },
    )?;
    report_findings(&outcome.findings);
    Ok(json!({
        "command": "predict",
        "status": "ok",
        "sets": outcome.sets.len(),
        "transport_failures": outcome.transport_failures,
        "base_policy": use_base_policy,
        "digest": outcome.digest,
        "output": path_str(&outcome.output_path),
    }))
}

// ---------------------------------------------------------------------
// eval

fn eval(
    ctx: &RunContext,
    repeats: Option<usize>,
    predictions: Option<&Path>,
    labels: Option<&Path>,
    output: Option<&Path>,
) -> Result<Value, CliError> {
    ctx.config.validate()?;
    let test = read_test(ctx)?;
    let predictions_path = predictions
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.paths.workdir.join("predictions.jsonl"));
    let sets = read_predictions(&predictions_path, &test)?;
    let items: Vec<_> = test.records.iter().cloned().zip(sets).collect();

    let repeats = repeats.unwrap_or(ctx.config.eval.repeats);
    let judge = ctx.config.eval_judge();
    let gateway = ctx.config.build_gateway();

    // Shared across repeats: which items ever went unjudged, how many
    // verdicts fell back to aggregate-only parsing, and the repeat-0
    // verdicts that seed the per-intent breakdown.
    let mut unjudged_items: BTreeSet<usize> = BTreeSet::new();
    let mut degraded = 0usize;
    let mut judged = 0usize;
    let mut bucket_source = Vec::new();

    let summary = repeated_runs(
        |repeat| {
            let (verdicts, findings) =
                judge_outputs(&gateway, judge, &items, ctx.config.seed, repeat, ctx.config.parallelism)?;
            report_findings(&findings);
            let mut usable = Vec::new();
            for (index, verdict) in verdicts.into_iter().enumerate() {
                match verdict {
                    Some(verdict) => {
                        judged += 1;
                        if verdict.degraded {
                            degraded += 1;
                        }
                        if repeat == 0 {
                            bucket_source.push((items[index].0.intent, verdict.clone()));
                        }
                        usable.push(verdict);
                    }
                    None => {
                        unjudged_items.insert(index);
                    }
                }
            }
            metric_set(&usable)
        },
        repeats,
    );
    let mut metrics = match summary {
        Ok(metrics) => metrics,
        // Items exist but none came back judged: the judge transport
        // failed wholesale, which is an infrastructure failure.
        Err(EvalError::Empty) if !items.is_empty() => {
            return Err(PipelineError::TransportExhausted { stage: "eval" }.into());
        }
        Err(error) => return Err(error.into()),
    };

    if let Some(labels_path) = labels {
        let records: Vec<AgreementRecord> = read_jsonl(labels_path)?;
        let agreement = agreement_from_records(&records)?;
        metrics.insert(
            "judge_human_agreement".to_owned(),
            MeanStd { mean: agreement, std: None },
        );
    }

    let intent_buckets = intent_breakdown(&bucket_source)?
        .into_iter()
        .map(|(intent, bucket)| (intent.as_str().to_owned(), bucket))
        .collect();

    let report = EvalReport {
        judge_model: judge.model_name.clone(),
        config_digest: ctx.config.digest()?,
        repeats,
        repeat_seeds: (0..repeats)
            .map(|r| derive_seed(ctx.config.seed, &format!("eval/{r}")))
            .collect(),
        std_convention: "sample (n-1)".to_owned(),
        metrics,
        intent_buckets,
        unjudged: unjudged_items.len(),
        degraded_fraction: if judged == 0 { 0.0 } else { degraded as f64 / judged as f64 },
    };

    let output = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.paths.workdir.join("eval_report.json"));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_at(parent, e))?;
    }
    report.write(&output)?;
    eprintln!("{}", report.render_table());

    let mut summary = json!({
        "command": "eval",
        "status": "ok",
        "items": items.len(),
        "repeats": repeats,
        "unjudged": report.unjudged,
        "degraded_fraction": report.degraded_fraction,
        "strict_accuracy": report.metrics["strict_accuracy"].mean,
        "valid_rate": report.metrics["valid_rate"].mean,
        "output": path_str(&output),
    });
    if let Some(agreement) = report.metrics.get("judge_human_agreement") {
        summary["judge_human_agreement"] = json!(agreement.mean);
    }
    Ok(summary)
}

// ---------------------------------------------------------------------
// metrics

fn engagement_summary(events: &[InteractionEvent]) -> Value {
    let arms = match arm_report(events) {
        Ok(report) => json!({
            "treatment_uv": report.treatment_uv,
            "treatment_pv": report.treatment_pv,
            "control_uv": report.control_uv,
            "control_pv": report.control_pv,
            "uv_growth_gap": report.uv_growth_gap,
            "pv_growth_gap": report.pv_growth_gap,
        }),
        Err(error) => {
            eprintln!("note: no arm comparison: {error}");
            Value::Null
        }
    };
    json!({
        "events": events.len(),
        "chat_uv": chat_uv(events),
        "chat_pv": chat_pv(events),
        "arms": arms,
    })
}

fn metrics(
    ctx: &RunContext,
    log: Option<&Path>,
    start: Option<i64>,
    end: Option<i64>,
) -> Result<Value, CliError> {
    let path = log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.paths.events.clone());
    let events: Vec<InteractionEvent> = read_jsonl(&path)?;
    let total = events.len();
    // Half-open window [start, end) so adjacent windows never double
    // count an event.
    let kept: Vec<InteractionEvent> = events
        .into_iter()
        .filter(|event| {
            start.is_none_or(|s| event.timestamp >= s)
                && end.is_none_or(|e| event.timestamp < e)
        })
        .collect();
    let mut summary = engagement_summary(&kept);
    summary["command"] = json!("metrics");
    summary["status"] = json!("ok");
    summary["log"] = json!(path_str(&path));
    summary["filtered_out"] = json!(total - kept.len());
    Ok(summary)
}

// ---------------------------------------------------------------------
// report

fn report(ctx: &RunContext) -> Result<Value, CliError> {
    let manifest_path = ctx.paths.workdir.join("manifest.json");
    let manifest = if manifest_path.exists() {
        let manifest = PipelineManifest::read(&manifest_path)?;
        json!({
            "stage": manifest.stage.as_str(),
            "iteration": manifest.iteration,
            "policy_endpoint": manifest.policy_endpoint,
            "seed": manifest.seed,
            "failures": manifest.failures.len(),
            "ablation": {
                "no_uncertainty": manifest.ablation.no_uncertainty,
                "sft_skipped": manifest.ablation.sft_skipped,
            },
        })
    } else {
        eprintln!("note: no run manifest at {}", manifest_path.display());
        Value::Null
    };

    let eval_path = ctx.paths.workdir.join("eval_report.json");
    let offline = if eval_path.exists() {
        let text = fs::read_to_string(&eval_path).map_err(|e| io_at(&eval_path, e))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Model(ModelError::Serialize(e)))?;
        eprintln!("{}", report.render_table());
        serde_json::to_value(&report).map_err(|e| CliError::Model(ModelError::Serialize(e)))?
    } else {
        eprintln!("note: no offline report at {}", eval_path.display());
        Value::Null
    };

    let engagement = if ctx.paths.events.exists() {
        let events: Vec<InteractionEvent> = read_jsonl(&ctx.paths.events)?;
        engagement_summary(&events)
    } else {
        eprintln!("note: no event log at {}", ctx.paths.events.display());
        Value::Null
    };

    if manifest.is_null() && offline.is_null() && engagement.is_null() {
        return Err(CliError::Validation {
            message: format!("nothing to report in {}", ctx.paths.workdir.display()),
            findings: Vec::new(),
        });
    }

    Ok(json!({
        "command": "report",
        "status": "ok",
        "training": manifest,
        "offline": offline,
        "engagement": engagement,
    }))
}
