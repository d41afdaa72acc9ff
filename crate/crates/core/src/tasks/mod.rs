//! Dataset ingestion, bundled prompt templates, and request rendering for
//! every pipeline stage.

mod datasets;
mod template;

use std::collections::BTreeMap;

use thiserror::Error;

pub use datasets::{load_shp, load_strategyqa, Dataset};
pub use template::{PromptTemplate, RenderedPrompt, TemplateSet};

use crate::domain::{ExplanationRecord, Label, Method, ModelSystem, TaskInput, TaskInstance, TaskKind};
use crate::gateway::CompletionRequest;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("prompt template {0:?} not found")]
    TemplateMissing(String),
    #[error("template {template}: placeholder {placeholder:?} has no value")]
    PlaceholderUnfilled { template: String, placeholder: String },
    #[error("template {id}: {reason}")]
    BadTemplate { id: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: malformed JSON: {message}")]
    MalformedJson {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {record}: missing field {field:?}")]
    MissingField { record: String, field: &'static str },
    #[error("record {record}: preferred must be 1 or 2, got {value}")]
    BadPreferredValue { record: String, value: String },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {0:?} has empty input text")]
    EmptyInput(String),
    #[error("instance {0:?} does not match the dataset's task kind")]
    KindMismatch(String),
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("{0}")]
    Precondition(String),
}

/// Model parameters copied into every rendered request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestSettings {
    pub provider: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl From<&ModelSystem> for RequestSettings {
    fn from(s: &ModelSystem) -> Self {
        Self {
            provider: s.provider.clone(),
            model_id: s.model_id.clone(),
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            seed: s.seed,
        }
    }
}

/// Stage-specific template ids for a task kind.
#[derive(Debug, Clone, Copy)]
pub struct TemplateIds {
    pub cot: &'static str,
    pub direct_answer: &'static str,
    pub posthoc_explain: &'static str,
    pub counterfactual: &'static str,
    pub simulate: &'static str,
}

pub fn template_ids(kind: TaskKind) -> TemplateIds {
    match kind {
        TaskKind::YesNoQa => TemplateIds {
            cot: "strategyqa.cot",
            direct_answer: "strategyqa.direct_answer",
            posthoc_explain: "strategyqa.posthoc_explain",
            counterfactual: "strategyqa.counterfactual",
            simulate: "strategyqa.simulate",
        },
        TaskKind::PairwisePreference => TemplateIds {
            cot: "shp.explain",
            direct_answer: "shp.direct_answer",
            posthoc_explain: "shp.posthoc_explain",
            counterfactual: "shp.counterfactual",
            simulate: "shp.simulate",
        },
    }
}

fn render(
    templates: &TemplateSet,
    id: &str,
    vars: &BTreeMap<&str, String>,
    settings: &RequestSettings,
) -> Result<CompletionRequest, TaskError> {
    let rendered = templates.get(id)?.render(vars)?;
    Ok(CompletionRequest {
        provider_id: settings.provider.clone(),
        model_id: settings.model_id.clone(),
        template_id: rendered.template_id,
        turns: rendered.turns,
        assistant_prefix: rendered.assistant_prefix,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        seed: settings.seed,
    })
}

fn input_vars(input: &TaskInput, prefix: &str) -> BTreeMap<&'static str, String> {
    let mut vars = BTreeMap::new();
    match input {
        TaskInput::Question { question } => {
            let key = if prefix.is_empty() { "question" } else { "follow_up" };
            vars.insert(key, question.clone());
        }
        TaskInput::Pairwise {
            context,
            response_1,
            response_2,
        } => {
            let keys: [&'static str; 3] = if prefix.is_empty() {
                ["context", "response_1", "response_2"]
            } else {
                ["follow_up_context", "follow_up_response_1", "follow_up_response_2"]
            };
            vars.insert(keys[0], context.clone());
            vars.insert(keys[1], response_1.clone());
            vars.insert(keys[2], response_2.clone());
        }
    }
    vars
}

/// Chain-of-thought request: reasoning, then the answer marker.
pub fn render_cot_request(
    templates: &TemplateSet,
    input: &TaskInput,
    settings: &RequestSettings,
) -> Result<CompletionRequest, TaskError> {
    render(
        templates,
        template_ids(input.kind()).cot,
        &input_vars(input, ""),
        settings,
    )
}

/// Answer-only request used for post-hoc systems.
pub fn render_direct_answer_request(
    templates: &TemplateSet,
    input: &TaskInput,
    settings: &RequestSettings,
) -> Result<CompletionRequest, TaskError> {
    render(
        templates,
        template_ids(input.kind()).direct_answer,
        &input_vars(input, ""),
        settings,
    )
}

/// Asks for a justification of a given answer.
pub fn render_posthoc_explain_request(
    templates: &TemplateSet,
    input: &TaskInput,
    answer: Label,
    settings: &RequestSettings,
) -> Result<CompletionRequest, TaskError> {
    if answer.kind() != input.kind() {
        return Err(TaskError::Precondition(format!(
            "label {answer} does not fit a {:?} input",
            input.kind()
        )));
    }
    let mut vars = input_vars(input, "");
    vars.insert("answer", answer.prompt_text().to_string());
    render(templates, template_ids(input.kind()).posthoc_explain, &vars, settings)
}

/// The requests needed to obtain an explanation from one system.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplanationPlan {
    /// One request whose completion holds both explanation and answer.
    Cot(CompletionRequest),
    /// Ask for the answer first; the explanation request is rendered with
    /// [`render_posthoc_explain_request`] once the answer is parsed.
    PostHoc { answer: CompletionRequest },
    /// Explain a label chosen by the caller.
    Forced { label: Label, explain: CompletionRequest },
}

/// The label a forced explanation argues for.
pub fn forced_label_for(normal_output: Label) -> Label {
    normal_output.opposite()
}

pub fn render_explanation_prompt(
    templates: &TemplateSet,
    instance: &TaskInstance,
    system: &ModelSystem,
    forced_label: Option<Label>,
) -> Result<ExplanationPlan, TaskError> {
    let settings = RequestSettings::from(system);
    match (system.method, forced_label) {
        (Method::Cot, None) => Ok(ExplanationPlan::Cot(render_cot_request(
            templates,
            &instance.input,
            &settings,
        )?)),
        (Method::PostHoc, None) => Ok(ExplanationPlan::PostHoc {
            answer: render_direct_answer_request(templates, &instance.input, &settings)?,
        }),
        (Method::ForcedPostHoc, Some(label)) => Ok(ExplanationPlan::Forced {
            label,
            explain: render_posthoc_explain_request(templates, &instance.input, label, &settings)?,
        }),
        (Method::ForcedPostHoc, None) => Err(TaskError::Precondition(
            "forced explanations need the label to force".into(),
        )),
        (_, Some(_)) => Err(TaskError::Precondition(
            "a forced label is only valid for forced post-hoc systems".into(),
        )),
    }
}

fn robot_vars(
    record: &ExplanationRecord,
    instance: &TaskInstance,
) -> Result<BTreeMap<&'static str, String>, TaskError> {
    if record.instance_id != instance.id {
        return Err(TaskError::Precondition(format!(
            "record for {} rendered with instance {}",
            record.instance_id, instance.id
        )));
    }
    let (Some(label), Some(answer)) = (record.output, record.robot_answer()) else {
        return Err(TaskError::Precondition(format!(
            "explanation {} failed to parse and cannot be simulated",
            record.key()
        )));
    };
    let mut vars = input_vars(&instance.input, "");
    match instance.kind() {
        TaskKind::YesNoQa => {
            vars.insert("robot_answer", answer);
        }
        TaskKind::PairwisePreference => {
            vars.insert("robot_choice", label.prompt_text().to_string());
            vars.insert("robot_explanation", answer);
        }
    }
    Ok(vars)
}

/// Asks a generator for one follow-up input the explanation should cover.
pub fn render_counterfactual_prompt(
    templates: &TemplateSet,
    record: &ExplanationRecord,
    instance: &TaskInstance,
    settings: &RequestSettings,
) -> Result<CompletionRequest, TaskError> {
    let vars = robot_vars(record, instance)?;
    render(templates, template_ids(instance.kind()).counterfactual, &vars, settings)
}

/// Asks the simulator what the model would output on `counterfactual`.
pub fn render_simulation_prompt(
    templates: &TemplateSet,
    record: &ExplanationRecord,
    instance: &TaskInstance,
    counterfactual: &TaskInput,
    settings: &RequestSettings,
) -> Result<CompletionRequest, TaskError> {
    if counterfactual.is_blank() {
        return Err(TaskError::Precondition("empty counterfactual".into()));
    }
    if counterfactual.kind() != instance.kind() {
        return Err(TaskError::Precondition(
            "counterfactual kind differs from its parent".into(),
        ));
    }
    let mut vars = robot_vars(record, instance)?;
    vars.extend(input_vars(counterfactual, "follow_up"));
    render(templates, template_ids(instance.kind()).simulate, &vars, settings)
}

/// Fraction of records whose output equals gold; parse failures count as
/// wrong. `None` for no records.
pub fn task_accuracy(records: &[ExplanationRecord], dataset: &Dataset) -> Result<Option<f64>, TaskError> {
    if records.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for r in records {
        let inst = dataset
            .get(&r.instance_id)
            .ok_or_else(|| TaskError::UnknownInstance(r.instance_id.clone()))?;
        if r.output == Some(inst.gold) {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / records.len() as f64))
}
