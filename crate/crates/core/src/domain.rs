//! Shared value types for the evaluation pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The two supported task shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Yes/no question answering (StrategyQA style).
    YesNoQa,
    /// Pick the more helpful of two responses to a context (SHP style).
    PairwisePreference,
}

impl TaskKind {
    pub fn labels(self) -> [Label; 2] {
        match self {
            TaskKind::YesNoQa => [Label::Yes, Label::No],
            TaskKind::PairwisePreference => [Label::Response1, Label::Response2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yes,
    No,
    #[serde(rename = "response_1")]
    Response1,
    #[serde(rename = "response_2")]
    Response2,
}

impl Label {
    pub fn kind(self) -> TaskKind {
        match self {
            Label::Yes | Label::No => TaskKind::YesNoQa,
            Label::Response1 | Label::Response2 => TaskKind::PairwisePreference,
        }
    }

    /// The other label of the same task kind.
    pub fn opposite(self) -> Label {
        match self {
            Label::Yes => Label::No,
            Label::No => Label::Yes,
            Label::Response1 => Label::Response2,
            Label::Response2 => Label::Response1,
        }
    }

    /// The sentence a model is instructed to end its answer with.
    pub fn marker_sentence(self) -> &'static str {
        match self {
            Label::Yes => "So the answer is yes.",
            Label::No => "So the answer is no.",
            Label::Response1 => "So Candidate Response 1 is more helpful.",
            Label::Response2 => "So Candidate Response 2 is more helpful.",
        }
    }

    /// How the label is written inside prompts ("yes", "Candidate Response 1").
    pub fn prompt_text(self) -> &'static str {
        match self {
            Label::Yes => "yes",
            Label::No => "no",
            Label::Response1 => "Candidate Response 1",
            Label::Response2 => "Candidate Response 2",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Yes => "yes",
            Label::No => "no",
            Label::Response1 => "response_1",
            Label::Response2 => "response_2",
        };
        f.write_str(s)
    }
}

/// The text of one task input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum TaskInput {
    Question {
        question: String,
    },
    Pairwise {
        context: String,
        response_1: String,
        response_2: String,
    },
}

impl TaskInput {
    pub fn question(q: impl Into<String>) -> Self {
        TaskInput::Question { question: q.into() }
    }

    pub fn pairwise(context: impl Into<String>, response_1: impl Into<String>, response_2: impl Into<String>) -> Self {
        TaskInput::Pairwise {
            context: context.into(),
            response_1: response_1.into(),
            response_2: response_2.into(),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskInput::Question { .. } => TaskKind::YesNoQa,
            TaskInput::Pairwise { .. } => TaskKind::PairwisePreference,
        }
    }

    /// Flat text used for similarity computations and display.
    pub fn text(&self) -> String {
        match self {
            TaskInput::Question { question } => question.clone(),
            TaskInput::Pairwise {
                context,
                response_1,
                response_2,
            } => format!("Context: {context}\nCandidate Response 1: {response_1}\nCandidate Response 2: {response_2}"),
        }
    }

    pub fn is_blank(&self) -> bool {
        match self {
            TaskInput::Question { question } => question.trim().is_empty(),
            TaskInput::Pairwise {
                context,
                response_1,
                response_2,
            } => context.trim().is_empty() || response_1.trim().is_empty() || response_2.trim().is_empty(),
        }
    }

    /// Normalized form used for deduplication and the "differs from the
    /// original input" check.
    pub fn normalized(&self) -> String {
        normalize_text(&self.text())
    }
}

/// Lowercase, drop punctuation, collapse whitespace, trim.
pub fn normalize_text(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub input: TaskInput,
    pub gold: Label,
}

impl TaskInstance {
    pub fn kind(&self) -> TaskKind {
        self.input.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Reasoning first, then the answer.
    Cot,
    /// Answer first, then an explanation conditioned on it.
    #[serde(rename = "posthoc")]
    PostHoc,
    /// Post-hoc explanation of the label the model did not pick.
    #[serde(rename = "forced")]
    ForcedPostHoc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cot => "cot",
            Method::PostHoc => "posthoc",
            Method::ForcedPostHoc => "forced",
        }
    }
}

/// A model plus the way it is asked to explain itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSystem {
    /// Provider id as configured in the gateway.
    pub provider: String,
    pub model_id: String,
    pub method: Method,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    512
}

impl ModelSystem {
    pub fn new(provider: impl Into<String>, model_id: impl Into<String>, method: Method) -> Self {
        Self {
            provider: provider.into(),
            model_id: model_id.into(),
            method,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            seed: None,
        }
    }

    /// `<model>/<cot|posthoc|forced>`
    pub fn system_id(&self) -> String {
        format!("{}/{}", self.model_id, self.method.as_str())
    }

    /// The same model explained with a different method.
    pub fn with_method(&self, method: Method) -> Self {
        Self { method, ..self.clone() }
    }
}

/// Identifies one explanation: an input explained by one system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExplanationKey {
    pub instance_id: String,
    pub system_id: String,
}

impl fmt::Display for ExplanationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.instance_id, self.system_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub instance_id: String,
    pub system_id: String,
    pub explanation: String,
    /// `None` when the completion could not be parsed; such records are
    /// excluded from every metric.
    pub output: Option<Label>,
    pub raw_completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ExplanationRecord {
    pub fn key(&self) -> ExplanationKey {
        ExplanationKey {
            instance_id: self.instance_id.clone(),
            system_id: self.system_id.clone(),
        }
    }

    pub fn is_parse_valid(&self) -> bool {
        self.output.is_some()
    }

    /// The explanation text followed by the marker sentence for its output,
    /// which is what the simulator is shown as the model's answer.
    pub fn robot_answer(&self) -> Option<String> {
        let label = self.output?;
        let explanation = self.explanation.trim();
        Some(if explanation.is_empty() {
            label.marker_sentence().to_string()
        } else {
            format!("{explanation} {}", label.marker_sentence())
        })
    }
}

/// The simulator's inferred output on a counterfactual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationJudgment {
    EntailedOutput(Label),
    Unsimulatable,
}

impl SimulationJudgment {
    pub fn entailed(self) -> Option<Label> {
        match self {
            SimulationJudgment::EntailedOutput(l) => Some(l),
            SimulationJudgment::Unsimulatable => None,
        }
    }

    pub fn is_simulatable(self) -> bool {
        matches!(self, SimulationJudgment::EntailedOutput(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSource {
    LlmSimulator,
    HumanMajority,
}

/// A generated counterfactual joined with everything later stages learned
/// about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub id: String,
    pub parent: ExplanationKey,
    pub input: TaskInput,
    pub generator_id: String,
    pub judgment: Option<SimulationJudgment>,
    pub judgment_source: Option<JudgmentSource>,
    pub actual_output: Option<Label>,
}

impl CounterfactualRecord {
    pub fn text(&self) -> String {
        self.input.text()
    }

    /// Membership in the simulatable subset.
    pub fn is_simulatable(&self) -> bool {
        self.judgment.is_some_and(SimulationJudgment::is_simulatable)
    }
}
