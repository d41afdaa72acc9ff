//! Turning raw model and simulator completions into structured labels.
//!
//! Label markers are matched at their last occurrence, since completions
//! sometimes restate exemplar answers before giving their own.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::domain::{Label, SimulationJudgment, TaskInput, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty completion")]
    Empty,
    #[error("no answer marker found")]
    NoAnswerMarker,
    #[error("no simulation verdict found")]
    NoVerdict,
    #[error("missing field header {0:?}")]
    MissingField(&'static str),
}

static ANSWER_YES_NO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)so\s+the\s+answer\s+is\s+(yes|no)\b").unwrap());
static ANSWER_PAIRWISE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)so\s+candidate\s+response\s*([12])\s+is\s+more\s+helpful").unwrap());
static SIM_YES_NO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)robot\s+will\s+likely\s+answer\s+(yes|no)\b").unwrap());
static SIM_PAIRWISE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)will\s+choose\s+candidate\s+response\s*([12])\b").unwrap());
static REFUSAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)cannot\s+(?:confidently\s+)?guess").unwrap());
static RESPONSE_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:assistant:\s*)?here is my response\.?").unwrap());

/// Removes the "here is my response." lead-in every exemplar answer starts with.
fn strip_response_prefix(raw: &str) -> &str {
    match RESPONSE_PREFIX.find(raw) {
        Some(m) => &raw[m.end()..],
        None => raw,
    }
}

fn capture_label(kind: TaskKind, capture: &str) -> Label {
    match (kind, capture.to_ascii_lowercase().as_str()) {
        (TaskKind::YesNoQa, "yes") => Label::Yes,
        (TaskKind::YesNoQa, _) => Label::No,
        (TaskKind::PairwisePreference, "1") => Label::Response1,
        (TaskKind::PairwisePreference, _) => Label::Response2,
    }
}

/// Splits an explanation-generation completion into the explanation and the
/// final label.
pub fn parse_answer(raw: &str, kind: TaskKind) -> Result<(String, Label), ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let body = strip_response_prefix(raw);
    let re = match kind {
        TaskKind::YesNoQa => &*ANSWER_YES_NO,
        TaskKind::PairwisePreference => &*ANSWER_PAIRWISE,
    };
    let caps = re.captures_iter(body).last().ok_or(ParseError::NoAnswerMarker)?;
    let whole = caps.get(0).unwrap();
    let label = capture_label(kind, &caps[1]);
    Ok((body[..whole.start()].trim().to_string(), label))
}

/// Reads the simulator's verdict. Refusals are detected before any label so
/// that a refusal mentioning a label is still a refusal.
pub fn parse_simulation(raw: &str, kind: TaskKind) -> Result<SimulationJudgment, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    if REFUSAL.is_match(raw) {
        return Ok(SimulationJudgment::Unsimulatable);
    }
    let re = match kind {
        TaskKind::YesNoQa => &*SIM_YES_NO,
        TaskKind::PairwisePreference => &*SIM_PAIRWISE,
    };
    re.captures_iter(raw)
        .last()
        .map(|caps| SimulationJudgment::EntailedOutput(capture_label(kind, &caps[1])))
        .ok_or(ParseError::NoVerdict)
}

const CONTEXT_HEADER: &str = "Context:";
const RESPONSE_1_HEADER: &str = "Candidate Response 1:";
const RESPONSE_2_HEADER: &str = "Candidate Response 2:";

/// Extracts the generated follow-up input from a counterfactual-generation
/// completion.
pub fn parse_counterfactual(raw: &str, kind: TaskKind) -> Result<TaskInput, ParseError> {
    let body = strip_response_prefix(raw).trim_start();
    match kind {
        TaskKind::YesNoQa => {
            let first = body.lines().next().unwrap_or("").trim();
            let first = first
                .strip_prefix("Follow-up Question:")
                .map(str::trim)
                .unwrap_or(first);
            if first.is_empty() {
                return Err(ParseError::Empty);
            }
            Ok(TaskInput::question(first))
        }
        TaskKind::PairwisePreference => {
            if body.is_empty() {
                return Err(ParseError::Empty);
            }
            let c = body
                .find(CONTEXT_HEADER)
                .ok_or(ParseError::MissingField(CONTEXT_HEADER))?;
            let r1 = body[c..]
                .find(RESPONSE_1_HEADER)
                .map(|i| i + c)
                .ok_or(ParseError::MissingField(RESPONSE_1_HEADER))?;
            let r2 = body[r1..]
                .find(RESPONSE_2_HEADER)
                .map(|i| i + r1)
                .ok_or(ParseError::MissingField(RESPONSE_2_HEADER))?;
            let context = body[c + CONTEXT_HEADER.len()..r1].trim();
            let response_1 = body[r1 + RESPONSE_1_HEADER.len()..r2].trim();
            let rest = &body[r2 + RESPONSE_2_HEADER.len()..];
            // The second response runs to the end of its paragraph.
            let response_2 = rest.split("\n\n").next().unwrap_or("").trim();
            if context.is_empty() {
                return Err(ParseError::MissingField(CONTEXT_HEADER));
            }
            if response_1.is_empty() {
                return Err(ParseError::MissingField(RESPONSE_1_HEADER));
            }
            if response_2.is_empty() {
                return Err(ParseError::MissingField(RESPONSE_2_HEADER));
            }
            Ok(TaskInput::pairwise(context, response_1, response_2))
        }
    }
}
