use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TaskError;
use crate::domain::{Label, TaskInput, TaskInstance, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub kind: TaskKind,
    pub instances: Vec<TaskInstance>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, kind: TaskKind, instances: Vec<TaskInstance>) -> Result<Self, TaskError> {
        let mut seen = HashSet::new();
        for inst in &instances {
            if inst.kind() != kind || inst.gold.kind() != kind {
                return Err(TaskError::KindMismatch(inst.id.clone()));
            }
            if inst.input.is_blank() {
                return Err(TaskError::EmptyInput(inst.id.clone()));
            }
            if !seen.insert(inst.id.as_str()) {
                return Err(TaskError::DuplicateId(inst.id.clone()));
            }
        }
        Ok(Self {
            id: id.into(),
            kind,
            instances,
        })
    }

    pub fn get(&self, id: &str) -> Option<&TaskInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

fn read(path: &Path) -> Result<String, TaskError> {
    std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn malformed(path: &Path, line_offset: usize, e: serde_json::Error) -> TaskError {
    TaskError::MalformedJson {
        path: path.display().to_string(),
        line: e.line() + line_offset,
        column: e.column(),
        message: e.to_string(),
    }
}

fn string_field(obj: &Value, field: &'static str, record: &str) -> Result<String, TaskError> {
    obj.get(field)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TaskError::MissingField {
            record: record.to_string(),
            field,
        })
}

fn explicit_id(obj: &Value) -> Option<String> {
    ["id", "qid"].iter().find_map(|k| match obj.get(*k) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    })
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

/// Loads a JSON array of `{question, answer: bool}` objects. Other fields
/// are ignored except `id`/`qid`, which name the instance.
pub fn load_strategyqa(path: &Path) -> Result<Dataset, TaskError> {
    let text = read(path)?;
    let items: Vec<Value> = serde_json::from_str(&text).map_err(|e| malformed(path, 0, e))?;
    if items.is_empty() {
        tracing::warn!(path = %path.display(), "dataset is empty");
    }
    let instances = items
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let id = explicit_id(obj).unwrap_or_else(|| format!("strategyqa-{i}"));
            let question = string_field(obj, "question", &id)?;
            let answer = obj
                .get("answer")
                .and_then(Value::as_bool)
                .ok_or_else(|| TaskError::MissingField {
                    record: id.clone(),
                    field: "answer",
                })?;
            Ok(TaskInstance {
                id,
                input: TaskInput::question(question),
                gold: if answer { Label::Yes } else { Label::No },
            })
        })
        .collect::<Result<Vec<_>, TaskError>>()?;
    Dataset::new(dataset_id(path), TaskKind::YesNoQa, instances)
}

/// Loads JSON lines of `{context, response_1, response_2, preferred: 1|2}`.
pub fn load_shp(path: &Path) -> Result<Dataset, TaskError> {
    let text = read(path)?;
    let mut instances = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(line).map_err(|e| malformed(path, line_no, e))?;
        let id = explicit_id(&obj).unwrap_or_else(|| format!("shp-{}", line_no + 1));
        let context = string_field(&obj, "context", &id)?;
        let response_1 = string_field(&obj, "response_1", &id)?;
        let response_2 = string_field(&obj, "response_2", &id)?;
        let preferred = obj.get("preferred").ok_or_else(|| TaskError::MissingField {
            record: id.clone(),
            field: "preferred",
        })?;
        let gold = match preferred.as_u64() {
            Some(1) => Label::Response1,
            Some(2) => Label::Response2,
            _ => {
                return Err(TaskError::BadPreferredValue {
                    record: id,
                    value: preferred.to_string(),
                })
            }
        };
        instances.push(TaskInstance {
            id,
            input: TaskInput::pairwise(context, response_1, response_2),
            gold,
        });
    }
    if instances.is_empty() {
        tracing::warn!(path = %path.display(), "dataset is empty");
    }
    Dataset::new(dataset_id(path), TaskKind::PairwisePreference, instances)
}
