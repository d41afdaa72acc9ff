use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::TaskError;
use crate::gateway::{ChatTurn, Role};

/// A few-shot chat prompt with `{{placeholder}}` markers.
///
/// On disk a template is plain text: optional `## key: value` header lines
/// followed by turns, each starting with `Human: ` or `Assistant: ` at the
/// beginning of a line that follows a blank line. A trailing assistant
/// turn becomes the reply prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub version: String,
    pub turns: Vec<ChatTurn>,
    pub assistant_prefix: Option<String>,
}

/// A rendered template, ready to wrap in a completion request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub turns: Vec<ChatTurn>,
    pub assistant_prefix: Option<String>,
}

fn turn_start(line: &str) -> Option<(Role, &str)> {
    if let Some(rest) = line.strip_prefix("Human:") {
        Some((Role::Human, rest.strip_prefix(' ').unwrap_or(rest)))
    } else if let Some(rest) = line.strip_prefix("Assistant:") {
        Some((Role::Assistant, rest.strip_prefix(' ').unwrap_or(rest)))
    } else {
        None
    }
}

impl PromptTemplate {
    pub fn parse(id: &str, text: &str) -> Result<Self, TaskError> {
        let mut version = String::from("1");
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.peek() {
            let Some(header) = line.strip_prefix("## ") else {
                break;
            };
            if let Some((key, value)) = header.split_once(':') {
                if key.trim() == "version" {
                    version = value.trim().to_string();
                }
            }
            lines.next();
        }

        let mut turns: Vec<(Role, Vec<&str>)> = Vec::new();
        let mut previous_blank = true;
        for line in lines {
            match turn_start(line) {
                Some((role, rest)) if previous_blank => turns.push((role, vec![rest])),
                _ => match turns.last_mut() {
                    Some((_, body)) => body.push(line),
                    None if line.trim().is_empty() => {}
                    None => {
                        return Err(TaskError::BadTemplate {
                            id: id.to_string(),
                            reason: "text before the first turn".into(),
                        })
                    }
                },
            }
            previous_blank = line.trim().is_empty();
        }
        let mut turns: Vec<ChatTurn> = turns
            .into_iter()
            .map(|(role, body)| ChatTurn {
                role,
                content: body.join("\n").trim_end().to_string(),
            })
            .collect();
        let assistant_prefix = match turns.last() {
            Some(t) if t.role == Role::Assistant => turns.pop().map(|t| t.content),
            _ => None,
        };
        if turns.last().map(|t| t.role) != Some(Role::Human) {
            return Err(TaskError::BadTemplate {
                id: id.to_string(),
                reason: "no human turn".into(),
            });
        }
        Ok(Self {
            id: id.to_string(),
            version,
            turns,
            assistant_prefix,
        })
    }

    /// Names of all placeholders, in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for turn in &self.turns {
            let mut rest = turn.content.as_str();
            while let Some(start) = rest.find("{{") {
                let after = &rest[start + 2..];
                let Some(end) = after.find("}}") else { break };
                let name = after[..end].trim().to_string();
                if !names.contains(&name) {
                    names.push(name);
                }
                rest = &after[end + 2..];
            }
        }
        names
    }

    /// Substitutes every placeholder. Inserted values are not rescanned.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<RenderedPrompt, TaskError> {
        let turns = self
            .turns
            .iter()
            .map(|turn| {
                let mut out = String::with_capacity(turn.content.len());
                let mut rest = turn.content.as_str();
                while let Some(start) = rest.find("{{") {
                    let after = &rest[start + 2..];
                    let Some(end) = after.find("}}") else { break };
                    let name = after[..end].trim();
                    let value = vars.get(name).ok_or_else(|| TaskError::PlaceholderUnfilled {
                        template: self.id.clone(),
                        placeholder: name.to_string(),
                    })?;
                    out.push_str(&rest[..start]);
                    out.push_str(value);
                    rest = &after[end + 2..];
                }
                out.push_str(rest);
                Ok(ChatTurn {
                    role: turn.role,
                    content: out,
                })
            })
            .collect::<Result<Vec<_>, TaskError>>()?;
        Ok(RenderedPrompt {
            template_id: self.id.clone(),
            turns,
            assistant_prefix: self.assistant_prefix.clone(),
        })
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("strategyqa.cot", include_str!("../../prompts/strategyqa.cot.txt")),
    (
        "strategyqa.direct_answer",
        include_str!("../../prompts/strategyqa.direct_answer.txt"),
    ),
    (
        "strategyqa.posthoc_explain",
        include_str!("../../prompts/strategyqa.posthoc_explain.txt"),
    ),
    (
        "strategyqa.counterfactual",
        include_str!("../../prompts/strategyqa.counterfactual.txt"),
    ),
    (
        "strategyqa.simulate",
        include_str!("../../prompts/strategyqa.simulate.txt"),
    ),
    ("shp.explain", include_str!("../../prompts/shp.explain.txt")),
    ("shp.direct_answer", include_str!("../../prompts/shp.direct_answer.txt")),
    (
        "shp.posthoc_explain",
        include_str!("../../prompts/shp.posthoc_explain.txt"),
    ),
    (
        "shp.counterfactual",
        include_str!("../../prompts/shp.counterfactual.txt"),
    ),
    ("shp.simulate", include_str!("../../prompts/shp.simulate.txt")),
];

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        let templates = BUNDLED
            .iter()
            .map(|(id, text)| {
                let t = PromptTemplate::parse(id, text).expect("bundled templates parse");
                (id.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    pub fn empty() -> Self {
        Self {
            templates: HashMap::new(),
        }
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    /// Replaces bundled templates with any `<id>.txt` found in `dir`.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, TaskError> {
        let entries = std::fs::read_dir(dir).map_err(|e| TaskError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        for entry in entries {
            let path = entry
                .map_err(|e| TaskError::Io {
                    path: dir.display().to_string(),
                    source: e,
                })?
                .path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|e| TaskError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            self.insert(PromptTemplate::parse(id, &text)?);
        }
        Ok(self)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TaskError> {
        self.templates
            .get(id)
            .ok_or_else(|| TaskError::TemplateMissing(id.to_string()))
    }

    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.templates.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::bundled()
    }
}
