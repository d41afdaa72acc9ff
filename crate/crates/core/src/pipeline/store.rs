//! Append-only JSON-lines run store.
//!
//! Every line carries a `kind` and `schema_version`. Records are never
//! rewritten; when a key appears twice the first line wins.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{PipelineError, RunConfig};
use crate::domain::{
    CounterfactualRecord, ExplanationKey, ExplanationRecord, JudgmentSource, Label, SimulationJudgment, TaskInput,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const STORE_FILE: &str = "store.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCounterfactual {
    pub id: String,
    pub input: TaskInput,
    pub generator_id: String,
}

/// What happened to the raw generator samples of one explanation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTallies {
    pub requested: u32,
    /// Unparseable samples per generator id.
    pub parse_failures: BTreeMap<String, u32>,
    pub duplicates: u32,
    pub equal_to_input: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSet {
    pub parent: ExplanationKey,
    pub counterfactuals: Vec<GeneratedCounterfactual>,
    pub tallies: GenerationTallies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationEntry {
    pub counterfactual_id: String,
    pub judgment: SimulationJudgment,
    pub source: JudgmentSource,
    /// The simulator's reply could not be parsed and counts as unsimulatable.
    #[serde(default)]
    pub parse_failed: bool,
    /// Human judgments that went into the vote.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub counterfactual_id: String,
    /// `None` when the model's reply could not be parsed.
    pub actual_output: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum StoreEntry {
    Run(RunHeader),
    Explanation(ExplanationRecord),
    CounterfactualSet(CounterfactualSet),
    Simulation(SimulationEntry),
    CounterfactualOutput(OutputEntry),
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(flatten)]
    entry: StoreEntry,
}

#[derive(Default)]
struct Index {
    header: Option<RunHeader>,
    explanations: BTreeMap<ExplanationKey, ExplanationRecord>,
    sets: BTreeMap<ExplanationKey, CounterfactualSet>,
    simulations: BTreeMap<String, SimulationEntry>,
    outputs: BTreeMap<String, OutputEntry>,
}

impl Index {
    /// Returns false when the key is already present.
    fn insert(&mut self, entry: StoreEntry) -> bool {
        match entry {
            StoreEntry::Run(h) => {
                if self.header.is_some() {
                    return false;
                }
                self.header = Some(h);
            }
            StoreEntry::Explanation(r) => {
                if self.explanations.contains_key(&r.key()) {
                    return false;
                }
                self.explanations.insert(r.key(), r);
            }
            StoreEntry::CounterfactualSet(s) => {
                if self.sets.contains_key(&s.parent) {
                    return false;
                }
                self.sets.insert(s.parent.clone(), s);
            }
            StoreEntry::Simulation(s) => {
                if self.simulations.contains_key(&s.counterfactual_id) {
                    return false;
                }
                self.simulations.insert(s.counterfactual_id.clone(), s);
            }
            StoreEntry::CounterfactualOutput(o) => {
                if self.outputs.contains_key(&o.counterfactual_id) {
                    return false;
                }
                self.outputs.insert(o.counterfactual_id.clone(), o);
            }
        }
        true
    }

    fn would_insert(&self, entry: &StoreEntry) -> bool {
        match entry {
            StoreEntry::Run(_) => self.header.is_none(),
            StoreEntry::Explanation(r) => !self.explanations.contains_key(&r.key()),
            StoreEntry::CounterfactualSet(s) => !self.sets.contains_key(&s.parent),
            StoreEntry::Simulation(s) => !self.simulations.contains_key(&s.counterfactual_id),
            StoreEntry::CounterfactualOutput(o) => !self.outputs.contains_key(&o.counterfactual_id),
        }
    }
}

struct Inner {
    index: Index,
    file: Option<File>,
}

pub struct RunStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl RunStore {
    /// Opens (or creates) `<dir>/store.jsonl`, replaying existing lines.
    ///
    /// A final line without a trailing newline is an interrupted write; it
    /// is ignored and cut off; any other malformed line is an error.
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join(STORE_FILE);
        let mut index = Index::default();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
            let complete = text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                if i + 1 == lines.len() && !complete {
                    tracing::warn!(path = %path.display(), "ignoring unterminated final line");
                    continue;
                }
                let parsed: Result<Line, _> = serde_json::from_str(line);
                match parsed {
                    Ok(l) if l.schema_version == SCHEMA_VERSION => {
                        index.insert(l.entry);
                    }
                    Ok(l) => {
                        return Err(PipelineError::Store {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: format!("unsupported schema_version {}", l.schema_version),
                        })
                    }
                    Err(e) => {
                        return Err(PipelineError::Store {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            if !complete && !text.is_empty() {
                // Drop the partial line so later appends start cleanly.
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .and_then(|f| f.set_len(keep as u64))
                    .map_err(|e| PipelineError::io(&path, e))?;
            }
        }
        Ok(Self {
            path,
            inner: Mutex::new(Inner { index, file: None }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends an entry unless its key is already stored. Returns whether
    /// a line was written.
    pub fn append(&self, entry: StoreEntry) -> Result<bool, PipelineError> {
        let mut inner = self.inner.lock().expect("store lock");
        if !inner.index.would_insert(&entry) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(&Line {
            schema_version: SCHEMA_VERSION,
            entry: entry.clone(),
        })
        .expect("store entries serialize");
        line.push('\n');
        if inner.file.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| PipelineError::io(&self.path, e))?;
            inner.file = Some(f);
        }
        let file = inner.file.as_mut().expect("file opened above");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| PipelineError::io(&self.path, e))?;
        inner.index.insert(entry);
        Ok(true)
    }

    pub fn header(&self) -> Option<RunHeader> {
        self.inner.lock().expect("store lock").index.header.clone()
    }

    pub fn explanation(&self, key: &ExplanationKey) -> Option<ExplanationRecord> {
        self.inner
            .lock()
            .expect("store lock")
            .index
            .explanations
            .get(key)
            .cloned()
    }

    pub fn explanations(&self) -> Vec<ExplanationRecord> {
        self.inner
            .lock()
            .expect("store lock")
            .index
            .explanations
            .values()
            .cloned()
            .collect()
    }

    pub fn counterfactual_set(&self, key: &ExplanationKey) -> Option<CounterfactualSet> {
        self.inner.lock().expect("store lock").index.sets.get(key).cloned()
    }

    pub fn counterfactual_sets(&self) -> Vec<CounterfactualSet> {
        self.inner
            .lock()
            .expect("store lock")
            .index
            .sets
            .values()
            .cloned()
            .collect()
    }

    pub fn simulation(&self, counterfactual_id: &str) -> Option<SimulationEntry> {
        self.inner
            .lock()
            .expect("store lock")
            .index
            .simulations
            .get(counterfactual_id)
            .cloned()
    }

    pub fn output(&self, counterfactual_id: &str) -> Option<OutputEntry> {
        self.inner
            .lock()
            .expect("store lock")
            .index
            .outputs
            .get(counterfactual_id)
            .cloned()
    }

    /// The joined view of every counterfactual of one explanation.
    pub fn counterfactual_records(&self, key: &ExplanationKey) -> Vec<CounterfactualRecord> {
        let inner = self.inner.lock().expect("store lock");
        let Some(set) = inner.index.sets.get(key) else {
            return Vec::new();
        };
        set.counterfactuals
            .iter()
            .map(|c| {
                let sim = inner.index.simulations.get(&c.id);
                CounterfactualRecord {
                    id: c.id.clone(),
                    parent: key.clone(),
                    input: c.input.clone(),
                    generator_id: c.generator_id.clone(),
                    judgment: sim.map(|s| s.judgment),
                    judgment_source: sim.map(|s| s.source),
                    actual_output: inner.index.outputs.get(&c.id).and_then(|o| o.actual_output),
                }
            })
            .collect()
    }
}
