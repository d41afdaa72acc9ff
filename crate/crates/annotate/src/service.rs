use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use cfsim::pipeline::human::{
    simulation_label, AnnotationKind, AnnotationTaskSpec, ExportLabel, JudgmentExportLine, TaskPayload, CANNOT_TELL,
};
use cfsim::{Label, TaskInput};
use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::AnnotateError;

const BUNDLED_QUALIFICATION: &str = include_str!("../data/qualification.json");
const BUNDLED_INSTRUCTIONS: &str = include_str!("../data/instructions.json");

pub const DEFAULT_REDUNDANCY: usize = 3;
pub const DEFAULT_PASS_THRESHOLD: usize = 9;
pub const DEFAULT_TTL_MINUTES: i64 = 30;
pub const DEFAULT_RATING_MAX: u8 = 5;

/// One exam item with a known answer ("yes", "no", "response_1", ... or
/// "cannot_tell").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationItem {
    pub id: String,
    pub input: TaskInput,
    pub explanation: String,
    pub output: Label,
    pub counterfactual: TaskInput,
    pub answer: String,
}

pub fn bundled_qualification() -> Vec<QualificationItem> {
    serde_json::from_str(BUNDLED_QUALIFICATION).expect("bundled qualification set parses")
}

pub fn load_qualification(path: &Path) -> Result<Vec<QualificationItem>, AnnotateError> {
    let text = std::fs::read_to_string(path).map_err(|e| AnnotateError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AnnotateError::Invalid(format!("{}: {e}", path.display())))
}

/// Instruction text per task kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instructions {
    #[serde(default)]
    pub note: String,
    pub simulation: String,
    pub plausibility: String,
    pub qualification: String,
}

impl Instructions {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_INSTRUCTIONS).expect("bundled instructions parse")
    }

    fn for_kind(&self, kind: AnnotationKind) -> &str {
        match kind {
            AnnotationKind::Simulation => &self.simulation,
            AnnotationKind::Plausibility => &self.plausibility,
            AnnotationKind::Qualification => &self.qualification,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub redundancy: usize,
    pub reservation_ttl: Duration,
    pub pass_threshold: usize,
    pub rating_max: u8,
    pub qualification: Vec<QualificationItem>,
    pub instructions: Instructions,
    /// Append-only judgment journal; in memory when `None`.
    pub journal: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            redundancy: DEFAULT_REDUNDANCY,
            reservation_ttl: Duration::minutes(DEFAULT_TTL_MINUTES),
            pass_threshold: DEFAULT_PASS_THRESHOLD,
            rating_max: DEFAULT_RATING_MAX,
            qualification: bundled_qualification(),
            instructions: Instructions::bundled(),
            journal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentState {
    Pending,
    Submitted,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub task_id: String,
    pub worker_id: String,
    pub state: AssignmentState,
    pub reserved_at: DateTime<Utc>,
    pub label: Option<ExportLabel>,
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WorkerProfile {
    pub worker_id: String,
    pub qualified: bool,
    /// Exam items answered correctly.
    pub score: usize,
    pub answered: usize,
}

/// What a worker is shown. Qualification answers are stripped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub kind: AnnotationKind,
    pub payload: TaskPayload,
    pub instructions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualification: Option<QualificationProgress>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualificationProgress {
    /// 1-based position of this item in the exam.
    pub item: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub task_id: String,
    pub worker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualified: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks: usize,
    /// Tasks with `redundancy` submitted judgments.
    pub complete_tasks: usize,
    pub pending: usize,
    pub submitted: usize,
    pub expired: usize,
    pub workers: usize,
    pub qualified_workers: usize,
}

/// Journal lines. Replaying them rebuilds every assignment and worker score.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Reserved {
        task_id: String,
        worker_id: String,
        at: DateTime<Utc>,
    },
    Submitted {
        task_id: String,
        worker_id: String,
        label: ExportLabel,
        at: DateTime<Utc>,
    },
}

struct Task {
    spec: AnnotationTaskSpec,
    /// Qualification items are answered by every worker and have no cap.
    exam_answer: Option<String>,
}

#[derive(Default)]
struct State {
    tasks: Vec<Task>,
    index: HashMap<String, usize>,
    exam: Vec<usize>,
    assignments: BTreeMap<(String, String), Assignment>,
    workers: HashMap<String, WorkerProfile>,
    journal: Option<File>,
}

pub struct AnnotationService {
    cfg: ServiceConfig,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl AnnotationService {
    /// Builds the service and replays the journal if one exists.
    pub fn new(cfg: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, AnnotateError> {
        if cfg.redundancy == 0 {
            return Err(AnnotateError::Invalid("redundancy must be at least 1".into()));
        }
        if cfg.pass_threshold > cfg.qualification.len() {
            return Err(AnnotateError::Invalid(format!(
                "pass threshold {} exceeds the {} qualification items",
                cfg.pass_threshold,
                cfg.qualification.len()
            )));
        }
        let mut state = State::default();
        for item in &cfg.qualification {
            let kind = item.input.kind();
            if simulation_label(&item.answer, kind).is_none() {
                return Err(AnnotateError::Invalid(format!(
                    "qualification item {}: answer {:?} is not a valid choice",
                    item.id, item.answer
                )));
            }
            let spec = AnnotationTaskSpec {
                task_id: format!("qualification:{}", item.id),
                run_id: None,
                counterfactual_id: None,
                instance_id: None,
                system_id: None,
                payload: TaskPayload::Qualification {
                    input: item.input.clone(),
                    explanation: item.explanation.clone(),
                    output: item.output,
                    counterfactual: item.counterfactual.clone(),
                    answer: None,
                },
            };
            state.exam.push(state.tasks.len());
            add(&mut state, spec, Some(item.answer.clone()))?;
        }
        let service = Self {
            cfg,
            clock,
            state: Mutex::new(state),
        };
        if let Some(path) = &service.cfg.journal {
            service.replay(path)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| AnnotateError::io(path, e))?;
            service.lock().journal = Some(file);
        }
        Ok(service)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn replay(&self, path: &Path) -> Result<(), AnnotateError> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(AnnotateError::io(path, e)),
        };
        let mut state = self.lock();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| AnnotateError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let Ok(event) = serde_json::from_str::<Event>(&line) else {
                tracing::warn!(line = n + 1, "skipping unreadable journal line");
                continue;
            };
            self.apply(&mut state, event);
        }
        Ok(())
    }

    /// Applies an event to in-memory state. Events are only journaled after
    /// validation, so replay does not validate again.
    fn apply(&self, state: &mut State, event: Event) {
        match event {
            Event::Reserved { task_id, worker_id, at } => {
                state.workers.entry(worker_id.clone()).or_insert_with(|| WorkerProfile {
                    worker_id: worker_id.clone(),
                    ..WorkerProfile::default()
                });
                state.assignments.insert(
                    (task_id.clone(), worker_id.clone()),
                    Assignment {
                        task_id,
                        worker_id,
                        state: AssignmentState::Pending,
                        reserved_at: at,
                        label: None,
                        submitted_at: None,
                    },
                );
            }
            Event::Submitted {
                task_id,
                worker_id,
                label,
                at,
            } => {
                let exam_answer = state
                    .index
                    .get(&task_id)
                    .and_then(|&i| state.tasks[i].exam_answer.clone());
                if let Some(a) = state.assignments.get_mut(&(task_id, worker_id.clone())) {
                    a.state = AssignmentState::Submitted;
                    a.label = Some(label.clone());
                    a.submitted_at = Some(at);
                }
                if let Some(answer) = exam_answer {
                    let total = self.cfg.qualification.len();
                    let threshold = self.cfg.pass_threshold;
                    let w = state.workers.entry(worker_id.clone()).or_default();
                    w.worker_id = worker_id;
                    w.answered += 1;
                    if matches!(&label, ExportLabel::Choice(c) if *c == answer) {
                        w.score += 1;
                    }
                    if w.answered == total {
                        w.qualified = w.score >= threshold;
                    }
                }
            }
        }
    }

    fn record(&self, state: &mut State, event: Event) -> Result<(), AnnotateError> {
        if let Some(file) = state.journal.as_mut() {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            let path = self.cfg.journal.as_deref().unwrap_or(Path::new("journal"));
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| AnnotateError::io(path, e))?;
        }
        self.apply(state, event);
        Ok(())
    }

    /// Loads annotation tasks. Ids must be new.
    pub fn add_tasks(&self, specs: Vec<AnnotationTaskSpec>) -> Result<usize, AnnotateError> {
        let mut state = self.lock();
        for spec in &specs {
            if matches!(spec.payload, TaskPayload::Qualification { .. }) {
                return Err(AnnotateError::Invalid(format!(
                    "task {}: qualification items come from the qualification set",
                    spec.task_id
                )));
            }
            if state.index.contains_key(&spec.task_id) {
                return Err(AnnotateError::DuplicateTask(spec.task_id.clone()));
            }
        }
        let n = specs.len();
        for spec in specs {
            add(&mut state, spec, None)?;
        }
        Ok(n)
    }

    pub fn worker(&self, worker_id: &str) -> Option<WorkerProfile> {
        self.lock().workers.get(worker_id).cloned()
    }

    fn expire(&self, state: &mut State, now: DateTime<Utc>) {
        let ttl = self.cfg.reservation_ttl;
        for a in state.assignments.values_mut() {
            if a.state == AssignmentState::Pending && a.reserved_at + ttl <= now {
                a.state = AssignmentState::Expired;
            }
        }
    }

    fn view(&self, state: &State, idx: usize, reserved_at: DateTime<Utc>) -> TaskView {
        let task = &state.tasks[idx];
        let kind = task.spec.payload.kind();
        let qualification = state
            .exam
            .iter()
            .position(|&i| i == idx)
            .map(|pos| QualificationProgress {
                item: pos + 1,
                total: state.exam.len(),
            });
        TaskView {
            task_id: task.spec.task_id.clone(),
            kind,
            payload: task.spec.payload.clone(),
            instructions: self.cfg.instructions.for_kind(kind).to_string(),
            qualification,
            expires_at: reserved_at + self.cfg.reservation_ttl,
        }
    }

    /// Offers the worker their next task and reserves it.
    ///
    /// Unqualified workers only get exam items, in order. Qualified workers
    /// get the oldest task they have never been assigned and that has fewer
    /// than `redundancy` live assignments. A pending reservation is offered
    /// again until it is submitted or expires.
    pub fn next_task(&self, worker_id: &str) -> Result<TaskView, AnnotateError> {
        if worker_id.trim().is_empty() {
            return Err(AnnotateError::Invalid("worker id is empty".into()));
        }
        let now = self.clock.now();
        let mut state = self.lock();
        self.expire(&mut state, now);
        let profile = state.workers.get(worker_id).cloned().unwrap_or_default();

        let held = |state: &State, idx: usize| {
            state
                .assignments
                .get(&(state.tasks[idx].spec.task_id.clone(), worker_id.to_string()))
                .cloned()
        };

        let candidates: Vec<usize> = if profile.qualified {
            (0..state.tasks.len()).filter(|i| !state.exam.contains(i)).collect()
        } else {
            state.exam.clone()
        };

        // resume a live reservation first
        for &idx in &candidates {
            if let Some(a) = held(&state, idx).filter(|a| a.state == AssignmentState::Pending) {
                return Ok(self.view(&state, idx, a.reserved_at));
            }
        }

        if !profile.qualified && profile.answered == state.exam.len() {
            return Err(AnnotateError::NotQualified {
                score: profile.score,
                total: state.exam.len(),
            });
        }
        let mut live: HashMap<&str, usize> = HashMap::new();
        for a in state.assignments.values() {
            if a.state != AssignmentState::Expired {
                *live.entry(a.task_id.as_str()).or_default() += 1;
            }
        }
        let redundancy = self.cfg.redundancy;
        let pick = candidates.into_iter().find(|&idx| {
            if held(&state, idx).is_some() {
                return false;
            }
            !profile.qualified || live.get(state.tasks[idx].spec.task_id.as_str()).copied().unwrap_or(0) < redundancy
        });
        let Some(idx) = pick else {
            return Err(AnnotateError::NoWork);
        };
        let task_id = state.tasks[idx].spec.task_id.clone();
        self.record(
            &mut state,
            Event::Reserved {
                task_id,
                worker_id: worker_id.to_string(),
                at: now,
            },
        )?;
        Ok(self.view(&state, idx, now))
    }

    fn check_label(&self, task: &Task, label: &ExportLabel) -> Result<(), AnnotateError> {
        let payload = &task.spec.payload;
        let ok = match (payload.kind(), label) {
            (AnnotationKind::Plausibility, ExportLabel::Rating(r)) => (1..=self.cfg.rating_max).contains(r),
            (AnnotationKind::Simulation | AnnotationKind::Qualification, ExportLabel::Choice(c)) => {
                simulation_label(c, payload.task_kind()).is_some()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(AnnotateError::BadLabelShape {
                task_id: task.spec.task_id.clone(),
                expected: match payload.kind() {
                    AnnotationKind::Plausibility => format!("an integer rating 1-{}", self.cfg.rating_max),
                    _ => {
                        let mut choices: Vec<String> =
                            payload.task_kind().labels().iter().map(|l| l.to_string()).collect();
                        choices.push(CANNOT_TELL.into());
                        format!("one of {}", choices.join(", "))
                    }
                },
            })
        }
    }

    pub fn submit(&self, worker_id: &str, task_id: &str, label: ExportLabel) -> Result<Acknowledgement, AnnotateError> {
        let now = self.clock.now();
        let mut state = self.lock();
        self.expire(&mut state, now);
        let idx = *state
            .index
            .get(task_id)
            .ok_or_else(|| AnnotateError::UnknownTask(task_id.to_string()))?;
        let key = (task_id.to_string(), worker_id.to_string());
        match state.assignments.get(&key).map(|a| a.state) {
            None => return Err(AnnotateError::NotAssigned(task_id.to_string())),
            Some(AssignmentState::Expired) => return Err(AnnotateError::ReservationExpired(task_id.to_string())),
            Some(AssignmentState::Submitted) => return Err(AnnotateError::AlreadySubmitted(task_id.to_string())),
            Some(AssignmentState::Pending) => {}
        }
        let task = &state.tasks[idx];
        let qualified = state.workers.get(worker_id).is_some_and(|w| w.qualified);
        if task.exam_answer.is_none() && !qualified {
            return Err(AnnotateError::NotAssigned(task_id.to_string()));
        }
        self.check_label(task, &label)?;
        let is_exam = task.exam_answer.is_some();
        self.record(
            &mut state,
            Event::Submitted {
                task_id: task_id.to_string(),
                worker_id: worker_id.to_string(),
                label,
                at: now,
            },
        )?;
        let qualified = is_exam.then(|| state.workers.get(worker_id).is_some_and(|w| w.qualified));
        Ok(Acknowledgement {
            task_id: task_id.to_string(),
            worker_id: worker_id.to_string(),
            qualified,
        })
    }

    pub fn progress(&self) -> Progress {
        let now = self.clock.now();
        let mut state = self.lock();
        self.expire(&mut state, now);
        let mut p = Progress {
            tasks: state.tasks.len() - state.exam.len(),
            workers: state.workers.len(),
            qualified_workers: state.workers.values().filter(|w| w.qualified).count(),
            ..Progress::default()
        };
        let mut submitted_per_task: HashMap<&str, usize> = HashMap::new();
        for a in state.assignments.values() {
            match a.state {
                AssignmentState::Pending => p.pending += 1,
                AssignmentState::Submitted => {
                    p.submitted += 1;
                    *submitted_per_task.entry(&a.task_id).or_default() += 1;
                }
                AssignmentState::Expired => p.expired += 1,
            }
        }
        p.complete_tasks = state
            .tasks
            .iter()
            .enumerate()
            .filter(|(i, t)| {
                !state.exam.contains(i)
                    && submitted_per_task.get(t.spec.task_id.as_str()).copied().unwrap_or(0) >= self.cfg.redundancy
            })
            .count();
        p
    }

    /// Submitted simulation and plausibility judgments, optionally for one
    /// run, ordered by (task_id, worker_id).
    pub fn export(&self, run_id: Option<&str>) -> Vec<JudgmentExportLine> {
        let state = self.lock();
        // assignments are keyed by (task_id, worker_id), so iteration order is the export order
        state
            .assignments
            .values()
            .filter(|a| a.state == AssignmentState::Submitted)
            .filter_map(|a| {
                // journaled tasks that were not loaded this session are left out
                let task = &state.tasks[*state.index.get(&a.task_id)?];
                if task.exam_answer.is_some() {
                    return None;
                }
                if run_id.is_some_and(|r| task.spec.run_id.as_deref() != Some(r)) {
                    return None;
                }
                Some(JudgmentExportLine {
                    task_id: a.task_id.clone(),
                    kind: task.spec.payload.kind(),
                    run_id: task.spec.run_id.clone(),
                    counterfactual_id: task.spec.counterfactual_id.clone(),
                    instance_id: task.spec.instance_id.clone(),
                    system_id: task.spec.system_id.clone(),
                    worker_id: a.worker_id.clone(),
                    label: a.label.clone()?,
                    timestamp: a.submitted_at?.to_rfc3339_opts(SecondsFormat::Millis, true),
                })
            })
            .collect()
    }

    /// The export as JSON lines.
    pub fn export_jsonl(&self, run_id: Option<&str>) -> String {
        self.export(run_id)
            .iter()
            .map(|l| serde_json::to_string(l).expect("export line serializes") + "\n")
            .collect()
    }

    pub fn assignments(&self) -> Vec<Assignment> {
        let now = self.clock.now();
        let mut state = self.lock();
        self.expire(&mut state, now);
        state.assignments.values().cloned().collect()
    }
}

fn add(state: &mut State, spec: AnnotationTaskSpec, exam_answer: Option<String>) -> Result<(), AnnotateError> {
    if state.index.contains_key(&spec.task_id) {
        return Err(AnnotateError::DuplicateTask(spec.task_id));
    }
    state.index.insert(spec.task_id.clone(), state.tasks.len());
    state.tasks.push(Task { spec, exam_answer });
    Ok(())
}

/// Reads a JSON-lines file of task specs.
pub fn load_tasks(path: &Path) -> Result<Vec<AnnotationTaskSpec>, AnnotateError> {
    let text = std::fs::read_to_string(path).map_err(|e| AnnotateError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| AnnotateError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
