//! Exchange formats with the annotation service: task specs going out,
//! judgment exports coming back.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::domain::{ExplanationKey, Label, SimulationJudgment, TaskInput, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Simulation,
    Plausibility,
    Qualification,
}

/// What an annotator is shown. A simulation payload never includes the
/// model's output on the counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskPayload {
    Simulation {
        input: TaskInput,
        explanation: String,
        output: Label,
        counterfactual: TaskInput,
    },
    Plausibility {
        input: TaskInput,
        explanation: String,
        output: Label,
    },
    Qualification {
        input: TaskInput,
        explanation: String,
        output: Label,
        counterfactual: TaskInput,
        /// The expected answer; never sent to annotators.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        answer: Option<String>,
    },
}

impl TaskPayload {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            TaskPayload::Simulation { .. } => AnnotationKind::Simulation,
            TaskPayload::Plausibility { .. } => AnnotationKind::Plausibility,
            TaskPayload::Qualification { .. } => AnnotationKind::Qualification,
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match self {
            TaskPayload::Simulation { input, .. }
            | TaskPayload::Plausibility { input, .. }
            | TaskPayload::Qualification { input, .. } => input.kind(),
        }
    }
}

/// One annotation task as written by `cfsim tasks` and loaded by the
/// annotation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTaskSpec {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_id: Option<String>,
    pub payload: TaskPayload,
}

/// A submitted label: a choice string for simulation and qualification
/// tasks, an integer rating for plausibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExportLabel {
    Rating(u8),
    Choice(String),
}

/// One line of a judgment export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentExportLine {
    pub task_id: String,
    pub kind: AnnotationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_id: Option<String>,
    pub worker_id: String,
    pub label: ExportLabel,
    pub timestamp: String,
}

pub const CANNOT_TELL: &str = "cannot_tell";

/// Maps a simulation choice string ("yes", "response_2", "cannot_tell")
/// to a judgment of the given task kind.
pub fn simulation_label(choice: &str, kind: TaskKind) -> Option<SimulationJudgment> {
    if choice == CANNOT_TELL {
        return Some(SimulationJudgment::Unsimulatable);
    }
    kind.labels()
        .into_iter()
        .find(|l| l.to_string() == choice)
        .map(SimulationJudgment::EntailedOutput)
}

pub fn read_export(path: &Path) -> Result<Vec<JudgmentExportLine>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Store {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Simulation judgments per counterfactual id, one per worker (first wins),
/// in worker-id order. Lines for other runs are skipped.
pub fn simulation_judgments(
    lines: &[JudgmentExportLine],
    run_id: &str,
    kind: TaskKind,
) -> Result<BTreeMap<String, Vec<(String, SimulationJudgment)>>, PipelineError> {
    let mut out: BTreeMap<String, BTreeMap<String, SimulationJudgment>> = BTreeMap::new();
    for line in lines {
        if line.kind != AnnotationKind::Simulation || line.run_id.as_deref().is_some_and(|r| r != run_id) {
            continue;
        }
        let Some(cf) = &line.counterfactual_id else {
            return Err(PipelineError::InvalidExport(format!(
                "simulation task {} has no counterfactual_id",
                line.task_id
            )));
        };
        let judgment = match &line.label {
            ExportLabel::Choice(c) => simulation_label(c, kind),
            ExportLabel::Rating(_) => None,
        }
        .ok_or_else(|| {
            PipelineError::InvalidExport(format!(
                "task {}: label {:?} is not a {kind:?} simulation label",
                line.task_id, line.label
            ))
        })?;
        out.entry(cf.clone())
            .or_default()
            .entry(line.worker_id.clone())
            .or_insert(judgment);
    }
    Ok(out
        .into_iter()
        .map(|(cf, by_worker)| (cf, by_worker.into_iter().collect()))
        .collect())
}

/// Mean plausibility rating per explanation. Lines for other runs are skipped.
pub fn plausibility_ratings(
    lines: &[JudgmentExportLine],
    run_id: &str,
) -> Result<BTreeMap<ExplanationKey, f64>, PipelineError> {
    let mut sums: BTreeMap<ExplanationKey, (f64, usize)> = BTreeMap::new();
    for line in lines {
        if line.kind != AnnotationKind::Plausibility || line.run_id.as_deref().is_some_and(|r| r != run_id) {
            continue;
        }
        let (Some(instance_id), Some(system_id)) = (&line.instance_id, &line.system_id) else {
            return Err(PipelineError::InvalidExport(format!(
                "plausibility task {} does not name its explanation",
                line.task_id
            )));
        };
        let ExportLabel::Rating(r) = line.label else {
            return Err(PipelineError::InvalidExport(format!(
                "plausibility task {}: expected an integer rating",
                line.task_id
            )));
        };
        let e = sums
            .entry(ExplanationKey {
                instance_id: instance_id.clone(),
                system_id: system_id.clone(),
            })
            .or_default();
        e.0 += f64::from(r);
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(kind: AnnotationKind, cf: &str, worker: &str, label: ExportLabel) -> JudgmentExportLine {
        JudgmentExportLine {
            task_id: format!("t-{cf}"),
            kind,
            run_id: Some("r".into()),
            counterfactual_id: Some(cf.into()),
            instance_id: Some("i".into()),
            system_id: Some("m/cot".into()),
            worker_id: worker.into(),
            label,
            timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn labels_map_to_judgments() {
        assert_eq!(
            simulation_label("cannot_tell", TaskKind::YesNoQa),
            Some(SimulationJudgment::Unsimulatable)
        );
        assert_eq!(
            simulation_label("response_2", TaskKind::PairwisePreference),
            Some(SimulationJudgment::EntailedOutput(Label::Response2))
        );
        assert_eq!(simulation_label("response_2", TaskKind::YesNoQa), None);
    }

    #[test]
    fn groups_by_counterfactual_and_worker() {
        let c = |s: &str| ExportLabel::Choice(s.into());
        let lines = vec![
            line(AnnotationKind::Simulation, "cf1", "w2", c("no")),
            line(AnnotationKind::Simulation, "cf1", "w1", c("yes")),
            line(AnnotationKind::Simulation, "cf1", "w1", c("no")),
            line(AnnotationKind::Plausibility, "cf1", "w1", ExportLabel::Rating(4)),
        ];
        let grouped = simulation_judgments(&lines, "r", TaskKind::YesNoQa).unwrap();
        let v = &grouped["cf1"];
        assert_eq!(v.len(), 2);
        assert_eq!(v[0], ("w1".to_string(), SimulationJudgment::EntailedOutput(Label::Yes)));
        assert!(simulation_judgments(&lines, "other", TaskKind::YesNoQa)
            .unwrap()
            .is_empty());
        let bad = vec![line(AnnotationKind::Simulation, "cf1", "w1", c("maybe"))];
        assert!(simulation_judgments(&bad, "r", TaskKind::YesNoQa).is_err());
    }

    #[test]
    fn export_line_json_shape() {
        let l = line(AnnotationKind::Plausibility, "cf", "w", ExportLabel::Rating(5));
        let json = serde_json::to_string(&l).unwrap();
        assert!(json.contains("\"label\":5"));
        let back: JudgmentExportLine = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
        let ratings = plausibility_ratings(
            &[
                l.clone(),
                JudgmentExportLine {
                    label: ExportLabel::Rating(2),
                    ..l
                },
            ],
            "r",
        )
        .unwrap();
        assert_eq!(ratings.values().next(), Some(&3.5));
    }
}
