use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{
    align_raters, compare_precision, forced_comparison, iaa_table, plausibility_correlation, precision_generality,
    ForcedComparison, IaaTable, PlausibilityCorrelation, PooledCorrelation, SignificanceEntry,
};
use super::human::{plausibility_ratings, read_export, simulation_judgments};
use super::scoring::{score_explanation, ExplanationScore, Mean};
use super::{Pipeline, PipelineError, SimulatorConfig};
use crate::domain::{ExplanationKey, JudgmentSource, Method, ModelSystem, TaskKind};
use crate::stats::DEFAULT_REDUNDANCY;
use crate::tasks::task_accuracy;
use crate::text::{GeneralityInputs, SimilarityMetricId};

pub const REPORT_NOTES: [&str; 4] = [
    "Counterfactuals are sampled from the configured LLM generators. The simulatable subset of those samples stands in for the distribution of simulatable counterfactuals, which the generators are unlikely to cover completely.",
    "Precision, simulation rate and generality are macro averages over explanations. Undefined values are left out of a mean and counted as excluded.",
    "Generality is computed over the texts of simulatable counterfactuals only and is undefined with fewer than two.",
    "p-values come from two-sided paired sign-flip permutation tests: p = (1 + #extreme) / (1 + iterations).",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub kind: TaskKind,
    pub instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemTallies {
    pub counterfactuals_requested: u32,
    pub generation_parse_failures: u32,
    pub duplicates_dropped: u32,
    pub equal_to_input_dropped: u32,
    pub counterfactuals_kept: usize,
    pub unjudged: usize,
    pub simulator_parse_failures: usize,
    pub output_parse_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAggregate {
    pub system_id: String,
    pub model_id: String,
    pub method: Method,
    pub explanations: usize,
    /// Explanations whose completion could not be parsed.
    pub explanation_failures: usize,
    /// Fraction of explanations whose output equals gold; failures count
    /// as wrong.
    pub accuracy: Mean,
    pub precision: Mean,
    pub sim_rate: Mean,
    pub generality: BTreeMap<SimilarityMetricId, Mean>,
    pub tallies: SystemTallies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    /// A system id, or `all` for every non-forced system pooled.
    pub scope: String,
    pub generator: String,
    pub generality: BTreeMap<SimilarityMetricId, Mean>,
    pub sim_rate: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub system_id: String,
    pub model_id: String,
    pub method: Method,
    pub precision: Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPrecisionRow {
    pub dataset: String,
    /// Mean over systems of task accuracy.
    pub accuracy: Option<f64>,
    /// Mean over systems of mean precision.
    pub precision: Option<f64>,
    pub systems: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub diversity: Vec<DiversityRow>,
    pub forced_vs_normal: Vec<ForcedComparison>,
    pub iaa: Option<IaaTable>,
    pub precision: Vec<PrecisionRow>,
    pub precision_generality: BTreeMap<SimilarityMetricId, PooledCorrelation>,
    pub accuracy_precision: AccuracyPrecisionRow,
    pub plausibility: Option<PlausibilityCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub dataset: DatasetSummary,
    pub generator: String,
    pub simulator: String,
    pub notes: Vec<String>,
    pub systems: Vec<SystemAggregate>,
    pub tables: Tables,
    pub significance: Vec<SignificanceEntry>,
    pub explanations: Vec<ExplanationScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaReport {
    pub run_id: String,
    /// Counterfactuals with a full set of human judgments.
    pub items: usize,
    /// Counterfactuals left out for having too few or too many judgments.
    pub items_skipped: usize,
    pub table: IaaTable,
}

impl Pipeline {
    /// Work still missing before a report can be emitted, one line per stage.
    pub fn missing_work(&self) -> Vec<String> {
        let mut missing = Vec::new();
        let absent = self
            .cfg
            .systems
            .iter()
            .flat_map(|s| self.dataset.instances.iter().map(move |i| (s, i)))
            .filter(|(s, i)| {
                self.store
                    .explanation(&ExplanationKey {
                        instance_id: i.id.clone(),
                        system_id: s.system_id(),
                    })
                    .is_none()
            })
            .count();
        if absent > 0 {
            missing.push(format!("explanations: {absent} explanation(s) not produced"));
        }
        let records = self.store.explanations();
        let no_set = records
            .iter()
            .filter(|r| r.is_parse_valid() && self.store.counterfactual_set(&r.key()).is_none())
            .count();
        if no_set > 0 {
            missing.push(format!(
                "counterfactuals: {no_set} explanation(s) without counterfactuals"
            ));
        }
        let mut unjudged = 0;
        let mut unanswered = 0;
        for set in self.store.counterfactual_sets() {
            for cf in &set.counterfactuals {
                match self.store.simulation(&cf.id) {
                    None => unjudged += 1,
                    Some(s) if s.judgment.is_simulatable() && self.store.output(&cf.id).is_none() => unanswered += 1,
                    Some(_) => {}
                }
            }
        }
        if unjudged > 0 && matches!(self.cfg.simulator, SimulatorConfig::Llm { .. }) {
            missing.push(format!("simulate: {unjudged} counterfactual(s) without a judgment"));
        }
        if unanswered > 0 {
            missing.push(format!(
                "outputs: {unanswered} simulatable counterfactual(s) without a model output"
            ));
        }
        missing
    }

    /// Scores every explanation that has counterfactuals, in key order.
    pub async fn scores(&self) -> Result<Vec<ExplanationScore>, PipelineError> {
        let inputs = GeneralityInputs {
            stopwords: &self.stopwords,
            embedder: self.embedder.as_ref(),
            bleu_max_order: self.cfg.bleu_max_order,
        };
        let mut scores = Vec::new();
        for record in self.store.explanations() {
            if self.store.counterfactual_set(&record.key()).is_none() {
                continue;
            }
            let cfs = self.store.counterfactual_records(&record.key());
            scores.push(score_explanation(&record.key(), &cfs, &self.cfg.metrics, inputs).await?);
        }
        Ok(scores)
    }

    /// Systems in configuration order, followed by forced variants that
    /// have records in the store.
    fn reported_systems(&self) -> Vec<ModelSystem> {
        let mut systems = self.cfg.systems.clone();
        let records = self.store.explanations();
        for s in &self.cfg.systems {
            if s.method == Method::PostHoc {
                let forced = s.with_method(Method::ForcedPostHoc);
                if records.iter().any(|r| r.system_id == forced.system_id()) {
                    systems.push(forced);
                }
            }
        }
        systems
    }

    pub async fn report(&self) -> Result<MetricReport, PipelineError> {
        let missing = self.missing_work();
        if !missing.is_empty() {
            return Err(PipelineError::IncompleteRun(missing));
        }
        let scores = self.scores().await?;
        let records = self.store.explanations();
        let metrics = &self.cfg.metrics;
        let systems = self.reported_systems();

        let mut aggregates = Vec::new();
        for system in &systems {
            let id = system.system_id();
            let own_records: Vec<_> = records.iter().filter(|r| r.system_id == id).cloned().collect();
            let own_scores: Vec<&ExplanationScore> = scores.iter().filter(|s| s.system_id == id).collect();
            let mut tallies = SystemTallies::default();
            for r in &own_records {
                let Some(set) = self.store.counterfactual_set(&r.key()) else {
                    continue;
                };
                tallies.counterfactuals_requested += set.tallies.requested;
                tallies.generation_parse_failures += set.tallies.parse_failures.values().sum::<u32>();
                tallies.duplicates_dropped += set.tallies.duplicates;
                tallies.equal_to_input_dropped += set.tallies.equal_to_input;
                tallies.counterfactuals_kept += set.counterfactuals.len();
                for cf in &set.counterfactuals {
                    if self.store.simulation(&cf.id).is_some_and(|s| s.parse_failed) {
                        tallies.simulator_parse_failures += 1;
                    }
                }
            }
            for s in &own_scores {
                tallies.unjudged += s.counts.unjudged;
                tallies.output_parse_failures += s.counts.unanswered;
            }
            aggregates.push(SystemAggregate {
                system_id: id,
                model_id: system.model_id.clone(),
                method: system.method,
                explanations: own_records.len(),
                explanation_failures: own_records.iter().filter(|r| !r.is_parse_valid()).count(),
                accuracy: Mean {
                    mean: task_accuracy(&own_records, &self.dataset)?,
                    n: own_records.len(),
                    excluded: 0,
                },
                precision: Mean::of(own_scores.iter().map(|s| s.precision)),
                sim_rate: Mean::of(own_scores.iter().map(|s| s.sim_rate)),
                generality: metrics
                    .iter()
                    .map(|&m| (m, Mean::of(own_scores.iter().map(|s| s.generality[&m]))))
                    .collect(),
                tallies,
            });
        }

        let regular: Vec<&SystemAggregate> = aggregates
            .iter()
            .filter(|a| a.method != Method::ForcedPostHoc)
            .collect();
        let regular_scores: Vec<&ExplanationScore> = scores
            .iter()
            .filter(|s| regular.iter().any(|a| a.system_id == s.system_id))
            .collect();

        let generator = self.cfg.generator_label();
        let mut diversity: Vec<DiversityRow> = regular
            .iter()
            .map(|a| DiversityRow {
                scope: a.system_id.clone(),
                generator: generator.clone(),
                generality: a.generality.clone(),
                sim_rate: a.sim_rate,
            })
            .collect();
        diversity.push(DiversityRow {
            scope: "all".into(),
            generator: generator.clone(),
            generality: metrics
                .iter()
                .map(|&m| (m, Mean::of(regular_scores.iter().map(|s| s.generality[&m]))))
                .collect(),
            sim_rate: Mean::of(regular_scores.iter().map(|s| s.sim_rate)),
        });

        let iterations = self.cfg.permutation_iterations;
        let seed = self.cfg.seed;
        let by_system = |id: &str| -> Vec<&ExplanationScore> { scores.iter().filter(|s| s.system_id == id).collect() };

        let mut forced_vs_normal = Vec::new();
        for normal in systems.iter().filter(|s| s.method == Method::PostHoc) {
            let forced = normal.with_method(Method::ForcedPostHoc);
            if !systems.contains(&forced) {
                continue;
            }
            let qualifying = self.qualifying_instances(normal).len();
            let excluded = self.dataset.len() - qualifying;
            forced_vs_normal.push(forced_comparison(
                &normal.system_id(),
                &forced.system_id(),
                &by_system(&normal.system_id()),
                &by_system(&forced.system_id()),
                excluded,
                iterations,
                seed,
            ));
        }

        let mut significance = Vec::new();
        for (i, a) in regular.iter().enumerate() {
            for b in &regular[i + 1..] {
                let label = format!("{} vs {}", a.system_id, b.system_id);
                if let Some(entry) = compare_precision(
                    &by_system(&a.system_id),
                    &by_system(&b.system_id),
                    &label,
                    iterations,
                    seed,
                ) {
                    significance.push(entry);
                }
            }
        }
        significance.extend(forced_vs_normal.iter().filter_map(|f| f.significance.clone()));

        let precision = regular
            .iter()
            .map(|a| PrecisionRow {
                system_id: a.system_id.clone(),
                model_id: a.model_id.clone(),
                method: a.method,
                precision: a.precision,
            })
            .collect();

        let accuracy_precision = AccuracyPrecisionRow {
            dataset: self.dataset.id.clone(),
            accuracy: Mean::of(regular.iter().map(|a| a.accuracy.mean)).mean,
            precision: Mean::of(regular.iter().map(|a| a.precision.mean)).mean,
            systems: regular.len(),
        };

        Ok(MetricReport {
            run_id: self.cfg.run_id.clone(),
            dataset: DatasetSummary {
                id: self.dataset.id.clone(),
                kind: self.dataset.kind,
                instances: self.dataset.len(),
            },
            generator,
            simulator: match &self.cfg.simulator {
                SimulatorConfig::Llm { model_id, .. } => format!("llm:{model_id}"),
                SimulatorConfig::Human { redundancy, .. } => format!("human majority of {redundancy}"),
            },
            notes: REPORT_NOTES.iter().map(|s| s.to_string()).collect(),
            tables: Tables {
                diversity,
                forced_vs_normal,
                iaa: None,
                precision,
                precision_generality: precision_generality(&regular_scores, metrics),
                accuracy_precision,
                plausibility: None,
            },
            systems: aggregates,
            significance,
            explanations: scores,
        })
    }

    /// Normal-vs-forced precision for every post-hoc system, after running
    /// the forced workflow.
    pub async fn sanity_forced(&self) -> Result<Vec<ForcedComparison>, PipelineError> {
        let outcomes = self.run_forced().await?;
        if let Some(failed) = outcomes.iter().find(|o| !o.failures.is_empty()) {
            tracing::warn!(
                stage = failed.stage.name(),
                failures = failed.failures.len(),
                "forced check continues without failed items"
            );
        }
        Ok(self.report().await?.tables.forced_vs_normal)
    }

    /// Agreement between human annotators in `export`, and of this run's LLM
    /// simulator with them when the run used one.
    pub fn iaa_report(&self, export: &Path) -> Result<IaaReport, PipelineError> {
        let lines = read_export(export)?;
        let per_item = simulation_judgments(&lines, &self.cfg.run_id, self.dataset.kind)?;
        let raters = match self.cfg.simulator {
            SimulatorConfig::Human { redundancy, .. } => redundancy,
            SimulatorConfig::Llm { .. } => DEFAULT_REDUNDANCY,
        };
        let (ids, humans) = align_raters(&per_item, raters);
        if ids.is_empty() {
            return Err(PipelineError::InsufficientData(format!(
                "no counterfactual has {raters} human judgments"
            )));
        }
        let mut simulators = Vec::new();
        if let SimulatorConfig::Llm { model_id, .. } = &self.cfg.simulator {
            let series: Option<Vec<_>> = ids
                .iter()
                .map(|id| {
                    self.store
                        .simulation(id)
                        .filter(|s| s.source == JudgmentSource::LlmSimulator)
                        .map(|s| s.judgment)
                })
                .collect();
            match series {
                Some(series) => simulators.push((model_id.clone(), series)),
                None => tracing::warn!("LLM simulator has not judged every annotated counterfactual"),
            }
        }
        Ok(IaaReport {
            run_id: self.cfg.run_id.clone(),
            items: ids.len(),
            items_skipped: per_item.len() - ids.len(),
            table: iaa_table(&humans, &simulators)?,
        })
    }

    /// Per-input precision–plausibility correlation, averaged over inputs.
    pub async fn correlation_report(&self, plausibility: &Path) -> Result<PlausibilityCorrelation, PipelineError> {
        let lines = read_export(plausibility)?;
        let ratings = plausibility_ratings(&lines, &self.cfg.run_id)?;
        let scores = self.scores().await?;
        let regular: Vec<ExplanationScore> = scores
            .into_iter()
            .filter(|s| self.cfg.systems.iter().any(|sys| sys.system_id() == s.system_id))
            .collect();
        plausibility_correlation(&regular, &ratings)
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn mean_cell(m: &Mean) -> String {
    match m.mean {
        Some(v) if m.excluded > 0 => format!("{v:.3} (n={}, excl {})", m.n, m.excluded),
        Some(v) => format!("{v:.3} (n={})", m.n),
        None => format!("- (n=0, excl {})", m.excluded),
    }
}

/// Left-aligned plain-text table.
fn table(out: &mut String, headers: &[String], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(headers));
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
    );
    for row in rows {
        let _ = writeln!(out, "{}", line(row));
    }
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl IaaTable {
    pub fn render(&self, dataset: &str) -> String {
        let mut out = String::new();
        let mut headers = strings(["Dataset", "H-H"]);
        let mut row = vec![dataset.to_string(), format!("{:.3}", self.human_human.mean)];
        for s in &self.simulators {
            headers.push(format!("H-{}", s.simulator));
            headers.push(format!("ratio ({})", s.simulator));
            row.push(format!("{:.3}", s.vs_humans.mean));
            row.push(num(s.ratio));
        }
        table(&mut out, &headers, &[row]);
        let degenerate: usize = self.human_human.degenerate_pairs
            + self
                .simulators
                .iter()
                .map(|s| s.vs_humans.degenerate_pairs)
                .sum::<usize>();
        let _ = writeln!(
            out,
            "{} items, {} raters, {} degenerate rater pair(s) skipped",
            self.items, self.raters, degenerate
        );
        out
    }
}

impl PlausibilityCorrelation {
    pub fn render(&self) -> String {
        let mut out = String::new();
        table(
            &mut out,
            &strings(["Pearson", "Spearman", "inputs used", "inputs skipped"]),
            &[vec![
                format!("{:.3}", self.mean_pearson),
                format!("{:.3}", self.mean_spearman),
                self.inputs_used.to_string(),
                self.inputs_skipped.to_string(),
            ]],
        );
        out
    }
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let metrics: Vec<SimilarityMetricId> = self.tables.precision_generality.keys().copied().collect();
        let _ = writeln!(
            out,
            "Run {} | dataset {} ({} instances) | generator {} | simulator {}",
            self.run_id, self.dataset.id, self.dataset.instances, self.generator, self.simulator
        );
        for note in &self.notes {
            let _ = writeln!(out, "  * {note}");
        }

        let _ = writeln!(out, "\nSystems");
        let rows: Vec<Vec<String>> = self
            .systems
            .iter()
            .map(|a| {
                vec![
                    a.system_id.clone(),
                    a.explanations.to_string(),
                    a.explanation_failures.to_string(),
                    num(a.accuracy.mean),
                    mean_cell(&a.precision),
                    mean_cell(&a.sim_rate),
                ]
            })
            .collect();
        table(
            &mut out,
            &strings(["System", "explanations", "failed", "accuracy", "precision", "sim rate"]),
            &rows,
        );
        let _ = writeln!(out, "\nCounterfactual tallies");
        let rows: Vec<Vec<String>> = self
            .systems
            .iter()
            .map(|a| {
                let t = &a.tallies;
                vec![
                    a.system_id.clone(),
                    t.counterfactuals_requested.to_string(),
                    t.generation_parse_failures.to_string(),
                    t.duplicates_dropped.to_string(),
                    t.equal_to_input_dropped.to_string(),
                    t.counterfactuals_kept.to_string(),
                    t.unjudged.to_string(),
                    t.simulator_parse_failures.to_string(),
                    t.output_parse_failures.to_string(),
                ]
            })
            .collect();
        table(
            &mut out,
            &strings([
                "System",
                "requested",
                "unparsed",
                "duplicate",
                "same as input",
                "kept",
                "unjudged",
                "sim unparsed",
                "output unparsed",
            ]),
            &rows,
        );

        let _ = writeln!(out, "\nDiversity of simulatable counterfactuals");
        let mut headers = strings(["Scope", "Generator"]);
        headers.extend(metrics.iter().map(|m| m.to_string()));
        headers.push("Sim%".into());
        let rows: Vec<Vec<String>> = self
            .tables
            .diversity
            .iter()
            .map(|d| {
                let mut row = vec![d.scope.clone(), d.generator.clone()];
                row.extend(metrics.iter().map(|m| mean_cell(&d.generality[m])));
                row.push(mean_cell(&d.sim_rate));
                row
            })
            .collect();
        table(&mut out, &headers, &rows);

        let _ = writeln!(out, "\nNormal vs forced precision");
        if self.tables.forced_vs_normal.is_empty() {
            let _ = writeln!(out, "(no forced explanations; run `sanity forced`)");
        } else {
            let rows: Vec<Vec<String>> = self
                .tables
                .forced_vs_normal
                .iter()
                .map(|f| {
                    vec![
                        f.normal_system.clone(),
                        mean_cell(&f.normal_precision),
                        mean_cell(&f.forced_precision),
                        num(f.delta),
                        num(f.significance.as_ref().map(|s| s.p_value)),
                        f.excluded_instances.to_string(),
                    ]
                })
                .collect();
            table(
                &mut out,
                &strings(["System", "Normal", "Forced", "Delta", "p", "excluded inputs"]),
                &rows,
            );
        }

        let _ = writeln!(out, "\nSimulator agreement (Cohen's kappa)");
        match &self.tables.iaa {
            Some(t) => out.push_str(&t.render(&self.dataset.id)),
            None => {
                let _ = writeln!(out, "(no human annotations attached; run `iaa`)");
            }
        }

        let _ = writeln!(out, "\nSimulation precision");
        let rows: Vec<Vec<String>> = self
            .tables
            .precision
            .iter()
            .map(|p| {
                vec![
                    p.model_id.clone(),
                    p.method.as_str().to_string(),
                    mean_cell(&p.precision),
                ]
            })
            .collect();
        table(&mut out, &strings(["Model", "Method", "precision"]), &rows);

        let _ = writeln!(out, "\nPrecision-generality correlation (Pearson, pooled)");
        let headers: Vec<String> = std::iter::once("Dataset".to_string())
            .chain(metrics.iter().map(|m| m.to_string()))
            .collect();
        let mut row = vec![self.dataset.id.clone()];
        row.extend(metrics.iter().map(|m| {
            let c = &self.tables.precision_generality[m];
            format!("{} (n={})", num(c.pearson), c.n)
        }));
        table(&mut out, &headers, &[row]);

        let _ = writeln!(out, "\nTask accuracy vs simulation precision");
        let a = &self.tables.accuracy_precision;
        table(
            &mut out,
            &strings(["Dataset", "Task acc.", "Simulation prec.", "systems"]),
            &[vec![
                a.dataset.clone(),
                num(a.accuracy),
                num(a.precision),
                a.systems.to_string(),
            ]],
        );

        if let Some(p) = &self.tables.plausibility {
            let _ = writeln!(out, "\nPrecision-plausibility correlation (per input, averaged)");
            out.push_str(&p.render());
        }

        if !self.significance.is_empty() {
            let _ = writeln!(out, "\nSignificance");
            let rows: Vec<Vec<String>> = self
                .significance
                .iter()
                .map(|s| {
                    vec![
                        s.comparison.clone(),
                        s.n.to_string(),
                        format!("{:+.3}", s.mean_difference),
                        format!("{:.4}", s.p_value),
                        s.iterations.to_string(),
                        s.seed.to_string(),
                    ]
                })
                .collect();
            table(
                &mut out,
                &strings(["Comparison", "n", "mean diff", "p", "iterations", "seed"]),
                &rows,
            );
        }
        out
    }
}
