use std::collections::HashSet;
use std::future::Future;

use futures::stream::{self, StreamExt};
use serde::Serialize;

use super::human::{read_export, simulation_judgments};
use super::store::{
    CounterfactualSet, GeneratedCounterfactual, GenerationTallies, OutputEntry, SimulationEntry, StoreEntry,
};
use super::{Pipeline, PipelineError, SimulatorConfig};
use crate::domain::{
    ExplanationRecord, JudgmentSource, Label, Method, ModelSystem, SimulationJudgment, TaskInput, TaskInstance,
};
use crate::gateway::CompletionRequest;
use crate::parse::{parse_answer, parse_counterfactual, parse_simulation};
use crate::stats::majority_vote;
use crate::tasks::{
    forced_label_for, render_cot_request, render_counterfactual_prompt, render_direct_answer_request,
    render_explanation_prompt, render_simulation_prompt, ExplanationPlan, RequestSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Explanations,
    Counterfactuals,
    Simulate,
    Outputs,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Explanations,
        Stage::Counterfactuals,
        Stage::Simulate,
        Stage::Outputs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Explanations => "explanations",
            Stage::Counterfactuals => "counterfactuals",
            Stage::Simulate => "simulate",
            Stage::Outputs => "outputs",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// A work item that did not complete; rerunning the stage retries it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageFailure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub stage: Stage,
    /// Records appended to the store.
    pub written: usize,
    /// Items already present in the store.
    pub skipped: usize,
    pub failures: Vec<StageFailure>,
}

impl StageOutcome {
    fn new(stage: Stage, skipped: usize) -> Self {
        Self {
            stage,
            written: 0,
            skipped,
            failures: Vec::new(),
        }
    }
}

impl Pipeline {
    pub async fn run_stage(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        match stage {
            Stage::Explanations => self.run_explanations().await,
            Stage::Counterfactuals => self.run_counterfactuals().await,
            Stage::Simulate => self.run_simulation().await,
            Stage::Outputs => self.run_counterfactual_outputs().await,
        }
    }

    /// Runs every stage in order. Failed items do not stop later stages;
    /// they simply have nothing downstream.
    pub async fn run_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        let mut outcomes = Vec::new();
        for stage in Stage::ALL {
            outcomes.push(self.run_stage(stage).await?);
        }
        Ok(outcomes)
    }

    /// Drives `work` over `items` with at most the gateway's in-flight cap
    /// running at once, appending results in item order.
    async fn fan_out<T, F, Fut>(
        &self,
        mut outcome: StageOutcome,
        items: Vec<(String, T)>,
        work: F,
    ) -> Result<StageOutcome, PipelineError>
    where
        F: Fn(T) -> Fut,
        Fut: Future<Output = Result<StoreEntry, PipelineError>>,
    {
        let cap = self.gateway.in_flight_cap();
        let mut results = stream::iter(items)
            .map(|(label, item)| {
                let fut = work(item);
                async move { (label, fut.await) }
            })
            .buffered(cap);
        while let Some((label, result)) = results.next().await {
            match result {
                Ok(entry) => {
                    if self.store.append(entry)? {
                        outcome.written += 1;
                    }
                }
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => {
                    tracing::warn!(item = %label, error = %e, stage = outcome.stage.name(), "work item failed");
                    outcome.failures.push(StageFailure {
                        item: label,
                        error: e.to_string(),
                    });
                }
            }
        }
        Ok(outcome)
    }

    pub async fn run_explanations(&self) -> Result<StageOutcome, PipelineError> {
        let mut items = Vec::new();
        let mut skipped = 0;
        for system in &self.cfg.systems {
            for inst in &self.dataset.instances {
                let key = crate::domain::ExplanationKey {
                    instance_id: inst.id.clone(),
                    system_id: system.system_id(),
                };
                if self.store.explanation(&key).is_some() {
                    skipped += 1;
                } else {
                    items.push((key.to_string(), (inst, system, None)));
                }
            }
        }
        self.fan_out(StageOutcome::new(Stage::Explanations, skipped), items, |(inst, system, forced)| async move {
            Ok(StoreEntry::Explanation(self.explain(inst, system, forced).await?))
        })
        .await
    }

    /// Produces one explanation record. Unparseable completions yield a
    /// record without output; provider errors are returned.
    pub async fn explain(
        &self,
        inst: &TaskInstance,
        system: &ModelSystem,
        forced: Option<Label>,
    ) -> Result<ExplanationRecord, PipelineError> {
        let record = ExplanationRecord {
            instance_id: inst.id.clone(),
            system_id: system.system_id(),
            explanation: String::new(),
            output: None,
            raw_completion: String::new(),
            failure: None,
        };
        match render_explanation_prompt(&self.templates, inst, system, forced)? {
            ExplanationPlan::Cot(req) => {
                let raw = self.gateway.complete(&req, 0).await?.text;
                Ok(match parse_answer(&raw, inst.kind()) {
                    Ok((explanation, label)) => ExplanationRecord {
                        explanation,
                        output: Some(label),
                        raw_completion: raw,
                        ..record
                    },
                    Err(e) => ExplanationRecord {
                        raw_completion: raw,
                        failure: Some(e.to_string()),
                        ..record
                    },
                })
            }
            ExplanationPlan::PostHoc { answer } => {
                let raw = self.gateway.complete(&answer, 0).await?.text;
                match parse_answer(&raw, inst.kind()) {
                    Ok((_, label)) => {
                        let req = crate::tasks::render_posthoc_explain_request(
                            &self.templates,
                            &inst.input,
                            label,
                            &RequestSettings::from(system),
                        )?;
                        self.justify(&req, label, inst, record).await
                    }
                    Err(e) => Ok(ExplanationRecord {
                        raw_completion: raw,
                        failure: Some(format!("answer: {e}")),
                        ..record
                    }),
                }
            }
            ExplanationPlan::Forced { label, explain } => self.justify(&explain, label, inst, record).await,
        }
    }

    async fn justify(
        &self,
        req: &CompletionRequest,
        label: Label,
        inst: &TaskInstance,
        record: ExplanationRecord,
    ) -> Result<ExplanationRecord, PipelineError> {
        let raw = self.gateway.complete(req, 0).await?.text;
        Ok(match parse_answer(&raw, inst.kind()) {
            Ok((explanation, concluded)) if concluded == label => ExplanationRecord {
                explanation,
                output: Some(label),
                raw_completion: raw,
                ..record
            },
            Ok((_, concluded)) => ExplanationRecord {
                raw_completion: raw,
                failure: Some(format!("explanation concludes {concluded}, not the given {label}")),
                ..record
            },
            Err(e) => ExplanationRecord {
                raw_completion: raw,
                failure: Some(e.to_string()),
                ..record
            },
        })
    }

    pub async fn run_counterfactuals(&self) -> Result<StageOutcome, PipelineError> {
        let mut items = Vec::new();
        let mut skipped = 0;
        for record in self.store.explanations() {
            if !record.is_parse_valid() {
                continue;
            }
            if self.store.counterfactual_set(&record.key()).is_some() {
                skipped += 1;
                continue;
            }
            let inst = self.instance(&record.instance_id)?;
            items.push((record.key().to_string(), (record, inst)));
        }
        self.fan_out(
            StageOutcome::new(Stage::Counterfactuals, skipped),
            items,
            |(record, inst)| async move { Ok(StoreEntry::CounterfactualSet(self.generate(&record, inst).await?)) },
        )
        .await
    }

    async fn generate(
        &self,
        record: &ExplanationRecord,
        inst: &TaskInstance,
    ) -> Result<CounterfactualSet, PipelineError> {
        let cf_cfg = &self.cfg.counterfactuals;
        let n = self.cfg.samples_per_generator();
        let mut requests = Vec::new();
        for g in &cf_cfg.generators {
            let settings = RequestSettings {
                provider: g.provider.clone(),
                model_id: g.model_id.clone(),
                temperature: cf_cfg.temperature,
                max_tokens: cf_cfg.max_tokens,
                seed: None,
            };
            let req = render_counterfactual_prompt(&self.templates, record, inst, &settings)?;
            for k in 0..n {
                requests.push((g.id(), req.clone(), k));
            }
        }
        let completions =
            futures::future::join_all(requests.iter().map(|(_, req, k)| self.gateway.complete(req, *k))).await;

        let key = record.key();
        let original = inst.input.normalized();
        let mut seen = HashSet::new();
        let mut tallies = GenerationTallies {
            requested: requests.len() as u32,
            ..Default::default()
        };
        let mut counterfactuals = Vec::new();
        for ((generator_id, _, _), completion) in requests.iter().zip(completions) {
            let text = completion?.text;
            let input = match parse_counterfactual(&text, inst.kind()) {
                Ok(input) => input,
                Err(_) => {
                    *tallies.parse_failures.entry(generator_id.clone()).or_default() += 1;
                    continue;
                }
            };
            let norm = input.normalized();
            if norm == original {
                tallies.equal_to_input += 1;
            } else if !seen.insert(norm) {
                tallies.duplicates += 1;
            } else {
                counterfactuals.push(GeneratedCounterfactual {
                    id: format!("{key}|cf{}", counterfactuals.len()),
                    input,
                    generator_id: generator_id.clone(),
                });
            }
        }
        Ok(CounterfactualSet {
            parent: key,
            counterfactuals,
            tallies,
        })
    }

    /// Counterfactuals of stored explanations, with their parent record.
    fn pending_counterfactuals(
        &self,
        mut want: impl FnMut(&GeneratedCounterfactual) -> Option<bool>,
    ) -> (Vec<(ExplanationRecord, GeneratedCounterfactual)>, usize) {
        let mut items = Vec::new();
        let mut skipped = 0;
        for set in self.store.counterfactual_sets() {
            let Some(record) = self.store.explanation(&set.parent) else {
                continue;
            };
            for cf in set.counterfactuals {
                match want(&cf) {
                    Some(true) => items.push((record.clone(), cf)),
                    Some(false) => skipped += 1,
                    None => {}
                }
            }
        }
        (items, skipped)
    }

    pub async fn run_simulation(&self) -> Result<StageOutcome, PipelineError> {
        let (pending, skipped) = self.pending_counterfactuals(|cf| Some(self.store.simulation(&cf.id).is_none()));
        let outcome = StageOutcome::new(Stage::Simulate, skipped);
        match &self.cfg.simulator {
            SimulatorConfig::Llm {
                provider,
                model_id,
                max_tokens,
            } => {
                let settings = RequestSettings {
                    provider: provider.clone(),
                    model_id: model_id.clone(),
                    temperature: 0.0,
                    max_tokens: *max_tokens,
                    seed: None,
                };
                let mut items = Vec::new();
                for (record, cf) in pending {
                    let inst = self.instance(&record.instance_id)?;
                    items.push((cf.id.clone(), (record, inst, cf)));
                }
                let settings = &settings;
                self.fan_out(outcome, items, |(record, inst, cf)| async move {
                    let req = render_simulation_prompt(&self.templates, &record, inst, &cf.input, settings)?;
                    let raw = self.gateway.complete(&req, 0).await?.text;
                    let (judgment, parse_failed) = match parse_simulation(&raw, inst.kind()) {
                        Ok(j) => (j, false),
                        Err(_) => (SimulationJudgment::Unsimulatable, true),
                    };
                    Ok(StoreEntry::Simulation(SimulationEntry {
                        counterfactual_id: cf.id,
                        judgment,
                        source: JudgmentSource::LlmSimulator,
                        parse_failed,
                        votes: None,
                    }))
                })
                .await
            }
            SimulatorConfig::Human { export, redundancy } => {
                let lines = read_export(export)?;
                let judgments = simulation_judgments(&lines, &self.cfg.run_id, self.dataset.kind)?;
                let mut items = Vec::new();
                for (_, cf) in pending {
                    let votes: Vec<SimulationJudgment> = match judgments.get(&cf.id) {
                        Some(v) => v.iter().map(|(_, j)| *j).collect(),
                        // Left unjudged until annotations arrive.
                        None => continue,
                    };
                    items.push((cf.id.clone(), (cf.id, votes)));
                }
                let redundancy = *redundancy;
                self.fan_out(outcome, items, |(id, votes)| async move {
                    let judgment = majority_vote(&votes, redundancy)?;
                    Ok(StoreEntry::Simulation(SimulationEntry {
                        counterfactual_id: id,
                        judgment,
                        source: JudgmentSource::HumanMajority,
                        parse_failed: false,
                        votes: Some(votes.len()),
                    }))
                })
                .await
            }
        }
    }

    pub async fn run_counterfactual_outputs(&self) -> Result<StageOutcome, PipelineError> {
        let (pending, skipped) = self.pending_counterfactuals(|cf| {
            let sim = self.store.simulation(&cf.id)?;
            sim.judgment.is_simulatable().then_some(())?;
            Some(self.store.output(&cf.id).is_none())
        });
        let mut items = Vec::new();
        for (record, cf) in pending {
            let system = self.system(&record.system_id)?;
            items.push((cf.id.clone(), (system, cf)));
        }
        self.fan_out(
            StageOutcome::new(Stage::Outputs, skipped),
            items,
            |(system, cf)| async move {
                let actual_output = self.answer(&system, &cf.input).await?;
                Ok(StoreEntry::CounterfactualOutput(OutputEntry {
                    counterfactual_id: cf.id,
                    actual_output,
                }))
            },
        )
        .await
    }

    /// The system's own answer on an input, produced the way its
    /// explanations are: chain-of-thought systems reason first, post-hoc
    /// systems answer directly.
    async fn answer(&self, system: &ModelSystem, input: &TaskInput) -> Result<Option<Label>, PipelineError> {
        let settings = RequestSettings::from(system);
        let req = match system.method {
            Method::Cot => render_cot_request(&self.templates, input, &settings)?,
            Method::PostHoc | Method::ForcedPostHoc => render_direct_answer_request(&self.templates, input, &settings)?,
        };
        let raw = self.gateway.complete(&req, 0).await?.text;
        Ok(parse_answer(&raw, input.kind()).ok().map(|(_, l)| l))
    }

    /// Adds forced explanations for every post-hoc system on the inputs it
    /// answered correctly, then runs the remaining stages for them.
    pub async fn run_forced(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        let normals: Vec<&ModelSystem> = self
            .cfg
            .systems
            .iter()
            .filter(|s| s.method == Method::PostHoc)
            .collect();
        if normals.is_empty() {
            return Err(PipelineError::Config(
                "the forced check needs a post-hoc system in the configuration".into(),
            ));
        }
        let mut outcomes = vec![self.run_explanations().await?];
        let mut items = Vec::new();
        let mut skipped = 0;
        for normal in normals {
            let forced = normal.with_method(Method::ForcedPostHoc);
            let qualifying = self.qualifying_instances(normal);
            if qualifying.is_empty() {
                return Err(PipelineError::EmptySubset(format!(
                    "{} answered no input correctly",
                    normal.system_id()
                )));
            }
            for (inst, normal_output) in qualifying {
                let key = crate::domain::ExplanationKey {
                    instance_id: inst.id.clone(),
                    system_id: forced.system_id(),
                };
                if self.store.explanation(&key).is_some() {
                    skipped += 1;
                } else {
                    items.push((key.to_string(), (inst, forced.clone(), forced_label_for(normal_output))));
                }
            }
        }
        outcomes.push(
            self.fan_out(
                StageOutcome::new(Stage::Explanations, skipped),
                items,
                |(inst, system, label)| async move {
                    Ok(StoreEntry::Explanation(self.explain(inst, &system, Some(label)).await?))
                },
            )
            .await?,
        );
        for stage in [Stage::Counterfactuals, Stage::Simulate, Stage::Outputs] {
            outcomes.push(self.run_stage(stage).await?);
        }
        Ok(outcomes)
    }

    /// Instances where the normal system's stored output equals gold.
    pub(crate) fn qualifying_instances(&self, normal: &ModelSystem) -> Vec<(&TaskInstance, Label)> {
        self.dataset
            .instances
            .iter()
            .filter_map(|inst| {
                let record = self.store.explanation(&crate::domain::ExplanationKey {
                    instance_id: inst.id.clone(),
                    system_id: normal.system_id(),
                })?;
                let output = record.output?;
                (output == inst.gold).then_some((inst, output))
            })
            .collect()
    }
}
