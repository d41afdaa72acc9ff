//! The five-stage evaluation pipeline: explanations, counterfactuals,
//! simulation, counterfactual outputs, metrics.
//!
//! Each stage reads what earlier stages persisted in the run store and
//! appends its own records, so a stage can be rerun or resumed at any time
//! without repeating finished work.

mod analysis;
mod config;
pub mod human;
mod report;
mod scoring;
mod stages;
pub mod store;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use analysis::{
    align_raters, compare_precision, forced_comparison, iaa_table, plausibility_correlation, precision_generality,
    ForcedComparison, IaaTable, PlausibilityCorrelation, PooledCorrelation, SignificanceEntry, SimulatorAgreement,
};
pub use config::{
    CounterfactualConfig, DatasetConfig, DatasetFormat, EmbeddingConfig, GeneratorConfig, ProviderConfig, ProviderKind,
    RunConfig, SimulatorConfig,
};
pub use report::{
    AccuracyPrecisionRow, DatasetSummary, DiversityRow, IaaReport, MetricReport, PrecisionRow, SystemAggregate,
    SystemTallies, Tables, REPORT_NOTES,
};
pub use scoring::{score_explanation, ExplanationScore, Mean, ScoreCounts};
pub use stages::{Stage, StageFailure, StageOutcome};
pub use store::RunStore;

use crate::domain::{Method, ModelSystem, TaskInstance};
use crate::gateway::{FixtureError, Gateway, GatewayError, OpenAiCompatible, ResponseCache, ScriptedProvider};
use crate::stats::StatsError;
use crate::tasks::{load_shp, load_strategyqa, Dataset, TaskError, TemplateSet};
use crate::text::{EmbeddingProvider, LocalHashEmbedding, MetricError, RemoteEmbedding, Stopwords};
use human::{AnnotationTaskSpec, TaskPayload};
use store::{RunHeader, StoreEntry};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Store { path: String, line: usize, message: String },
    #[error("run {run_id:?} already exists with a different configuration")]
    RunMismatch { run_id: String },
    #[error("no run store at {0}")]
    UnknownRun(String),
    #[error("run incomplete: {}", .0.join("; "))]
    IncompleteRun(Vec<String>),
    #[error("empty subset: {0}")]
    EmptySubset(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("judgment export: {0}")]
    InvalidExport(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Errors that abort a stage instead of failing a single work item.
    fn is_fatal(&self) -> bool {
        matches!(
            self,
            PipelineError::Io { .. } | PipelineError::Store { .. } | PipelineError::Gateway(GatewayError::Cache(_))
        )
    }
}

/// Builds a gateway with every provider the configuration declares.
pub fn build_gateway(cfg: &RunConfig) -> Result<Gateway, PipelineError> {
    let cache = match &cfg.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir).map_err(|e| PipelineError::io(dir, e))?,
        None => ResponseCache::in_memory(),
    };
    let mut gateway = Gateway::new(cache).with_in_flight_cap(cfg.in_flight);
    for p in &cfg.providers {
        gateway = match &p.kind {
            ProviderKind::Scripted { fixtures } => {
                gateway.with_provider(&p.id, Arc::new(ScriptedProvider::from_file(fixtures)?))
            }
            ProviderKind::Openai {
                base_url,
                credential_env,
            } => {
                let key = credential_env.as_ref().and_then(|var| {
                    let key = std::env::var(var).ok();
                    if key.is_none() {
                        tracing::warn!(provider = %p.id, var = %var, "credential variable is not set");
                    }
                    key
                });
                gateway.with_provider(&p.id, Arc::new(OpenAiCompatible::new(base_url, key)))
            }
        };
    }
    Ok(gateway)
}

fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset, PipelineError> {
    let mut ds = match cfg.kind {
        DatasetFormat::Strategyqa => load_strategyqa(&cfg.path)?,
        DatasetFormat::Shp => load_shp(&cfg.path)?,
    };
    if let Some(limit) = cfg.limit {
        ds.instances.truncate(limit);
    }
    Ok(ds)
}

/// Clears the fields that may change between invocations of the same run:
/// the concurrency limit and where the store and cache live.
fn comparable(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        in_flight: 0,
        store_dir: PathBuf::new(),
        cache_dir: None,
        ..cfg.clone()
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    dataset: Dataset,
    templates: TemplateSet,
    gateway: Gateway,
    store: RunStore,
    stopwords: Stopwords,
    embedder: Box<dyn EmbeddingProvider>,
}

impl Pipeline {
    /// Opens the run described by `cfg`, with providers built from it.
    pub fn open(cfg: RunConfig) -> Result<Self, PipelineError> {
        let gateway = build_gateway(&cfg)?;
        Self::with_gateway(cfg, gateway)
    }

    /// Opens the run with a caller-supplied gateway.
    pub fn with_gateway(cfg: RunConfig, gateway: Gateway) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let dataset = load_dataset(&cfg.dataset)?;
        let mut templates = TemplateSet::bundled();
        if let Some(dir) = &cfg.prompts {
            templates = templates.with_overrides(dir)?;
        }
        let stopwords = match &cfg.stopwords {
            Some(path) => Stopwords::load(path)?,
            None => Stopwords::default(),
        };
        let embedder: Box<dyn EmbeddingProvider> = match &cfg.embedding {
            EmbeddingConfig::Local => Box::new(LocalHashEmbedding),
            EmbeddingConfig::Remote {
                base_url,
                model,
                credential_env,
            } => Box::new(RemoteEmbedding::new(
                base_url,
                model,
                credential_env.as_ref().and_then(|v| std::env::var(v).ok()),
            )),
        };
        let store = RunStore::open(&cfg.run_dir())?;
        match store.header() {
            None => {
                store.append(StoreEntry::Run(RunHeader {
                    run_id: cfg.run_id.clone(),
                    config: cfg.clone(),
                }))?;
            }
            Some(h) if comparable(&h.config) == comparable(&cfg) => {}
            Some(_) => {
                return Err(PipelineError::RunMismatch {
                    run_id: cfg.run_id.clone(),
                })
            }
        }
        Ok(Self {
            cfg,
            dataset,
            templates,
            gateway,
            store,
            stopwords,
            embedder,
        })
    }

    /// The configuration recorded in an existing run store.
    pub fn stored_config(store_dir: &Path, run_id: &str) -> Result<RunConfig, PipelineError> {
        let dir: PathBuf = store_dir.join(run_id);
        if !dir.join(store::STORE_FILE).exists() {
            return Err(PipelineError::UnknownRun(dir.display().to_string()));
        }
        RunStore::open(&dir)?
            .header()
            .map(|h| h.config)
            .ok_or_else(|| PipelineError::UnknownRun(dir.display().to_string()))
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    fn instance(&self, id: &str) -> Result<&TaskInstance, PipelineError> {
        self.dataset
            .get(id)
            .ok_or_else(|| TaskError::UnknownInstance(id.to_string()).into())
    }

    fn system(&self, system_id: &str) -> Result<ModelSystem, PipelineError> {
        self.cfg
            .systems
            .iter()
            .flat_map(|s| {
                let forced = (s.method == Method::PostHoc).then(|| s.with_method(Method::ForcedPostHoc));
                std::iter::once(s.clone()).chain(forced)
            })
            .find(|s| s.system_id() == system_id)
            .ok_or_else(|| PipelineError::Config(format!("system {system_id} is not configured")))
    }

    /// Annotation tasks for this run: one plausibility task per parsed
    /// explanation and one simulation task per counterfactual.
    pub fn annotation_tasks(&self) -> Vec<AnnotationTaskSpec> {
        let mut tasks = Vec::new();
        for record in self.store.explanations() {
            let (Some(output), Ok(inst)) = (record.output, self.instance(&record.instance_id)) else {
                continue;
            };
            let key = record.key();
            tasks.push(AnnotationTaskSpec {
                task_id: format!("plausibility:{key}"),
                run_id: Some(self.cfg.run_id.clone()),
                counterfactual_id: None,
                instance_id: Some(record.instance_id.clone()),
                system_id: Some(record.system_id.clone()),
                payload: TaskPayload::Plausibility {
                    input: inst.input.clone(),
                    explanation: record.explanation.clone(),
                    output,
                },
            });
            let Some(set) = self.store.counterfactual_set(&key) else {
                continue;
            };
            for cf in set.counterfactuals {
                tasks.push(AnnotationTaskSpec {
                    task_id: format!("simulation:{}", cf.id),
                    run_id: Some(self.cfg.run_id.clone()),
                    counterfactual_id: Some(cf.id),
                    instance_id: Some(record.instance_id.clone()),
                    system_id: Some(record.system_id.clone()),
                    payload: TaskPayload::Simulation {
                        input: inst.input.clone(),
                        explanation: record.explanation.clone(),
                        output,
                        counterfactual: cf.input,
                    },
                });
            }
        }
        tasks
    }
}
