use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::domain::{Method, ModelSystem, TaskKind};
use crate::stats::{DEFAULT_PERMUTATION_ITERATIONS, DEFAULT_REDUNDANCY};
use crate::text::SimilarityMetricId;

/// A run configuration, usually read from a TOML file.
///
/// Relative paths are resolved against the directory of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default = "default_store_dir")]
    pub store_dir: PathBuf,
    /// Response cache directory; responses are only kept in memory when unset.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub systems: Vec<ModelSystem>,
    pub counterfactuals: CounterfactualConfig,
    pub simulator: SimulatorConfig,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<SimilarityMetricId>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    /// Stopword list for Jaccard; the bundled English list when unset.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default = "default_bleu_order")]
    pub bleu_max_order: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub permutation_iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Strategyqa,
    Shp,
}

impl DatasetFormat {
    pub fn task_kind(self) -> TaskKind {
        match self {
            DatasetFormat::Strategyqa => TaskKind::YesNoQa,
            DatasetFormat::Shp => TaskKind::PairwisePreference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetFormat,
    pub path: PathBuf,
    /// Use only the first `limit` instances.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub provider: String,
    pub model_id: String,
}

impl GeneratorConfig {
    pub fn id(&self) -> String {
        format!("{}:{}", self.provider, self.model_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub generators: Vec<GeneratorConfig>,
    /// Samples per explanation and generator; 10 for yes/no QA and 6 for
    /// pairwise preference when unset.
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default)]
    pub mixing: bool,
    #[serde(default = "default_cf_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulatorConfig {
    Llm {
        provider: String,
        model_id: String,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
    },
    Human {
        /// Judgment export from the annotation service.
        export: PathBuf,
        #[serde(default = "default_redundancy")]
        redundancy: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    #[default]
    Local,
    Remote {
        base_url: String,
        model: String,
        #[serde(default)]
        credential_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    /// An OpenAI-compatible chat completions endpoint.
    Openai {
        base_url: String,
        #[serde(default)]
        credential_env: Option<String>,
    },
    /// Answers from a fixture file; never touches the network.
    Scripted { fixtures: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    #[serde(flatten)]
    pub kind: ProviderKind,
}

fn default_store_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_metrics() -> Vec<SimilarityMetricId> {
    vec![
        SimilarityMetricId::Bleu,
        SimilarityMetricId::Cosine,
        SimilarityMetricId::Jaccard,
    ]
}
fn default_in_flight() -> usize {
    crate::gateway::DEFAULT_IN_FLIGHT
}
fn default_bleu_order() -> usize {
    4
}
fn default_iterations() -> u32 {
    DEFAULT_PERMUTATION_ITERATIONS
}
fn default_cf_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    512
}
fn default_redundancy() -> usize {
    DEFAULT_REDUNDANCY
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() {
            Path::new(".")
        } else {
            base
        };
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.store_dir);
        if let Some(p) = &mut self.cache_dir {
            resolve(base, p);
        }
        resolve(base, &mut self.dataset.path);
        if let SimulatorConfig::Human { export, .. } = &mut self.simulator {
            resolve(base, export);
        }
        for p in &mut self.providers {
            if let ProviderKind::Scripted { fixtures } = &mut p.kind {
                resolve(base, fixtures);
            }
        }
        if let Some(p) = &mut self.stopwords {
            resolve(base, p);
        }
        if let Some(p) = &mut self.prompts {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.run_id.trim().is_empty() || self.run_id.contains(['/', '\\']) {
            return fail(format!(
                "run_id {:?} must be a non-empty name without slashes",
                self.run_id
            ));
        }
        if self.systems.is_empty() {
            return fail("at least one system is required".into());
        }
        let mut ids: Vec<String> = self.systems.iter().map(ModelSystem::system_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return fail(format!("system {} is listed twice", w[0]));
        }
        if let Some(s) = self.systems.iter().find(|s| s.method == Method::ForcedPostHoc) {
            return fail(format!(
                "system {}: forced explanations are produced by the forced sanity check, list the post-hoc system instead",
                s.system_id()
            ));
        }
        let cf = &self.counterfactuals;
        if cf.generators.is_empty() {
            return fail("at least one counterfactual generator is required".into());
        }
        if cf.generators.len() > 1 && !cf.mixing {
            return fail("several counterfactual generators need mixing = true".into());
        }
        if cf.n == Some(0) {
            return fail("counterfactuals.n must be positive".into());
        }
        if self.bleu_max_order == 0 {
            return fail("bleu_max_order must be positive".into());
        }
        if self.permutation_iterations == 0 {
            return fail("permutation_iterations must be positive".into());
        }
        let mut provider_ids: Vec<&str> = self.systems.iter().map(|s| s.provider.as_str()).collect();
        provider_ids.extend(cf.generators.iter().map(|g| g.provider.as_str()));
        if let SimulatorConfig::Llm { provider, .. } = &self.simulator {
            provider_ids.push(provider);
        }
        for id in provider_ids {
            if !self.providers.iter().any(|p| p.id == id) {
                return fail(format!("provider {id:?} is not configured"));
            }
        }
        if let SimulatorConfig::Human { redundancy: 0, .. } = self.simulator {
            return fail("simulator.redundancy must be positive".into());
        }
        Ok(())
    }

    /// Counterfactual samples per generator for this dataset.
    pub fn samples_per_generator(&self) -> u32 {
        self.counterfactuals.n.unwrap_or(match self.dataset.kind.task_kind() {
            TaskKind::YesNoQa => 10,
            TaskKind::PairwisePreference => 6,
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.store_dir.join(&self.run_id)
    }

    /// Short label for the generator configuration, e.g. `gpt-4` or
    /// `mix(gpt-3.5,gpt-4)`.
    pub fn generator_label(&self) -> String {
        let models: Vec<&str> = self
            .counterfactuals
            .generators
            .iter()
            .map(|g| g.model_id.as_str())
            .collect();
        if models.len() == 1 {
            models[0].to_string()
        } else {
            format!("mix({})", models.join(","))
        }
    }
}
