//! Deterministic provider answering from a fixture table.
//!
//! A fixture either pins an exact request fingerprint or lists substrings
//! that must all occur in the request's final human turn. Substring
//! fixtures may further be restricted to a template id and/or a sample
//! index. Resolution order:
//!
//! 1. an exact fingerprint match;
//! 2. among substring fixtures that match, those with the most restrictions;
//!    more than one at that level is an [`GatewayError::AmbiguousMatch`].

use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatProvider, GatewayError, ProviderCall};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubstringPattern {
    One(String),
    All(Vec<String>),
}

impl SubstringPattern {
    fn matches(&self, haystack: &str) -> bool {
        match self {
            SubstringPattern::One(s) => haystack.contains(s.as_str()),
            SubstringPattern::All(all) => all.iter().all(|s| haystack.contains(s.as_str())),
        }
    }

    fn describe(&self) -> String {
        match self {
            SubstringPattern::One(s) => s.clone(),
            SubstringPattern::All(all) => all.join(" & "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<SubstringPattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub response: String,
}

impl Fixture {
    pub fn exact(fingerprint: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            fingerprint: Some(fingerprint.into()),
            contains: None,
            template: None,
            sample_index: None,
            response: response.into(),
        }
    }

    pub fn contains(substring: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            fingerprint: None,
            contains: Some(SubstringPattern::One(substring.into())),
            template: None,
            sample_index: None,
            response: response.into(),
        }
    }

    pub fn contains_all<S: Into<String>>(substrings: impl IntoIterator<Item = S>, response: impl Into<String>) -> Self {
        Self {
            contains: Some(SubstringPattern::All(substrings.into_iter().map(Into::into).collect())),
            ..Self::contains("", response)
        }
    }

    pub fn for_template(mut self, template: impl Into<String>) -> Self {
        self.template = Some(template.into());
        self
    }

    pub fn for_sample(mut self, sample_index: u32) -> Self {
        self.sample_index = Some(sample_index);
        self
    }

    fn restrictions(&self) -> usize {
        usize::from(self.template.is_some()) + usize::from(self.sample_index.is_some())
    }

    fn matches_substring(&self, call: &ProviderCall<'_>) -> bool {
        let Some(pattern) = &self.contains else {
            return false;
        };
        if self.template.as_deref().is_some_and(|t| t != call.request.template_id) {
            return false;
        }
        if self.sample_index.is_some_and(|i| i != call.sample_index) {
            return false;
        }
        pattern.matches(call.request.final_human_turn())
    }

    fn describe(&self) -> String {
        let mut s = self
            .contains
            .as_ref()
            .map(SubstringPattern::describe)
            .unwrap_or_default();
        if let Some(t) = &self.template {
            s.push_str(&format!(" [template {t}]"));
        }
        if let Some(i) = self.sample_index {
            s.push_str(&format!(" [sample {i}]"));
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixtures {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing fixtures {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("fixture #{0} has neither a fingerprint nor substrings")]
    NoMatcher(usize),
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    fixtures: Vec<Fixture>,
}

impl ScriptedProvider {
    pub fn new(fixtures: Vec<Fixture>) -> Self {
        Self { fixtures }
    }

    /// Loads a JSON array of fixtures.
    pub fn from_file(path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let fixtures: Vec<Fixture> = serde_json::from_str(&text).map_err(|source| FixtureError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if let Some(i) = fixtures
            .iter()
            .position(|f| f.fingerprint.is_none() && f.contains.is_none())
        {
            return Err(FixtureError::NoMatcher(i));
        }
        Ok(Self::new(fixtures))
    }

    pub fn fixtures(&self) -> &[Fixture] {
        &self.fixtures
    }

    pub fn resolve(&self, call: &ProviderCall<'_>) -> Result<&str, GatewayError> {
        if let Some(f) = self
            .fixtures
            .iter()
            .find(|f| f.fingerprint.as_deref() == Some(call.fingerprint))
        {
            return Ok(&f.response);
        }
        let candidates: Vec<&Fixture> = self.fixtures.iter().filter(|f| f.matches_substring(call)).collect();
        let Some(best) = candidates.iter().map(|f| f.restrictions()).max() else {
            return Err(GatewayError::ScriptMissing {
                fingerprint: call.fingerprint.to_string(),
                template_id: call.request.template_id.clone(),
            });
        };
        let top: Vec<&Fixture> = candidates.into_iter().filter(|f| f.restrictions() == best).collect();
        if top.len() > 1 {
            return Err(GatewayError::AmbiguousMatch(top.iter().map(|f| f.describe()).collect()));
        }
        Ok(&top[0].response)
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn complete(&self, call: &ProviderCall<'_>) -> Result<String, GatewayError> {
        self.resolve(call).map(str::to_string)
    }
}
