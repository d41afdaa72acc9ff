use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, GatewayError, ProviderCall, Role};

/// Client for an OpenAI-style `POST /chat/completions` endpoint.
pub struct OpenAiCompatible {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiCompatible {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Reads the API key from the environment variable named `var`.
    pub fn from_env(base_url: &str, var: &str) -> Result<Self, GatewayError> {
        let key = std::env::var(var).map_err(|_| GatewayError::MissingCredentials(var.to_string()))?;
        Ok(Self::new(base_url, Some(key)))
    }
}

#[async_trait]
impl ChatProvider for OpenAiCompatible {
    async fn complete(&self, call: &ProviderCall<'_>) -> Result<String, GatewayError> {
        let req = call.request;
        let body = WireRequest {
            model: &req.model_id,
            messages: req
                .turns
                .iter()
                .map(|t| WireMessage {
                    role: match t.role {
                        Role::Human => "user",
                        Role::Assistant => "assistant",
                    },
                    content: &t.content,
                })
                .collect(),
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            seed: req.seed,
        };
        let mut http = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        match status.as_u16() {
            401 | 403 => return Err(GatewayError::Auth(format!("HTTP {status}"))),
            429 => return Err(GatewayError::Throttled(format!("HTTP {status}"))),
            s if s >= 500 => return Err(GatewayError::Transport(format!("HTTP {status}"))),
            _ if !status.is_success() => {
                let text = resp.text().await.unwrap_or_default();
                return Err(GatewayError::BadResponse(format!("HTTP {status}: {text}")));
            }
            _ => {}
        }
        let parsed: WireResponse = resp
            .json()
            .await
            .map_err(|e| GatewayError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::BadResponse("no choices[0].message.content".into()))
    }
}
