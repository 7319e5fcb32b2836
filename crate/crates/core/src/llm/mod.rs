//! Chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::complete`]. The
//! gateway runs in one of three modes:
//!
//! - `Live`: forward to a [`ChatProvider`].
//! - `Record`: forward to a provider and append each exchange to a cassette.
//! - `Replay`: answer from a cassette only. A request whose fingerprint is not
//!   in the cassette is a hard error; no provider is ever consulted.

pub mod cassette;
pub mod provider;
pub mod tokens;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

pub use cassette::{fingerprint, Cassette, CassetteEntry};
pub use provider::{
    ChatProvider, OpenAiCompatProvider, ProviderError, ProviderReply, ScriptedProvider, ENV_API_KEY, ENV_BASE_URL,
};
pub use tokens::{count_tokens, within_result_budget, ByteEstimator, TokenCounter, RESULT_TOKEN_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_ref: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f32,
}

impl ChatRequest {
    pub fn new(model_ref: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model_ref: model_ref.into(), messages, temperature: 0.0 }
    }

    /// Concatenated message text, used for prompt-side token estimates.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated_cost: f64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Price per million tokens. Defaults to zero; provider prices drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    #[serde(default)]
    pub input_per_mtok: f64,
    #[serde(default)]
    pub output_per_mtok: f64,
}

impl RateTable {
    pub fn usage(&self, prompt_tokens: u64, completion_tokens: u64) -> TokenUsage {
        TokenUsage {
            prompt_tokens,
            completion_tokens,
            estimated_cost: prompt_tokens as f64 * self.input_per_mtok / 1e6
                + completion_tokens as f64 * self.output_per_mtok / 1e6,
        }
    }
}

/// A completed exchange as seen by callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub fingerprint: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider error (retriable: {retriable}): {message}")]
    Provider { message: String, retriable: bool },
    #[error("no cassette entry for request fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("cassette error: {0}")]
    Cassette(String),
    #[error("gateway has no provider configured for {0} mode")]
    NoProvider(&'static str),
}

impl GatewayError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Provider { retriable: true, .. })
    }
}

pub enum GatewayMode {
    Live(Arc<dyn ChatProvider>),
    Record { provider: Arc<dyn ChatProvider>, path: PathBuf },
    Replay(Cassette),
}

pub struct Gateway {
    mode: GatewayMode,
    rates: RateTable,
    max_retries: u32,
    backoff: Duration,
    counter: Arc<dyn TokenCounter>,
    cassette: Mutex<Cassette>,
}

impl Gateway {
    pub fn new(mode: GatewayMode) -> Self {
        let cassette = match &mode {
            GatewayMode::Replay(c) => c.clone(),
            _ => Cassette::default(),
        };
        Self {
            mode,
            rates: RateTable::default(),
            max_retries: 2,
            backoff: Duration::from_millis(500),
            counter: Arc::new(ByteEstimator),
            cassette: Mutex::new(cassette),
        }
    }

    pub fn live(provider: Arc<dyn ChatProvider>) -> Self {
        Self::new(GatewayMode::Live(provider))
    }

    pub fn replay(cassette: Cassette) -> Self {
        Self::new(GatewayMode::Replay(cassette))
    }

    pub fn record(provider: Arc<dyn ChatProvider>, path: impl Into<PathBuf>) -> Self {
        Self::new(GatewayMode::Record { provider, path: path.into() })
    }

    pub fn with_rates(mut self, rates: RateTable) -> Self {
        self.rates = rates;
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_token_counter(mut self, counter: Arc<dyn TokenCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn token_counter(&self) -> Arc<dyn TokenCounter> {
        self.counter.clone()
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            GatewayMode::Live(_) => "live",
            GatewayMode::Record { .. } => "record",
            GatewayMode::Replay(_) => "replay",
        }
    }

    /// Entries recorded so far (record mode) or still unconsumed (replay mode).
    pub async fn cassette_snapshot(&self) -> Cassette {
        self.cassette.lock().await.clone()
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let fingerprint = cassette::fingerprint(request);
        match &self.mode {
            GatewayMode::Replay(_) => {
                let entry = self
                    .cassette
                    .lock()
                    .await
                    .take(&fingerprint)
                    .ok_or_else(|| GatewayError::ReplayMiss { fingerprint: fingerprint.clone() })?;
                Ok(Completion { text: entry.response, usage: entry.usage, fingerprint })
            }
            GatewayMode::Live(provider) => {
                let (text, usage) = self.call_with_retry(provider.as_ref(), request).await?;
                Ok(Completion { text, usage, fingerprint })
            }
            GatewayMode::Record { provider, path } => {
                let (text, usage) = self.call_with_retry(provider.as_ref(), request).await?;
                let entry = CassetteEntry {
                    fingerprint: fingerprint.clone(),
                    request: request.clone(),
                    response: text.clone(),
                    usage,
                };
                let mut cassette = self.cassette.lock().await;
                cassette::append_entry(path, &entry).map_err(|e| GatewayError::Cassette(e.to_string()))?;
                cassette.push(entry);
                Ok(Completion { text, usage, fingerprint })
            }
        }
    }

    async fn call_with_retry(
        &self,
        provider: &dyn ChatProvider,
        request: &ChatRequest,
    ) -> Result<(String, TokenUsage), GatewayError> {
        let mut attempt = 0;
        loop {
            match provider.chat(request).await {
                Ok(reply) => {
                    let prompt = reply
                        .prompt_tokens
                        .unwrap_or_else(|| self.counter.count(&request.prompt_text()) as u64);
                    let completion =
                        reply.completion_tokens.unwrap_or_else(|| self.counter.count(&reply.text) as u64);
                    return Ok((reply.text, self.rates.usage(prompt, completion)));
                }
                Err(err) if err.retriable && attempt < self.max_retries => {
                    tracing::warn!(attempt, error = %err.message, "retrying chat completion");
                    tokio::time::sleep(self.backoff * 2u32.pow(attempt)).await;
                    attempt += 1;
                }
                Err(err) => {
                    return Err(GatewayError::Provider { message: err.message, retriable: err.retriable })
                }
            }
        }
    }
}
