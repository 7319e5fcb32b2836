use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::ChatRequest;

#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{message}")]
pub struct ProviderError {
    pub message: String,
    pub retriable: bool,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn chat(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}

/// Any server speaking the OpenAI chat-completions wire format.
pub struct OpenAiCompatProvider {
    client: reqwest::Client,
    base_url: String,
    api_key: String,
}

pub const ENV_BASE_URL: &str = "METABOKG_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "METABOKG_LLM_API_KEY";

impl OpenAiCompatProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client");
        Self { client, base_url: base_url.into(), api_key: api_key.into() }
    }

    /// Reads `METABOKG_LLM_BASE_URL` (default `https://api.openai.com/v1`) and
    /// `METABOKG_LLM_API_KEY`, falling back to `OPENAI_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let key = std::env::var(ENV_API_KEY).or_else(|_| std::env::var("OPENAI_API_KEY")).ok()?;
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        Some(Self::new(base, key))
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: MessageBody,
}

#[derive(Deserialize)]
struct MessageBody {
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[async_trait]
impl ChatProvider for OpenAiCompatProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = json!({
            "model": request.model_ref,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| ProviderError { message: e.to_string(), retriable: true })?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(ProviderError {
                message: format!("{status}: {text}"),
                retriable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let parsed: CompletionBody = response
            .json()
            .await
            .map_err(|e| ProviderError { message: format!("bad completion payload: {e}"), retriable: false })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError { message: "completion had no content".into(), retriable: false })?;
        Ok(ProviderReply {
            text,
            prompt_tokens: parsed.usage.as_ref().map(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().map(|u| u.completion_tokens),
        })
    }
}

/// Returns canned responses in order, ignoring the request. Used to record
/// fixture cassettes and in tests.
pub struct ScriptedProvider {
    responses: Mutex<VecDeque<String>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { responses: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.responses.lock().unwrap().len()
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn chat(&self, _request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let next = self.responses.lock().unwrap().pop_front();
        next.map(|text| ProviderReply { text, prompt_tokens: None, completion_tokens: None })
            .ok_or_else(|| ProviderError { message: "script exhausted".into(), retriable: false })
    }
}
