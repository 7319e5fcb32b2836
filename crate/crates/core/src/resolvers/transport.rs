//! HTTP GET transport for REST resolvers, swappable for offline tests.

use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self { status: 200, body: body.into() }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("request to {url} failed: {message}")]
pub struct TransportError {
    pub url: String,
    pub message: String,
}

#[async_trait]
pub trait HttpTransport: Send + Sync {
    async fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("metabokg/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("http client");
        Self { client }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(10))
    }
}

#[async_trait]
impl HttpTransport for ReqwestTransport {
    async fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let err = |e: reqwest::Error| TransportError { url: url.to_owned(), message: e.to_string() };
        let response = self.client.get(url).send().await.map_err(err)?;
        let status = response.status().as_u16();
        let body = response.text().await.map_err(err)?;
        Ok(HttpResponse { status, body })
    }
}

/// Canned responses keyed by URL prefix; the longest matching prefix wins.
/// Unmatched URLs fail like a refused connection. Every requested URL is
/// recorded.
#[derive(Default)]
pub struct MockTransport {
    routes: Vec<(String, HttpResponse)>,
    calls: Mutex<Vec<String>>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(mut self, url_prefix: impl Into<String>, response: HttpResponse) -> Self {
        self.routes.push((url_prefix.into(), response));
        self
    }

    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }

    /// All bodies this transport can serve.
    pub fn payloads(&self) -> impl Iterator<Item = &str> {
        self.routes.iter().map(|(_, r)| r.body.as_str())
    }
}

#[async_trait]
impl HttpTransport for MockTransport {
    async fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        self.calls.lock().unwrap().push(url.to_owned());
        self.routes
            .iter()
            .filter(|(prefix, _)| url.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, r)| r.clone())
            .ok_or_else(|| TransportError { url: url.to_owned(), message: "connection refused".into() })
    }
}
