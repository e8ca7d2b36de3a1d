//! Text-generation backends: the trait, a generic JSON-over-HTTP
//! chat-completion client, and an order-preserving bounded-concurrency
//! driver.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PromptGenError, Result};

pub trait TextBackend: Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
    /// Provenance string recorded on every TextRecord.
    fn name(&self) -> &str;
}

/// Run `complete` for every prompt with at most `max_in_flight` requests
/// outstanding. Results are committed in input order regardless of worker
/// scheduling, so the caller's output is deterministic whenever the backend
/// is.
pub fn complete_all<B: TextBackend + ?Sized>(
    backend: &B,
    prompts: &[String],
    max_in_flight: usize,
) -> Vec<Result<String>> {
    let workers = max_in_flight.max(1).min(prompts.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let out = backend.complete(&prompts[i]);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index processed"))
        .collect()
}

pub const API_URL_ENV: &str = "BLEG_API_URL";
pub const API_KEY_ENV: &str = "BLEG_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub max_retries: usize,
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "deepseek-chat".into(),
            temperature: 0.7,
            max_tokens: 1024,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

/// Chat-completion client against any OpenAI-style endpoint. The API key is
/// taken from the environment, never from configuration files.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    label: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

impl RemoteBackend {
    pub fn new(mut cfg: RemoteConfig) -> Result<Self> {
        if let Ok(url) = std::env::var(API_URL_ENV) {
            if !url.is_empty() {
                cfg.endpoint = url;
            }
        }
        if cfg.endpoint.is_empty() {
            return Err(PromptGenError::Config(format!(
                "remote backend needs an endpoint (config or {API_URL_ENV})"
            )));
        }
        let api_key = std::env::var(API_KEY_ENV).unwrap_or_default();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| PromptGenError::Config(format!("http client: {e}")))?;
        let label = format!("remote:{}", cfg.model);
        Ok(Self { cfg, api_key, client, label })
    }

    fn post_once(&self, prompt: &str) -> std::result::Result<String, (bool, String)> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        let mut req = self.client.post(&self.cfg.endpoint).json(&body);
        if !self.api_key.is_empty() {
            req = req.bearer_auth(&self.api_key);
        }
        let resp = req.send().map_err(|e| (true, format!("send: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            // retry server-side and rate-limit failures, fail fast otherwise
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("http {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, format!("body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or((false, "empty choices".into()))
    }
}

impl TextBackend for RemoteBackend {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.post_once(prompt) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    last_err = msg;
                    if !retryable || attempt == self.cfg.max_retries {
                        break;
                    }
                    let backoff = self.cfg.backoff_ms.saturating_mul(1 << attempt);
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
        Err(PromptGenError::Transport(last_err))
    }

    fn name(&self) -> &str {
        &self.label
    }
}
