//! Chat-completion backends: a scripted mock for offline runs and an HTTP
//! client for OpenAI-style chat endpoints.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 4096;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("request timed out")]
    Timeout,
    #[error("no script entry matches prompt {0}")]
    Unscripted(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("cannot attach image: {0}")]
    Image(String),
}

impl LlmError {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::Transport(_) => "transport",
            LlmError::Auth(_) => "auth",
            LlmError::EmptyResponse => "empty_response",
            LlmError::Timeout => "timeout",
            LlmError::Unscripted(_) => "unscripted",
            LlmError::Config(_) => "config",
            LlmError::Image(_) => "image",
        }
    }

    fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::Timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub parts: Vec<Part>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            parts: Vec::new(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn image(mut self, path: impl Into<PathBuf>) -> Self {
        self.parts.push(Part::Image { path: path.into() });
        self
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.parts.push(Part::Text { text: text.into() });
        self
    }

    /// Concatenated text parts, without the system prompt.
    pub fn user_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_paths(&self) -> Vec<&Path> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Image { path } => Some(path.as_path()),
                Part::Text { .. } => None,
            })
            .collect()
    }

    /// Hex SHA-256 over the system prompt and text parts. Image bytes are
    /// not part of the hash.
    pub fn text_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        for p in &self.parts {
            if let Part::Text { text } = p {
                h.update([0x1e]);
                h.update(text.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Option<Usage>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Mock script file (JSON).
    #[serde(default)]
    pub script: Option<PathBuf>,
}

fn default_key_env() -> String {
    "SLIDEGEN_API_KEY".into()
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    500
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.kind == BackendKind::Http {
            if self.endpoint.as_deref().unwrap_or("").is_empty() {
                return Err(LlmError::Config("http backend requires an endpoint".into()));
            }
            if self.model.as_deref().unwrap_or("").is_empty() {
                return Err(LlmError::Config("http backend requires a model".into()));
            }
        }
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

pub fn backend_from_config(cfg: &BackendConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    cfg.validate()?;
    match cfg.kind {
        BackendKind::Mock => {
            let script = match &cfg.script {
                Some(path) => Script::load(path)?,
                None => Script::default(),
            };
            Ok(Box::new(ScriptedBackend::new(script.entries)))
        }
        BackendKind::Http => Ok(Box::new(HttpBackend::from_config(cfg)?)),
    }
}

/// One-shot helper: builds the configured backend and sends `req`.
pub fn complete(req: &ChatRequest, cfg: &BackendConfig) -> Result<ChatResponse, LlmError> {
    backend_from_config(cfg)?.complete(req)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Matches when the system prompt or any text part contains the string.
    Substring(String),
    /// Matches [`ChatRequest::text_hash`] exactly.
    Hash(String),
}

impl Matcher {
    fn matches(&self, req: &ChatRequest, hash: &str) -> bool {
        match self {
            Matcher::Substring(s) => req.system.contains(s.as_str()) || req.user_text().contains(s.as_str()),
            Matcher::Hash(h) => h == hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub reply: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("malformed script {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_hash: String,
    pub outcome: Result<String, LlmError>,
}

/// Replies from an ordered list of matchers; the first match wins.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    log: Mutex<Vec<ReplayRecord>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn replay_log(&self) -> Vec<ReplayRecord> {
        self.log.lock().expect("replay log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("replay log poisoned").len()
    }
}

pub fn script_mock(entries: Vec<(Matcher, String)>) -> ScriptedBackend {
    ScriptedBackend::new(
        entries
            .into_iter()
            .map(|(matcher, reply)| ScriptEntry { matcher, reply })
            .collect(),
    )
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let hash = req.text_hash();
        let outcome = self
            .entries
            .iter()
            .find(|e| e.matcher.matches(req, &hash))
            .map(|e| e.reply.clone())
            .ok_or_else(|| LlmError::Unscripted(hash.clone()));
        self.log.lock().expect("replay log poisoned").push(ReplayRecord {
            prompt_hash: hash,
            outcome: outcome.clone(),
        });
        outcome.map(|text| ChatResponse { text, usage: None })
    }
}

/// OpenAI-compatible `chat/completions` client.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key_env: String,
    retries: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone().unwrap_or_default(),
            api_key_env: cfg.api_key_env.clone(),
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
            client,
        })
    }

    /// Request body in the chat-completions wire format.
    pub fn wire_body(&self, req: &ChatRequest) -> Result<serde_json::Value, LlmError> {
        let mut content = Vec::new();
        for part in &req.parts {
            match part {
                Part::Text { text } => content.push(serde_json::json!({ "type": "text", "text": text })),
                Part::Image { path } => {
                    let bytes = std::fs::read(path)
                        .map_err(|e| LlmError::Image(format!("{}: {e}", path.display())))?;
                    let mime = match path.extension().and_then(|e| e.to_str()) {
                        Some("jpg") | Some("jpeg") => "image/jpeg",
                        _ => "image/png",
                    };
                    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                    content.push(serde_json::json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:{mime};base64,{data}") }
                    }));
                }
            }
        }
        Ok(serde_json::json!({
            "model": self.model,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "messages": [
                { "role": "system", "content": req.system },
                { "role": "user", "content": content },
            ],
        }))
    }

    fn attempt(&self, body: &serde_json::Value, key: &str) -> Result<ChatResponse, LlmError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(key)
            .json(body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout
                } else {
                    LlmError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LlmError::Auth(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(format!("invalid response body: {e}"))
            }
        })?;
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        if text.trim().is_empty() {
            return Err(LlmError::EmptyResponse);
        }
        let usage = value.get("usage").and_then(|u| {
            Some(Usage {
                prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
                completion_tokens: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(ChatResponse { text, usage })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| LlmError::Auth(format!("environment variable {} is not set", self.api_key_env)))?;
        let body = self.wire_body(req)?;
        let mut delay = self.backoff;
        let mut tries = 0;
        loop {
            match self.attempt(&body, &key) {
                Err(e) if e.is_transient() && tries < self.retries => {
                    tries += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }
}

/// Records prompts and answers with a fixed placeholder, for dry runs.
#[derive(Debug, Default)]
pub struct DryRunBackend {
    prompts: Mutex<Vec<ChatRequest>>,
}

pub const DRY_RUN_REPLY: &str = "[dry run: no backend call]";

impl DryRunBackend {
    pub fn prompts(&self) -> Vec<ChatRequest> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }
}

impl ChatBackend for DryRunBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.prompts.lock().expect("prompt log poisoned").push(req.clone());
        Ok(ChatResponse {
            text: DRY_RUN_REPLY.to_string(),
            usage: None,
        })
    }
}
