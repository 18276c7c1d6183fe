//! Chat-completion clients: the trait the pipeline talks to, an
//! OpenAI-compatible HTTP client and a scripted client that replays a
//! transcript file.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENV_ENDPOINT: &str = "LLM_ENDPOINT";
pub const ENV_MODEL: &str = "LLM_MODEL";
pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_TRANSCRIPT: &str = "LLM_TRANSCRIPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub model: String,
}

impl LlmRequest {
    /// A single user message at temperature 0.
    pub fn prompt(text: impl Into<String>) -> Self {
        LlmRequest {
            messages: vec![Message::user(text)],
            temperature: 0.0,
            model: String::new(),
        }
    }

    /// Hex SHA-256 of the rendered messages. Model and temperature are not
    /// part of the hash, so a transcript can be replayed against any model
    /// name.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.role.as_str().as_bytes());
            h.update(b"\n");
            h.update(m.content.as_bytes());
            h.update(b"\n\x1e\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Content of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: String,
    pub usage: Usage,
}

impl LlmResponse {
    pub fn text(text: impl Into<String>) -> Self {
        LlmResponse {
            text: text.into(),
            finish_reason: "stop".into(),
            usage: Usage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted response for request {hash}")]
    NotScripted { hash: String },
    #[error("missing configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Errors worth retrying: network failures, throttling and server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;

    /// Model id reported in traces and reports.
    fn model(&self) -> String {
        String::new()
    }
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn model(&self) -> String {
        (**self).model()
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn model(&self) -> String {
        (**self).model()
    }
}

/// A client backed by a closure. Handy in tests.
pub struct FnClient<F>(pub F);

impl<F> ChatClient for FnClient<F>
where
    F: Fn(&LlmRequest) -> Result<LlmResponse, LlmError> + Send + Sync,
{
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (self.0)(request)
    }
}

/// Runs `op` up to `attempts` times, sleeping `base * 2^i` between tries,
/// as long as the error is transient.
pub fn with_retries<T, E>(
    attempts: usize,
    base: Duration,
    transient: impl Fn(&E) -> bool,
    mut op: impl FnMut() -> Result<T, E>,
) -> Result<T, E> {
    let mut i = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if i + 1 < attempts && transient(&e) => {
                std::thread::sleep(base * 2u32.pow(i as u32));
                i += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

pub const MAX_ATTEMPTS: usize = 3;

/// OpenAI-compatible chat-completions client.
pub struct HttpChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    backoff: Duration,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build();
        HttpChatClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent: config.into(),
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads `LLM_ENDPOINT`, `LLM_MODEL` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| LlmError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_default();
        Ok(Self::new(endpoint, model, std::env::var(ENV_API_KEY).ok()))
    }

    fn once(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let model = if request.model.is_empty() {
            &self.model
        } else {
            &request.model
        };
        let body = serde_json::json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Provider { status, body: text });
        }
        let parsed: ChatResponseBody =
            serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Malformed("no choices".into()))?;
        Ok(LlmResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason.unwrap_or_default(),
            usage: parsed.usage.unwrap_or_default(),
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        with_retries(MAX_ATTEMPTS, self.backoff, LlmError::is_transient, || {
            self.once(request)
        })
    }

    fn model(&self) -> String {
        self.model.clone()
    }
}

/// One transcript record. `request_hash` matches a request exactly;
/// `request_suffix` matches any request whose last user message ends with
/// the given text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_suffix: Option<String>,
    pub response: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("reading transcript {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Replays responses from a transcript. Unmatched requests fail with
/// [`LlmError::NotScripted`] and are remembered for inspection.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    by_hash: HashMap<String, String>,
    by_suffix: Vec<(String, String)>,
    misses: Mutex<Vec<String>>,
}

impl ScriptedClient {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        let mut client = ScriptedClient::default();
        for e in entries {
            if let Some(h) = e.request_hash {
                client.by_hash.entry(h).or_insert(e.response);
            } else if let Some(s) = e.request_suffix {
                client.by_suffix.push((s, e.response));
            }
        }
        client
    }

    /// Parses a JSONL transcript. Blank lines and lines starting with `//`
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self, TranscriptError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let e: TranscriptEntry = serde_json::from_str(line).map_err(|e| TranscriptError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            if e.request_hash.is_none() && e.request_suffix.is_none() {
                return Err(TranscriptError::Format {
                    line: i + 1,
                    message: "entry needs request_hash or request_suffix".into(),
                });
            }
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    pub fn from_path(path: &Path) -> Result<Self, TranscriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| TranscriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Hashes of requests that had no scripted response.
    pub fn misses(&self) -> Vec<String> {
        self.misses.lock().map(|m| m.clone()).unwrap_or_default()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let hash = request.hash();
        if let Some(r) = self.by_hash.get(&hash) {
            return Ok(LlmResponse::text(r.clone()));
        }
        let last = request.last_user().trim_end();
        if let Some((_, r)) = self.by_suffix.iter().find(|(s, _)| last.ends_with(s.trim_end())) {
            return Ok(LlmResponse::text(r.clone()));
        }
        if let Ok(mut m) = self.misses.lock() {
            m.push(hash.clone());
        }
        Err(LlmError::NotScripted { hash })
    }

    fn model(&self) -> String {
        "scripted".into()
    }
}
