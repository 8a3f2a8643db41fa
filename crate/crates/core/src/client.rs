//! Chat-completions transport and the scripted stub backend.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;

/// Reply returned by the stub for any request it has no script for.
pub const UNSCRIPTED: &str = "UNSCRIPTED";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Everything except rejected credentials and malformed requests is worth
    /// another attempt.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, BackendError::Auth { .. } | BackendError::InvalidRequest(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    /// Base64-encoded PNG images, sent before the text.
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn with_png(mut self, png: &[u8]) -> Self {
        self.images
            .push(base64::engine::general_purpose::STANDARD.encode(png));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    /// 1-based chain stage this request belongs to. Routing metadata only,
    /// never sent on the wire.
    pub stage: Option<u8>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// Canonical chat-completions body. Field order is fixed, so equal
    /// requests always serialize to equal bytes.
    pub fn wire_json(&self) -> Vec<u8> {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| {
                let mut content: Vec<Value> = m
                    .images
                    .iter()
                    .map(|b64| {
                        json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:image/png;base64,{b64}") }
                        })
                    })
                    .collect();
                content.push(json!({ "type": "text", "text": m.text }));
                json!({ "role": m.role, "content": content })
            })
            .collect();
        // serde_json's map keeps keys sorted, which is what makes this canonical
        let body = json!({
            "model": self.model,
            "messages": messages,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        serde_json::to_vec(&body).expect("JSON values always serialize")
    }

    pub fn request_hash(&self) -> String {
        hex::encode(Sha256::digest(self.wire_json()))
    }

    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Latency as reported by the backend. The stub reports a fixed value so
    /// transcripts stay reproducible.
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay after the `failed_attempt`-th failure (1-based): exponential,
    /// capped at `max_backoff_ms`.
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        let exp = failed_attempt.saturating_sub(1).min(32);
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64 << exp)
            .min(self.max_backoff_ms.max(self.backoff_base_ms));
        Duration::from_millis(ms)
    }

    /// All delays a fully failing call would sleep through.
    pub fn delays(&self) -> Vec<Duration> {
        (1..self.max_attempts.max(1)).map(|n| self.delay_after(n)).collect()
    }

    /// Runs `call` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T>(
        &self,
        mut call: impl FnMut(u32) -> Result<T, BackendError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_retryable() || attempt >= attempts => return Err(e),
                Err(_) => {
                    sleep(self.delay_after(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "Qwen2-VL-7B-Instruct".into(),
            token_env: Some("VLLM_API_KEY".into()),
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return Err(BackendError::InvalidRequest("timeout must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::InvalidRequest("max_attempts must be at least 1".into()));
        }
        if self.endpoint.is_empty() {
            return Err(BackendError::InvalidRequest("endpoint is empty".into()));
        }
        Ok(())
    }
}

/// Anything that can answer a chat request.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError>;
}

/// Sends one request to the configured endpoint, retrying per its policy.
pub fn complete(req: &ChatRequest, cfg: &BackendConfig) -> Result<Completion, BackendError> {
    HttpBackend::new(cfg.clone())?.complete(req)
}

/// Chat-completions over HTTP(S).
pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn attempt(&self, body: &[u8]) -> Result<String, BackendError> {
        let mut request = self
            .agent
            .post(&self.cfg.endpoint)
            .content_type("application/json");
        if let Some(token) = self
            .cfg
            .token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
        {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send(body).map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(map_ureq_error)?;
        match status {
            200..=299 => extract_reply(&text),
            401 | 403 => Err(BackendError::Auth { status }),
            _ => Err(BackendError::Http {
                status,
                body: text.chars().take(512).collect(),
            }),
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        req.validate()?;
        let body = req.wire_json();
        let start = Instant::now();
        let text = self
            .cfg
            .retry
            .run(|_| self.attempt(&body), std::thread::sleep)?;
        Ok(Completion {
            text,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

fn map_ureq_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
/// Content may be a plain string or a list of typed parts.
pub fn extract_reply(body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    let content = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            if texts.is_empty() {
                Err(BackendError::Protocol("content has no text parts".into()))
            } else {
                Ok(texts.concat())
            }
        }
        _ => Err(BackendError::Protocol("content is neither text nor parts".into())),
    }
}

/// Replies keyed by stage number or by the SHA-256 of the prompt text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubScript {
    #[serde(default)]
    pub stages: BTreeMap<u8, String>,
    #[serde(default)]
    pub prompts: BTreeMap<String, String>,
}

impl StubScript {
    pub fn from_stages<S: Into<String>>(stages: impl IntoIterator<Item = (u8, S)>) -> Self {
        Self {
            stages: stages.into_iter().map(|(k, v)| (k, v.into())).collect(),
            prompts: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty() && self.prompts.is_empty()
    }

    /// `{"stages": {"1": "..."}, "prompts": {"<sha256>": "..."}}`
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Deterministic offline backend.
///
/// A prompt-hash entry wins over a stage entry; anything unscripted gets
/// [`UNSCRIPTED`].
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    script: StubScript,
    fail_from_stage: Option<u8>,
    latency_ms: u64,
}

impl StubBackend {
    pub fn new(script: StubScript) -> Self {
        Self {
            script,
            ..Default::default()
        }
    }

    /// Every request at or after `stage` fails with a transport error.
    pub fn failing_from_stage(mut self, stage: u8) -> Self {
        self.fail_from_stage = Some(stage);
        self
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn reply_for(&self, req: &ChatRequest) -> String {
        if let Some(r) = self.script.prompts.get(&prompt_hash(req.prompt())) {
            return r.clone();
        }
        req.stage
            .and_then(|s| self.script.stages.get(&s))
            .cloned()
            .unwrap_or_else(|| UNSCRIPTED.to_string())
    }
}

impl Backend for StubBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        req.validate()?;
        if let (Some(fail), Some(stage)) = (self.fail_from_stage, req.stage) {
            if stage >= fail {
                return Err(BackendError::Transport(format!(
                    "stub scripted to fail at stage {stage}"
                )));
            }
        }
        Ok(Completion {
            text: self.reply_for(req),
            latency_ms: self.latency_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(prompt: &str, stage: Option<u8>) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(prompt)],
            max_tokens: 16,
            temperature: 0.0,
            stage,
        }
    }

    /// Serves `responses` in order (last one repeats), counting connections.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, body) = responses[n.min(responses.len() - 1)].clone();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                // read headers, then Content-Length bytes of body
                loop {
                    let read = stream.read(&mut chunk).unwrap_or(0);
                    if read == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..read]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(end) = text.find("\r\n\r\n") {
                        let len = text[..end]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= end + 4 + len {
                            break;
                        }
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (format!("http://{addr}/v1/chat/completions"), hits)
    }

    fn cfg(endpoint: String, attempts: u32) -> BackendConfig {
        BackendConfig {
            endpoint,
            model: "m".into(),
            token_env: None,
            timeout_secs: 5.0,
            retry: RetryPolicy {
                max_attempts: attempts,
                backoff_base_ms: 1,
                max_backoff_ms: 4,
            },
        }
    }

    #[test]
    fn wire_format_is_canonical() {
        let req = ChatRequest {
            messages: vec![ChatMessage::user("hi").with_png(&[1, 2, 3])],
            ..request("hi", Some(2))
        };
        let wire = String::from_utf8(req.wire_json()).unwrap();
        assert_eq!(
            wire,
            r#"{"max_tokens":16,"messages":[{"content":[{"image_url":{"url":"data:image/png;base64,AQID"},"type":"image_url"},{"text":"hi","type":"text"}],"role":"user"}],"model":"m","temperature":0.0}"#
        );
        let mut other = req.clone();
        other.stage = Some(5);
        assert_eq!(req.request_hash(), other.request_hash());
    }

    #[test]
    fn stub_replies_by_stage_and_hash() {
        let mut script = StubScript::from_stages([(1, "a kitchen scene")]);
        script.prompts.insert(prompt_hash("special"), "hashed".into());
        let stub = StubBackend::new(script);
        assert_eq!(stub.complete(&request("x", Some(1))).unwrap().text, "a kitchen scene");
        assert_eq!(stub.complete(&request("x", Some(2))).unwrap().text, UNSCRIPTED);
        assert_eq!(stub.complete(&request("special", Some(1))).unwrap().text, "hashed");
    }

    #[test]
    fn stub_failure_scripting() {
        let stub = StubBackend::new(StubScript::from_stages([(1, "ok")])).failing_from_stage(3);
        assert!(stub.complete(&request("x", Some(2))).is_ok());
        assert!(matches!(stub.complete(&request("x", Some(3))), Err(BackendError::Transport(_))));
    }

    #[test]
    fn empty_request_is_rejected() {
        let mut req = request("x", None);
        req.messages.clear();
        assert!(StubBackend::default().complete(&req).is_err());
    }

    #[test]
    fn unreachable_endpoint_exhausts_attempts() {
        // grab a free port, then close it
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut tries = 0;
        let policy = cfg(String::new(), 2).retry;
        let backend = HttpBackend::new(cfg(format!("http://127.0.0.1:{port}/v1"), 2)).unwrap();
        let body = request("x", None).wire_json();
        let result = policy.run(
            |_| {
                tries += 1;
                backend.attempt(&body)
            },
            |_| {},
        );
        assert!(matches!(result, Err(BackendError::Transport(_))));
        assert_eq!(tries, 2);
        assert!(complete(&request("x", None), &cfg(format!("http://127.0.0.1:{port}/v1"), 2)).is_err());
    }

    #[test]
    fn successful_round_trip() {
        let (url, hits) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"REASONING: x ANSWER: Happy"}}]}"#.into(),
        )]);
        let out = complete(&request("x", Some(1)), &cfg(url, 3)).unwrap();
        assert_eq!(out.text, "REASONING: x ANSWER: Happy");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_errors_are_retried_then_succeed() {
        let ok = r#"{"choices":[{"message":{"content":[{"type":"text","text":"fine"}]}}]}"#;
        let (url, hits) = serve(vec![(500, "{}".into()), (429, "{}".into()), (200, ok.into())]);
        let out = complete(&request("x", None), &cfg(url, 3)).unwrap();
        assert_eq!(out.text, "fine");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_stop_at_budget() {
        let (url, hits) = serve(vec![(503, "busy".into())]);
        let err = complete(&request("x", None), &cfg(url, 4)).unwrap_err();
        assert_eq!(err, BackendError::Http { status: 503, body: "busy".into() });
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let (url, hits) = serve(vec![(401, "{}".into())]);
        let err = complete(&request("x", None), &cfg(url, 5)).unwrap_err();
        assert_eq!(err, BackendError::Auth { status: 401 });
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn missing_text_field_is_protocol_error() {
        let (url, _) = serve(vec![(200, r#"{"choices":[{"message":{}}]}"#.into())]);
        let err = complete(&request("x", None), &cfg(url, 1)).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
        assert!(matches!(extract_reply("not json"), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn config_validation() {
        let c = BackendConfig {
            timeout_secs: 0.0,
            ..BackendConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = BackendConfig::default();
        c.retry.max_attempts = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy { max_attempts: 6, backoff_base_ms: 100, max_backoff_ms: 500 };
        let ms: Vec<u64> = p.delays().iter().map(|d| d.as_millis() as u64).collect();
        assert_eq!(ms, vec![100, 200, 400, 500, 500]);
    }
}
