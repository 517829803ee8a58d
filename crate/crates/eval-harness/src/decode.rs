//! One deterministic decode per instance, with retries on transport
//! failures only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{EvalError, Result};
use crate::template::{ChatMessage, Part, Role};

fn default_max_new_tokens() -> usize {
    2048
}

/// Greedy decoding only: temperature must be zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: default_max_new_tokens(),
            stop: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// `http://host:port/v1`-style base, `local:<checkpoint>` or `scripted`.
    pub base_url: String,
    #[serde(default)]
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    #[serde(default)]
    pub retry_backoff_ms: u64,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: String::new(),
            timeout_secs: 60,
            max_retries: 3,
            concurrency: 1,
            retry_backoff_ms: 200,
            decode: DecodeParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency == 0 {
            return Err(EvalError::Config("concurrency must be at least 1".into()));
        }
        if self.decode.temperature != 0.0 {
            return Err(EvalError::Config(format!(
                "temperature {} requested; decoding is greedy (temperature 0) only",
                self.decode.temperature
            )));
        }
        if self.decode.max_new_tokens == 0 {
            return Err(EvalError::Config("max_new_tokens must be positive".into()));
        }
        if self.timeout_secs == 0 {
            return Err(EvalError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    /// Everything that can change outputs. Concurrency and backoff only
    /// change timing, so they are left out.
    pub fn provenance(&self) -> Value {
        json!({
            "base_url": self.base_url,
            "model": self.model,
            "max_retries": self.max_retries,
            "decode": self.decode,
        })
    }
}

pub struct DecodeRequest<'a> {
    pub instance_id: &'a str,
    pub messages: &'a [ChatMessage],
    pub params: &'a DecodeParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttemptError {
    /// Connection, timeout or server-side failure; worth retrying.
    Transport(String),
    /// The request went through but the reply is unusable; not retried.
    Malformed(String),
}

pub trait Decoder: Send + Sync {
    fn attempt(&self, req: &DecodeRequest) -> std::result::Result<String, AttemptError>;

    /// Identifies the model behind the decoder for provenance hashing.
    fn describe(&self) -> Value;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeOutcome {
    /// The completion, or why there is none.
    pub output: std::result::Result<String, String>,
    pub attempts: u32,
    pub latency_ms: u64,
}

pub fn decode_once(decoder: &dyn Decoder, req: &DecodeRequest, max_retries: u32, backoff_ms: u64) -> DecodeOutcome {
    let started = Instant::now();
    let mut attempts = 0;
    let output = loop {
        attempts += 1;
        match decoder.attempt(req) {
            Ok(text) => break Ok(text),
            Err(AttemptError::Malformed(m)) => break Err(format!("malformed response: {m}")),
            Err(AttemptError::Transport(m)) if attempts > max_retries => {
                break Err(format!("transport failure after {attempts} attempts: {m}"))
            }
            Err(AttemptError::Transport(m)) => {
                log::warn!("{}: attempt {attempts} failed: {m}", req.instance_id);
                std::thread::sleep(Duration::from_millis(backoff_ms * attempts as u64));
            }
        }
    };
    DecodeOutcome {
        output,
        attempts,
        latency_ms: started.elapsed().as_millis() as u64,
    }
}

/// What a scripted model does for one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scripted {
    Reply(String),
    /// Transport failures before the reply succeeds.
    FailThenReply(u32, String),
    AlwaysFail,
    Malformed,
}

/// Answers from a fixed sheet keyed by instance id; unknown ids fail as
/// malformed. Counts every attempt, for resume and retry tests.
#[derive(Debug, Default)]
pub struct ScriptedDecoder {
    pub sheet: BTreeMap<String, Scripted>,
    calls: std::sync::Mutex<BTreeMap<String, u32>>,
    total: AtomicU32,
}

impl ScriptedDecoder {
    pub fn new(sheet: BTreeMap<String, Scripted>) -> Self {
        Self {
            sheet,
            ..Default::default()
        }
    }

    pub fn calls(&self, id: &str) -> u32 {
        self.calls.lock().expect("not poisoned").get(id).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> u32 {
        self.total.load(Ordering::SeqCst)
    }
}

impl Decoder for ScriptedDecoder {
    fn attempt(&self, req: &DecodeRequest) -> std::result::Result<String, AttemptError> {
        self.total.fetch_add(1, Ordering::SeqCst);
        let n = {
            let mut calls = self.calls.lock().expect("not poisoned");
            let c = calls.entry(req.instance_id.to_string()).or_default();
            *c += 1;
            *c
        };
        match self.sheet.get(req.instance_id) {
            Some(Scripted::Reply(s)) => Ok(s.clone()),
            Some(Scripted::FailThenReply(k, s)) if n > *k => Ok(s.clone()),
            Some(Scripted::FailThenReply(..)) | Some(Scripted::AlwaysFail) => {
                Err(AttemptError::Transport("scripted connection reset".into()))
            }
            Some(Scripted::Malformed) | None => Err(AttemptError::Malformed("no scripted reply".into())),
        }
    }

    fn describe(&self) -> Value {
        json!({"kind": "scripted", "sheet": self.sheet})
    }
}

/// Chat-completions client. Images are sent inline as base64 data URLs.
pub struct HttpDecoder {
    endpoint: EndpointConfig,
    image_root: PathBuf,
    agent: ureq::Agent,
    api_key: Option<String>,
}

fn mime_for(path: &str) -> &'static str {
    match Path::new(path).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("ppm" | "pnm") => "image/x-portable-pixmap",
        _ => "application/octet-stream",
    }
}

impl HttpDecoder {
    pub fn new(endpoint: EndpointConfig, image_root: impl Into<PathBuf>) -> Result<Self> {
        endpoint.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint,
            image_root: image_root.into(),
            agent,
            api_key: None,
        })
    }

    /// Sent as a bearer token; never part of provenance.
    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    pub fn request_body(&self, req: &DecodeRequest) -> Result<Value> {
        let mut messages = Vec::new();
        for m in req.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let mut parts = Vec::new();
            for p in &m.content {
                match p {
                    Part::Text { text } => parts.push(json!({"type": "text", "text": text})),
                    Part::Image { path } => {
                        let bytes = std::fs::read(self.image_root.join(path))?;
                        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                        parts.push(json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{};base64,{data}", mime_for(path))}
                        }));
                    }
                }
            }
            messages.push(json!({"role": role, "content": parts}));
        }
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_new_tokens,
        });
        if !req.params.stop.is_empty() {
            body["stop"] = json!(req.params.stop);
        }
        Ok(body)
    }
}

impl Decoder for HttpDecoder {
    fn attempt(&self, req: &DecodeRequest) -> std::result::Result<String, AttemptError> {
        let body = self
            .request_body(req)
            .map_err(|e| AttemptError::Malformed(format!("cannot build request: {e}")))?;
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = request
            .send(body.to_string())
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transport(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(AttemptError::Transport(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(AttemptError::Malformed(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| AttemptError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| AttemptError::Malformed("no choices[0].message.content".into()))
    }

    fn describe(&self) -> Value {
        json!({"kind": "http", "base_url": self.endpoint.base_url, "model": self.endpoint.model})
    }
}
