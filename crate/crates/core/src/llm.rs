//! Chat-completions client with retries, rate limiting and a JSONL
//! record/replay cassette.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::{PromptBundle, PromptKind};

pub const API_KEY_VARS: [&str; 2] = ["A11YR_API_KEY", "OPENAI_API_KEY"];
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";

/// Reads the API credential from the environment; never from flags.
pub fn api_key_from_env() -> Option<String> {
    API_KEY_VARS.iter().find_map(|v| std::env::var(v).ok().filter(|k| !k.trim().is_empty()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    #[default]
    Replay,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(format!("unknown gateway mode {other:?} (live, record, replay)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request_digest: String,
    pub kind: PromptKind,
    pub response_text: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub mode: ExchangeMode,
}

fn put(hasher: &mut Sha256, field: &[u8]) {
    hasher.update((field.len() as u64).to_le_bytes());
    hasher.update(field);
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable digest of a bundle. The model id is deliberately not keyed so a
/// cassette survives model configuration changes.
pub fn cassette_key(bundle: &PromptBundle) -> String {
    let mut h = Sha256::new();
    put(&mut h, b"a11yfix-cassette-v1");
    put(&mut h, bundle.kind.as_str().as_bytes());
    put(&mut h, bundle.system_text.as_bytes());
    put(&mut h, bundle.user_text.as_bytes());
    put(&mut h, &(bundle.images.len() as u64).to_le_bytes());
    for image in &bundle.images {
        put(&mut h, sha256_hex(&image.bytes).as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub kind: PromptKind,
    pub model_id: String,
    pub temperature: f64,
    pub response_text: String,
}

impl CassetteEntry {
    pub fn for_bundle(bundle: &PromptBundle, model_id: &str, response_text: &str) -> Self {
        Self {
            digest: cassette_key(bundle),
            kind: bundle.kind,
            model_id: model_id.to_string(),
            temperature: 0.0,
            response_text: response_text.to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cassette miss for request digest {0}")]
    CassetteMiss(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: PathBuf, message: String },
    #[error("http {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gateway misconfigured: {0}")]
    Config(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    /// Loads a cassette; a missing file is an empty cassette.
    pub fn load(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        let err = |message: String| GatewayError::Cassette { path: path.clone(), message };
        match File::open(&path) {
            Ok(file) => {
                for (n, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: CassetteEntry =
                        serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                    entries.entry(entry.digest.clone()).or_insert(entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(err(e.to_string())),
        }
        Ok(Self { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, digest: &str) -> Option<&CassetteEntry> {
        self.entries.get(digest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, entry: CassetteEntry) -> Result<(), GatewayError> {
        if self.entries.contains_key(&entry.digest) {
            return Ok(());
        }
        let err = |message: String| GatewayError::Cassette { path: self.path.clone(), message };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
        }
        let line = serde_json::to_string(&entry).map_err(|e| err(e.to_string()))?;
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| err(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| err(e.to_string()))?;
        file.flush().map_err(|e| err(e.to_string()))?;
        self.entries.insert(entry.digest.clone(), entry);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub url: String,
    pub api_key: Option<String>,
    pub body: serde_json::Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Failed(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<TransportResponse, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder().build().map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportResponse, TransportError> {
        let mut builder = self.client.post(&request.url).timeout(request.timeout).json(&request.body);
        if let Some(key) = &request.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Failed(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| TransportError::Failed(e.to_string()))?;
        Ok(TransportResponse { status, body })
    }
}

/// Transport for hermetic runs: any use is a bug.
pub struct PanickingTransport;

impl Transport for PanickingTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportResponse, TransportError> {
        panic!("network access attempted in a hermetic run: POST {}", request.url);
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model_id: String,
    /// Model for multimodal kinds; defaults to `model_id`.
    pub vision_model_id: Option<String>,
    pub cassette_path: Option<PathBuf>,
    pub timeout: Duration,
    pub retry_delays: Vec<Duration>,
    pub max_in_flight: usize,
    pub requests_per_second: f64,
    pub burst: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key: None,
            model_id: DEFAULT_MODEL.to_string(),
            vision_model_id: None,
            cassette_path: None,
            timeout: Duration::from_secs(120),
            retry_delays: vec![Duration::from_secs(1), Duration::from_secs(4), Duration::from_secs(16)],
            max_in_flight: 4,
            requests_per_second: 2.0,
            burst: 4.0,
        }
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub live_calls: AtomicU64,
    pub replay_hits: AtomicU64,
    pub recorded: AtomicU64,
    pub retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub live_calls: u64,
    pub replay_hits: u64,
    pub recorded: u64,
    pub retries: u64,
}

struct TokenBucket {
    tokens: f64,
    last: Instant,
}

pub struct Gateway {
    config: GatewayConfig,
    cassette: Option<Mutex<Cassette>>,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    stats: GatewayStats,
    in_flight: (Mutex<usize>, Condvar),
    bucket: Mutex<TokenBucket>,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let transport: Arc<dyn Transport> = match config.mode {
            GatewayMode::Replay => Arc::new(PanickingTransport),
            _ => Arc::new(HttpTransport::new()?),
        };
        Self::with_transport(config, transport, Arc::new(ThreadSleeper))
    }

    pub fn with_transport(
        config: GatewayConfig,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, GatewayError> {
        let cassette = match (&config.mode, &config.cassette_path) {
            (GatewayMode::Replay, None) => return Err(GatewayError::Config("replay mode requires a cassette".into())),
            (GatewayMode::Record, None) => return Err(GatewayError::Config("record mode requires a cassette".into())),
            (GatewayMode::Replay, Some(p)) if !p.exists() => {
                return Err(GatewayError::Config(format!("cassette {} does not exist", p.display())))
            }
            (_, Some(p)) => Some(Mutex::new(Cassette::load(p)?)),
            (GatewayMode::Live, None) => None,
        };
        if config.mode != GatewayMode::Replay && config.api_key.is_none() {
            tracing::warn!("no API credential in {:?}; requests are sent unauthenticated", API_KEY_VARS);
        }
        let burst = config.burst.max(1.0);
        Ok(Self {
            cassette,
            transport,
            sleeper,
            stats: GatewayStats::default(),
            in_flight: (Mutex::new(0), Condvar::new()),
            bucket: Mutex::new(TokenBucket { tokens: burst, last: Instant::now() }),
            config,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            live_calls: self.stats.live_calls.load(Ordering::Relaxed),
            replay_hits: self.stats.replay_hits.load(Ordering::Relaxed),
            recorded: self.stats.recorded.load(Ordering::Relaxed),
            retries: self.stats.retries.load(Ordering::Relaxed),
        }
    }

    pub fn model_for(&self, kind: PromptKind) -> &str {
        match (&self.config.vision_model_id, kind.multimodal()) {
            (Some(m), true) => m,
            _ => &self.config.model_id,
        }
    }

    pub fn complete(&self, bundle: &PromptBundle) -> Result<LlmExchange, GatewayError> {
        let digest = cassette_key(bundle);
        let started = Instant::now();
        if let Some(cassette) = &self.cassette {
            let cassette = cassette.lock().expect("cassette lock");
            if let Some(entry) = cassette.get(&digest) {
                self.stats.replay_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(LlmExchange {
                    request_digest: digest,
                    kind: bundle.kind,
                    response_text: entry.response_text.clone(),
                    model_id: entry.model_id.clone(),
                    latency_ms: 0,
                    mode: ExchangeMode::Replay,
                });
            }
            if self.config.mode == GatewayMode::Replay {
                return Err(GatewayError::CassetteMiss(digest));
            }
        }
        let model_id = self.model_for(bundle.kind).to_string();
        let text = self.call_live(bundle, &model_id)?;
        if let Some(cassette) = &self.cassette {
            cassette.lock().expect("cassette lock").append(CassetteEntry {
                digest: digest.clone(),
                kind: bundle.kind,
                model_id: model_id.clone(),
                temperature: 0.0,
                response_text: text.clone(),
            })?;
            self.stats.recorded.fetch_add(1, Ordering::Relaxed);
        }
        Ok(LlmExchange {
            request_digest: digest,
            kind: bundle.kind,
            response_text: text,
            model_id,
            latency_ms: started.elapsed().as_millis() as u64,
            mode: ExchangeMode::Live,
        })
    }

    fn url(&self) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn acquire_rate(&self) {
        if self.config.requests_per_second <= 0.0 {
            return;
        }
        let wait = {
            let mut bucket = self.bucket.lock().expect("bucket lock");
            let now = Instant::now();
            let refill = now.duration_since(bucket.last).as_secs_f64() * self.config.requests_per_second;
            bucket.tokens = (bucket.tokens + refill).min(self.config.burst.max(1.0));
            bucket.last = now;
            bucket.tokens -= 1.0;
            if bucket.tokens >= 0.0 {
                Duration::ZERO
            } else {
                Duration::from_secs_f64(-bucket.tokens / self.config.requests_per_second)
            }
        };
        if !wait.is_zero() {
            self.sleeper.sleep(wait);
        }
    }

    fn call_live(&self, bundle: &PromptBundle, model_id: &str) -> Result<String, GatewayError> {
        let (lock, cvar) = &self.in_flight;
        {
            let mut n = lock.lock().expect("in-flight lock");
            while *n >= self.config.max_in_flight.max(1) {
                n = cvar.wait(n).expect("in-flight lock");
            }
            *n += 1;
        }
        let result = self.call_with_retries(bundle, model_id);
        *lock.lock().expect("in-flight lock") -= 1;
        cvar.notify_one();
        result
    }

    fn call_with_retries(&self, bundle: &PromptBundle, model_id: &str) -> Result<String, GatewayError> {
        let request = ChatRequest {
            url: self.url(),
            api_key: self.config.api_key.clone(),
            body: request_body(bundle, model_id),
            timeout: self.config.timeout,
        };
        let mut attempt = 0;
        loop {
            self.acquire_rate();
            self.stats.live_calls.fetch_add(1, Ordering::Relaxed);
            let response = self.transport.send(&request).map_err(|e| match e {
                TransportError::Timeout => GatewayError::Timeout(self.config.timeout),
                TransportError::Failed(m) => GatewayError::Transport(m),
            })?;
            let retryable = response.status == 429 || (500..600).contains(&response.status);
            if (200..300).contains(&response.status) {
                return parse_completion(&response.body);
            }
            match self.config.retry_delays.get(attempt) {
                Some(delay) if retryable => {
                    tracing::warn!(status = response.status, ?delay, "retrying completion request");
                    self.stats.retries.fetch_add(1, Ordering::Relaxed);
                    self.sleeper.sleep(*delay);
                    attempt += 1;
                }
                _ => return Err(GatewayError::Http { status: response.status, body: truncate(&response.body, 500) }),
            }
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// OpenAI-compatible request body; images travel as data URIs.
pub fn request_body(bundle: &PromptBundle, model_id: &str) -> serde_json::Value {
    let mut messages = Vec::new();
    if !bundle.system_text.is_empty() {
        messages.push(serde_json::json!({"role": "system", "content": bundle.system_text}));
    }
    let content = if bundle.images.is_empty() {
        serde_json::Value::String(bundle.user_text.clone())
    } else {
        let mut parts = vec![serde_json::json!({"type": "text", "text": bundle.user_text})];
        for image in &bundle.images {
            let data = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
            parts.push(serde_json::json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{data}", image.mime)}
            }));
        }
        serde_json::Value::Array(parts)
    };
    messages.push(serde_json::json!({"role": "user", "content": content}));
    serde_json::json!({"model": model_id, "temperature": 0, "messages": messages})
}

pub fn parse_completion(body: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| GatewayError::BadResponse("no choices[0].message.content".into()))?;
    if text.trim().is_empty() {
        return Err(GatewayError::BadResponse("empty completion".into()));
    }
    Ok(text.to_string())
}

/// Completion body in the provider's wire format, for stubs and tests.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}
