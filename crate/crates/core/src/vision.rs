//! Alternative text for undescribed images: collection, a content-addressed
//! local cache and memoized multimodal descriptions.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::dom;
use crate::llm::{sha256_hex, Gateway, GatewayError};
use crate::model::{AuditReport, NodeLocator, ViolationKind};
use crate::prompt::{ImagePart, PromptContext, PromptEngine};

pub const MAX_ALT_CHARS: usize = 250;
pub const DEFAULT_CACHE_DIR: &str = ".a11y-cache/images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum TaskStatus {
    Pending,
    Cached,
    Described,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTask {
    pub source_url: String,
    pub locator: NodeLocator,
    pub cache_key: String,
    pub status: TaskStatus,
    pub mime: Option<String>,
}

impl ImageTask {
    pub fn new(source_url: impl Into<String>, locator: NodeLocator) -> Self {
        let source_url = source_url.into();
        Self { cache_key: sha256_hex(source_url.as_bytes()), source_url, locator, status: TaskStatus::Pending, mime: None }
    }

    fn fail(&mut self, reason: impl Into<String>) {
        self.status = TaskStatus::Failed(reason.into());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltDescription {
    pub text: String,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AltError {
    #[error("description is empty")]
    Empty,
    #[error("description exceeds {MAX_ALT_CHARS} characters with no sentence boundary")]
    TooLong,
    #[error("description starts with a redundant prefix")]
    RedundantPrefix,
}

impl AltDescription {
    pub fn new(text: impl Into<String>, model_id: impl Into<String>) -> Result<Self, AltError> {
        let text = text.into();
        check_alt(&text)?;
        Ok(Self { text, model_id: model_id.into(), created_at: Utc::now() })
    }
}

pub fn check_alt(text: &str) -> Result<(), AltError> {
    if text.trim().is_empty() {
        return Err(AltError::Empty);
    }
    if text.chars().count() > MAX_ALT_CHARS {
        return Err(AltError::TooLong);
    }
    let lower = text.trim_start().to_lowercase();
    if lower.starts_with("image of") || lower.starts_with("picture of") {
        return Err(AltError::RedundantPrefix);
    }
    Ok(())
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Trims, strips wrapping quotes, collapses whitespace and cuts over-long
/// text at the last sentence boundary within the cap.
pub fn normalize_description(raw: &str) -> Result<String, AltError> {
    let mut text = raw.trim();
    loop {
        let stripped = text.trim_matches(QUOTES).trim();
        if stripped == text {
            break;
        }
        text = stripped;
    }
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let text = if text.chars().count() > MAX_ALT_CHARS {
        let head: String = text.chars().take(MAX_ALT_CHARS).collect();
        let chars: Vec<(usize, char)> = head.char_indices().collect();
        let cut = chars
            .iter()
            .enumerate()
            .filter(|(n, (_, c))| {
                matches!(c, '.' | '!' | '?') && chars.get(n + 1).is_none_or(|(_, next)| next.is_whitespace())
            })
            .map(|(_, (i, _))| i + 1)
            .next_back()
            .ok_or(AltError::TooLong)?;
        head[..cut].to_string()
    } else {
        text
    };
    check_alt(&text)?;
    Ok(text)
}

fn is_decorative(node: &dom_query::NodeRef) -> bool {
    node.attr("alt").is_some_and(|a| a.trim().is_empty())
        || node
            .attr("role")
            .is_some_and(|r| matches!(r.trim().to_ascii_lowercase().as_str(), "presentation" | "none"))
}

/// Resolves `src` against `base`; data URIs and absolute URLs pass through.
pub fn resolve_source(src: &str, base: Option<&Url>) -> Option<String> {
    let src = src.trim();
    if src.is_empty() {
        return None;
    }
    if src.starts_with("data:") {
        return Some(src.to_string());
    }
    if let Ok(abs) = Url::parse(src) {
        return Some(abs.to_string());
    }
    base.and_then(|b| b.join(src).ok()).map(|u| u.to_string())
}

/// One task per image-alt violation whose element is not decorative.
pub fn collect_image_tasks(report: &AuditReport, html: &str, base: Option<&Url>) -> Vec<ImageTask> {
    let doc = dom::parse(html);
    let mut tasks = Vec::new();
    for v in report.violations().iter().filter(|v| v.kind == ViolationKind::ImageAlt) {
        let Some(node) = dom::resolve_locator(&doc, &v.locator) else {
            tracing::warn!(selector = %v.locator.css_selector, "image locator no longer resolves");
            continue;
        };
        if is_decorative(&node) {
            continue;
        }
        let src = dom::attr(&node, "src").unwrap_or_default();
        match resolve_source(&src, base) {
            Some(url) => tasks.push(ImageTask::new(url, v.locator.clone())),
            None => {
                let mut task = ImageTask::new(src.clone(), v.locator.clone());
                task.fail(format!("cannot resolve image source {src:?}"));
                tasks.push(task);
            }
        }
    }
    tasks
}

pub fn sniff_mime(bytes: &[u8]) -> String {
    if let Some(kind) = infer::get(bytes) {
        return kind.mime_type().to_string();
    }
    let head = String::from_utf8_lossy(&bytes[..bytes.len().min(512)]).to_ascii_lowercase();
    if head.contains("<svg") {
        "image/svg+xml".to_string()
    } else {
        "application/octet-stream".to_string()
    }
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn decode_data_uri(uri: &str) -> Result<Vec<u8>, String> {
    let rest = uri.strip_prefix("data:").ok_or("not a data URI")?;
    let (meta, payload) = rest.split_once(',').ok_or("data URI without payload")?;
    if meta.ends_with(";base64") {
        base64::engine::general_purpose::STANDARD
            .decode(payload.trim())
            .map_err(|e| format!("bad base64 payload: {e}"))
    } else {
        Ok(percent_decode(payload))
    }
}

fn percent_decode(s: &str) -> Vec<u8> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Some(b) = std::str::from_utf8(&bytes[i + 1..i + 3]).ok().and_then(|h| u8::from_str_radix(h, 16).ok()) {
                out.push(b);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    out
}

pub struct ImageCache {
    dir: PathBuf,
    client: reqwest::blocking::Client,
    network_fetches: AtomicU64,
}

impl ImageCache {
    pub fn new(dir: impl Into<PathBuf>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder().timeout(timeout).build().expect("http client");
        Self { dir: dir.into(), client, network_fetches: AtomicU64::new(0) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn network_fetches(&self) -> u64 {
        self.network_fetches.load(Ordering::Relaxed)
    }

    pub fn bytes_path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn description_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    fn download(&self, url: &str) -> Result<Vec<u8>, String> {
        if url.starts_with("data:") {
            return decode_data_uri(url);
        }
        let parsed = Url::parse(url).map_err(|e| e.to_string())?;
        match parsed.scheme() {
            "file" => {
                let path = parsed.to_file_path().map_err(|_| format!("bad file URL {url}"))?;
                std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
            }
            "http" | "https" => {
                self.network_fetches.fetch_add(1, Ordering::Relaxed);
                let response = self.client.get(url).send().map_err(|e| {
                    if e.is_timeout() {
                        "timeout".to_string()
                    } else {
                        e.to_string()
                    }
                })?;
                let status = response.status();
                if !status.is_success() {
                    return Err(format!("http {}", status.as_u16()));
                }
                response.bytes().map(|b| b.to_vec()).map_err(|e| e.to_string())
            }
            other => Err(format!("unsupported scheme {other}")),
        }
    }

    /// Stores the image bytes under the task's key unless already present.
    pub fn fetch_to_cache(&self, mut task: ImageTask) -> ImageTask {
        if matches!(task.status, TaskStatus::Failed(_)) {
            return task;
        }
        let path = self.bytes_path(&task.cache_key);
        let bytes = match std::fs::read(&path) {
            Ok(existing) => existing,
            Err(_) => match self.download(&task.source_url) {
                Ok(bytes) if bytes.is_empty() => {
                    task.fail("empty image");
                    return task;
                }
                Ok(bytes) => {
                    if let Err(e) = write_atomic(&path, &bytes) {
                        task.fail(format!("cache write failed: {e}"));
                        return task;
                    }
                    bytes
                }
                Err(reason) => {
                    tracing::warn!(url = %task.source_url, %reason, "image fetch failed");
                    task.fail(reason);
                    return task;
                }
            },
        };
        task.mime = Some(sniff_mime(&bytes));
        task.status = TaskStatus::Cached;
        task
    }

    /// Fetches each distinct key once.
    pub fn fetch_all(&self, tasks: Vec<ImageTask>) -> Vec<ImageTask> {
        let mut done: HashMap<String, ImageTask> = HashMap::new();
        tasks
            .into_iter()
            .map(|task| {
                if let Some(prev) = done.get(&task.cache_key) {
                    return ImageTask { locator: task.locator, ..prev.clone() };
                }
                let fetched = self.fetch_to_cache(task);
                done.insert(fetched.cache_key.clone(), fetched.clone());
                fetched
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VisionError {
    #[error("image task is not cached: {0:?}")]
    NotCached(TaskStatus),
    #[error("cannot read cached image: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("description rejected twice: {0}")]
    Rejected(AltError),
}

/// Memoizes descriptions per cache key, in memory and beside the bytes.
pub struct Describer<'a> {
    gateway: &'a Gateway,
    cache: &'a ImageCache,
    engine: PromptEngine,
    memo: Mutex<BTreeMap<String, AltDescription>>,
    lookups: AtomicU64,
}

impl<'a> Describer<'a> {
    pub fn new(gateway: &'a Gateway, cache: &'a ImageCache) -> Self {
        Self { gateway, cache, engine: PromptEngine::default(), memo: Mutex::new(BTreeMap::new()), lookups: AtomicU64::new(0) }
    }

    /// Gateway lookups performed so far (at most one per distinct key).
    pub fn lookups(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn describe_image(&self, task: &ImageTask) -> Result<AltDescription, VisionError> {
        if !matches!(task.status, TaskStatus::Cached | TaskStatus::Described) {
            return Err(VisionError::NotCached(task.status.clone()));
        }
        if let Some(hit) = self.memo.lock().expect("memo lock").get(&task.cache_key) {
            return Ok(hit.clone());
        }
        let text_path = self.cache.description_path(&task.cache_key);
        if let Ok(saved) = std::fs::read_to_string(&text_path) {
            if let Ok(text) = normalize_description(&saved) {
                let desc = AltDescription::new(text, "cache").map_err(VisionError::Rejected)?;
                self.memo.lock().expect("memo lock").insert(task.cache_key.clone(), desc.clone());
                return Ok(desc);
            }
        }
        let bytes = std::fs::read(self.cache.bytes_path(&task.cache_key))?;
        let mime = task.mime.clone().unwrap_or_else(|| sniff_mime(&bytes));
        let bundle = self
            .engine
            .build(PromptContext::Vision { image: ImagePart { label: task.cache_key.clone(), mime, bytes } })
            .expect("vision prompt has no fields");
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let mut last_err = AltError::Empty;
        for attempt in 0..2 {
            let exchange = self.gateway.complete(&bundle)?;
            match normalize_description(&exchange.response_text) {
                Ok(text) => {
                    let desc = AltDescription::new(text, exchange.model_id).map_err(VisionError::Rejected)?;
                    write_atomic(&text_path, desc.text.as_bytes())?;
                    self.memo.lock().expect("memo lock").insert(task.cache_key.clone(), desc.clone());
                    return Ok(desc);
                }
                Err(e) => {
                    tracing::warn!(key = %task.cache_key, attempt, error = %e, "description rejected");
                    last_err = e;
                }
            }
        }
        Err(VisionError::Rejected(last_err))
    }
}

pub fn screenshot_cache_key(url: &str, viewport: &str) -> String {
    sha256_hex(format!("{url}#{viewport}").as_bytes())
}
