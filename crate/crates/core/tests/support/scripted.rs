use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use a11yfix_core::llm::{
    completion_body, ChatRequest, Gateway, GatewayConfig, GatewayMode, PanickingTransport, ThreadSleeper, Transport,
    TransportError, TransportResponse,
};

/// The parts of a rendered prompt a scripted responder needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prompt {
    Vision,
    Contrast(String),
    General(String),
    Merge { current: String },
    Template { path: String, content: String },
    Holistic { component: String, html: String, ts: String, styles: String },
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let from = text.find(start).map(|i| i + start.len()).unwrap_or(0);
    let rest = &text[from..];
    rest.find(end).map(|i| &rest[..i]).unwrap_or(rest)
}

fn after<'a>(text: &'a str, marker: &str) -> &'a str {
    text.find(marker).map(|i| &text[i + marker.len()..]).unwrap_or("")
}

pub fn classify(user: &str) -> Prompt {
    if user.starts_with("Describe this image") {
        Prompt::Vision
    } else if user.starts_with("PERFORM A SMART MERGE") {
        Prompt::Merge { current: after(user, "\n\nCURRENT:\n").to_string() }
    } else if user.starts_with("Fix THIS color contrast error") {
        Prompt::Contrast(after(user, "FRAGMENT TO FIX: ").to_string())
    } else if user.starts_with("Fix ALL ") {
        Prompt::Template {
            path: between(user, "TEMPLATE PATH: ", "\n").to_string(),
            content: between(user, "FULL CURRENT CONTENT: ", "\n[OUTPUT CONSTRAINTS]").to_string(),
        }
    } else if user.starts_with("Refactor the component ") {
        Prompt::Holistic {
            component: between(user, "Refactor the component ", " based on").to_string(),
            html: between(user, "\nHTML: ", "\nTypeScript: ").to_string(),
            ts: between(user, "\nTypeScript: ", "\nStyles: ").to_string(),
            styles: between(user, "\nStyles: ", "\n[OUTPUT CONSTRAINTS]").to_string(),
        }
    } else {
        Prompt::General(after(user, "Return ONLY the fixed HTML fragment.\n\n").to_string())
    }
}

fn user_text(request: &ChatRequest) -> String {
    let messages = request.body["messages"].as_array().cloned().unwrap_or_default();
    let user = messages.iter().rev().find(|m| m["role"] == "user").cloned().unwrap_or_default();
    match &user["content"] {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(parts) => {
            parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join("\n")
        }
        _ => String::new(),
    }
}

pub type Responder = dyn Fn(&Prompt) -> String + Send + Sync;

/// Answers prompts with a deterministic script instead of a model.
pub struct ScriptedTransport {
    responder: Box<Responder>,
    pub calls: AtomicU64,
}

impl ScriptedTransport {
    pub fn new(responder: impl Fn(&Prompt) -> String + Send + Sync + 'static) -> Self {
        Self { responder: Box::new(responder), calls: AtomicU64::new(0) }
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let prompt = classify(&user_text(request));
        Ok(TransportResponse { status: 200, body: completion_body(&(self.responder)(&prompt)) })
    }
}

pub fn cassette(name: &str) -> PathBuf {
    super::corpus::fixtures().join("cassettes").join(name)
}

/// Records a fresh cassette by running `drive` against the script.
pub fn record(path: &Path, responder: impl Fn(&Prompt) -> String + Send + Sync + 'static, drive: impl FnOnce(&Gateway)) {
    let _ = std::fs::remove_file(path);
    let config = GatewayConfig {
        mode: GatewayMode::Record,
        cassette_path: Some(path.to_path_buf()),
        requests_per_second: 0.0,
        ..GatewayConfig::default()
    };
    let gateway =
        Gateway::with_transport(config, Arc::new(ScriptedTransport::new(responder)), Arc::new(ThreadSleeper)).unwrap();
    drive(&gateway);
}

/// Replay gateway that panics on any network attempt.
pub fn replay(path: &Path) -> Gateway {
    let config = GatewayConfig { mode: GatewayMode::Replay, cassette_path: Some(path.to_path_buf()), ..GatewayConfig::default() };
    Gateway::with_transport(config, Arc::new(PanickingTransport), Arc::new(ThreadSleeper)).unwrap()
}

pub fn copy_tree(from: &Path, to: &Path) {
    for entry in walkdir::WalkDir::new(from).into_iter().filter_map(Result::ok) {
        let rel = entry.path().strip_prefix(from).unwrap();
        let target = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}
