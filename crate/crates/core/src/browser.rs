//! W3C WebDriver client: rendering, stabilization, injected audit, viewport
//! screenshots and DOM serialization.

use std::fmt;
use std::time::{Duration, Instant};

use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use url::Url;

use crate::dom;
use crate::model::{AuditReport, NodeLocator, Scanner, Severity, Violation, ViolationKind, WcagCriterion};

pub const QUIESCENCE_MS: u64 = 1500;
pub const DEFAULT_BUDGET_MS: u64 = 30_000;
pub const POLL_MS: u64 = 250;
/// Window width for the horizontal-scroll reflow check.
pub const REFLOW_WIDTH_PX: u32 = 320;

/// Pinned axe-core release (MPL-2.0, see AXE-LICENSE.txt next to the bundle).
pub const AUDIT_BUNDLE_VERSION: &str = "4.10.2";
pub const AUDIT_BUNDLE: &str = include_str!("../assets/inject/axe.min.js");
pub const SHIM: &str = include_str!("../assets/inject/shim.js");

/// Tags passed to the audit bundle: WCAG 2.0, 2.1 and 2.2 at levels A and AA.
pub const SCOPE_TAGS: [&str; 6] = ["wcag2a", "wcag2aa", "wcag21a", "wcag21aa", "wcag22a", "wcag22aa"];

const SCRIPT_IS_INJECTED: &str = "return !!(window.__a11yfix && window.__a11yfix.version);";
const SCRIPT_INSTALL_PROBE: &str = "return window.__a11yfix.installProbe();";
const SCRIPT_READ_PROBE: &str =
    "return (window.__a11yfix && window.__a11yfix.readProbe) ? window.__a11yfix.readProbe() : JSON.stringify({installed:false});";
const SCRIPT_RUN_AUDIT: &str = "var done = arguments[arguments.length - 1];\
     window.__a11yfix.runAuditSerialize(arguments[0]).then(done, function (e) { done(JSON.stringify({error: String(e)})); });";
const SCRIPT_GET_DOM: &str = "var d = document.doctype;\
     return (d ? '<!DOCTYPE ' + d.name + '>' : '') + document.documentElement.outerHTML;";
const SCRIPT_HAS_HSCROLL: &str =
    "return document.documentElement.scrollWidth > window.innerWidth;";

/// Bundle and shim as one script string.
pub fn injection_payload() -> String {
    format!("{AUDIT_BUNDLE}\n;\n{SHIM}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewportName {
    Mobile,
    Tablet,
    Desktop,
}

impl ViewportName {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewportName::Mobile => "mobile",
            ViewportName::Tablet => "tablet",
            ViewportName::Desktop => "desktop",
        }
    }
}

impl fmt::Display for ViewportName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ViewportName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mobile" => Ok(ViewportName::Mobile),
            "tablet" => Ok(ViewportName::Tablet),
            "desktop" => Ok(ViewportName::Desktop),
            other => Err(format!("unknown viewport {other:?} (expected mobile, tablet or desktop)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewportProfile {
    pub name: ViewportName,
    pub width: u32,
    pub height: u32,
}

impl ViewportProfile {
    pub const MOBILE: ViewportProfile = ViewportProfile { name: ViewportName::Mobile, width: 375, height: 812 };
    pub const TABLET: ViewportProfile = ViewportProfile { name: ViewportName::Tablet, width: 768, height: 1024 };
    pub const DESKTOP: ViewportProfile = ViewportProfile { name: ViewportName::Desktop, width: 1920, height: 1080 };

    pub fn named(name: ViewportName) -> Self {
        match name {
            ViewportName::Mobile => Self::MOBILE,
            ViewportName::Tablet => Self::TABLET,
            ViewportName::Desktop => Self::DESKTOP,
        }
    }
}

pub const DEFAULT_PROFILES: [ViewportProfile; 3] =
    [ViewportProfile::MOBILE, ViewportProfile::TABLET, ViewportProfile::DESKTOP];

#[derive(Debug, thiserror::Error)]
pub enum BrowserError {
    #[error("cannot reach WebDriver at {endpoint}: {message}")]
    Connect { endpoint: String, message: String },
    #[error("WebDriver session error at {endpoint}: {message}")]
    Session { endpoint: String, message: String },
    #[error("script error: {0}")]
    Script(String),
    #[error("audit error: {0}")]
    Audit(String),
    #[error("screenshot failed at {viewport}: {message}")]
    Screenshot { viewport: ViewportName, message: String },
    #[error("unexpected WebDriver response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub quiescence_ms: u64,
    pub poll_ms: u64,
    pub http_timeout: Duration,
}

impl Default for Timing {
    fn default() -> Self {
        Self { quiescence_ms: QUIESCENCE_MS, poll_ms: POLL_MS, http_timeout: Duration::from_secs(60) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeState {
    pub installed: bool,
    #[serde(default)]
    pub last_mutation_epoch_ms: f64,
    #[serde(default)]
    pub pending_requests: u64,
    #[serde(default)]
    pub mutation_count: u64,
    #[serde(default)]
    pub now_epoch_ms: f64,
    #[serde(default)]
    pub ready_state: String,
}

impl ProbeState {
    pub fn quiescent_ms(&self) -> u64 {
        (self.now_epoch_ms - self.last_mutation_epoch_ms).max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilizationReport {
    pub ready_state_complete: bool,
    pub quiescent_ms: u64,
    pub pending_requests: u64,
    pub timed_out: bool,
    pub elapsed_ms: u64,
}

/// One audit result node as serialized by the in-page shim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedViolation {
    pub rule_id: String,
    pub criterion_tag: String,
    pub impact: String,
    pub css_selector: String,
    pub snippet: String,
    pub help_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewportShot {
    pub viewport_name: ViewportName,
    pub width_px: u32,
    pub height_px: u32,
    pub image: Vec<u8>,
    pub captured_at: DateTime<Utc>,
}

#[derive(Debug)]
pub struct CaptureOutcome {
    pub shots: Vec<Result<ViewportShot, BrowserError>>,
    /// Horizontal scrolling at [`REFLOW_WIDTH_PX`]; `None` when the check failed.
    pub horizontal_scroll_at_320: Option<bool>,
    /// Mutations observed by the probe while capturing.
    pub mutation_delta: u64,
}

/// Decodes the shim's audit response: a JSON array, or `{error}`. The value
/// may arrive as JSON text or as an already-decoded object.
pub fn parse_audit_payload(value: &Value) -> Result<Vec<SerializedViolation>, BrowserError> {
    let decoded;
    let value = match value {
        Value::String(text) => {
            decoded = serde_json::from_str::<Value>(text)
                .map_err(|e| BrowserError::Audit(format!("non-JSON audit payload: {e}")))?;
            &decoded
        }
        other => other,
    };
    if let Some(err) = value.get("error") {
        let msg = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
        return Err(BrowserError::Audit(msg));
    }
    let items: Vec<SerializedViolation> = serde_json::from_value(value.clone())
        .map_err(|e| BrowserError::Audit(format!("malformed audit payload: {e}")))?;
    for item in &items {
        if item.css_selector.trim().is_empty() {
            return Err(BrowserError::Audit(format!("{}: empty selector", item.rule_id)));
        }
    }
    Ok(items)
}

pub fn parse_probe(value: &Value) -> Result<ProbeState, BrowserError> {
    let decoded;
    let value = match value {
        Value::String(text) => {
            decoded = serde_json::from_str::<Value>(text)
                .map_err(|e| BrowserError::Script(format!("non-JSON probe state: {e}")))?;
            &decoded
        }
        other => other,
    };
    serde_json::from_value(value.clone()).map_err(|e| BrowserError::Script(format!("malformed probe state: {e}")))
}

/// Maps wire violations into core types. `dom_html` is the live serialization
/// used to resolve selectors into DOM paths; out-of-scope criteria are dropped.
pub fn report_from_wire(source: &str, wire: &[SerializedViolation], dom_html: Option<&str>) -> AuditReport {
    let doc = dom_html.map(dom::parse);
    let violations = wire.iter().filter_map(|w| {
        let criterion = match WcagCriterion::from_tag(&w.criterion_tag) {
            Ok(c) => c,
            Err(err) => {
                tracing::debug!(rule = %w.rule_id, tag = %w.criterion_tag, %err, "skipping untagged audit result");
                return None;
            }
        };
        let node = doc.as_ref().and_then(|d| dom::resolve_unique(d, &w.css_selector).map(|n| (d, n)));
        // Re-anchor to the native selector so identity keys agree across scanners.
        let (css_selector, dom_path) = node
            .as_ref()
            .and_then(|(d, n)| dom::build_locator(d, n).ok())
            .map(|l| (l.css_selector, l.dom_path))
            .unwrap_or_else(|| (w.css_selector.clone(), Vec::new()));
        let tag = node.as_ref().and_then(|(_, n)| dom::tag_of(n)).unwrap_or_else(|| snippet_tag(&w.snippet));
        let impact = Some(w.impact.as_str()).filter(|s| !s.is_empty());
        Some(Violation {
            rule_id: w.rule_id.clone(),
            kind: ViolationKind::infer(&criterion, &tag, ViolationKind::General),
            criterion,
            severity: Severity::from_impact(impact),
            locator: NodeLocator::new(css_selector, dom_path, &w.snippet),
            help_text: w.help_text.clone(),
        })
    });
    AuditReport::new(source, Scanner::InjectedAudit, violations.collect::<Vec<_>>())
}

fn snippet_tag(snippet: &str) -> String {
    snippet
        .trim_start()
        .strip_prefix('<')
        .map(|rest| rest.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '-').collect::<String>())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

/// The Reflow violation recorded when the page scrolls horizontally at 320 px.
pub fn reflow_violation(dom_html: &str) -> Option<Violation> {
    let desc = crate::rules::descriptor("reflow")?;
    let doc = dom::parse(dom_html);
    let html = dom::find_first(&doc, "html")?;
    let locator = dom::build_locator(&doc, &html).ok()?;
    let criterion = desc.criterion();
    Some(Violation {
        rule_id: desc.rule_id.to_string(),
        kind: ViolationKind::infer(&criterion, "html", desc.kind),
        criterion,
        severity: desc.severity,
        locator: NodeLocator { snippet: String::new(), ..locator },
        help_text: format!("Page scrolls horizontally at a viewport width of {REFLOW_WIDTH_PX} CSS px"),
    })
}

pub struct BrowserSession {
    pub session_id: String,
    pub endpoint: Url,
    pub current_url: Option<Url>,
    pub viewport: (u32, u32),
    timing: Timing,
    http: reqwest::blocking::Client,
}

impl fmt::Debug for BrowserSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BrowserSession")
            .field("session_id", &self.session_id)
            .field("endpoint", &self.endpoint.as_str())
            .field("current_url", &self.current_url.as_ref().map(Url::as_str))
            .field("viewport", &self.viewport)
            .finish()
    }
}

fn capabilities() -> Value {
    json!({
        "capabilities": {
            "alwaysMatch": {
                "goog:chromeOptions": { "args": ["--headless=new", "--no-sandbox", "--disable-gpu"] },
                "moz:firefoxOptions": { "args": ["-headless"] },
                "timeouts": { "script": 60000, "pageLoad": 60000 }
            }
        }
    })
}

fn join(endpoint: &Url, path: &str) -> String {
    format!("{}/{}", endpoint.as_str().trim_end_matches('/'), path.trim_start_matches('/'))
}

fn webdriver_call(
    http: &reqwest::blocking::Client,
    endpoint: &Url,
    method: reqwest::Method,
    path: &str,
    body: Option<&Value>,
) -> Result<Value, BrowserError> {
    let mut req = http.request(method, join(endpoint, path));
    if let Some(body) = body {
        req = req.json(body);
    }
    let resp = req.send().map_err(|e| BrowserError::Connect { endpoint: endpoint.to_string(), message: e.to_string() })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| BrowserError::Protocol(e.to_string()))?;
    let parsed: Value = serde_json::from_str(&text)
        .map_err(|e| BrowserError::Protocol(format!("{path}: {e} (status {status})")))?;
    let value = parsed.get("value").cloned().unwrap_or(Value::Null);
    if !status.is_success() || value.get("error").is_some_and(Value::is_string) {
        let kind = value.get("error").and_then(Value::as_str).unwrap_or("unknown error");
        let message = value.get("message").and_then(Value::as_str).unwrap_or("");
        return Err(BrowserError::Session {
            endpoint: endpoint.to_string(),
            message: format!("{path}: {kind}: {message} (status {status})"),
        });
    }
    Ok(value)
}

/// Starts a headless session sized to `profile`.
pub fn open_session(endpoint: &Url, profile: ViewportProfile) -> Result<BrowserSession, BrowserError> {
    open_session_with(endpoint, profile, Timing::default())
}

pub fn open_session_with(endpoint: &Url, profile: ViewportProfile, timing: Timing) -> Result<BrowserSession, BrowserError> {
    let http = reqwest::blocking::Client::builder()
        .timeout(timing.http_timeout)
        .no_proxy()
        .build()
        .map_err(|e| BrowserError::Connect { endpoint: endpoint.to_string(), message: e.to_string() })?;
    let value = webdriver_call(&http, endpoint, reqwest::Method::POST, "session", Some(&capabilities()))?;
    let session_id = value
        .get("sessionId")
        .and_then(Value::as_str)
        .ok_or_else(|| BrowserError::Protocol("new session response lacks sessionId".into()))?
        .to_string();
    let mut session =
        BrowserSession { session_id, endpoint: endpoint.clone(), current_url: None, viewport: (0, 0), timing, http };
    session.set_window_size(profile.width, profile.height)?;
    Ok(session)
}

impl BrowserSession {
    fn call(&self, method: reqwest::Method, path: &str, body: Option<&Value>) -> Result<Value, BrowserError> {
        let path = format!("session/{}/{}", self.session_id, path);
        webdriver_call(&self.http, &self.endpoint, method, &path, body)
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn navigate(&mut self, url: &Url) -> Result<(), BrowserError> {
        self.call(reqwest::Method::POST, "url", Some(&json!({ "url": url.as_str() })))?;
        self.current_url = Some(url.clone());
        Ok(())
    }

    pub fn execute(&self, script: &str, args: Value) -> Result<Value, BrowserError> {
        self.call(reqwest::Method::POST, "execute/sync", Some(&json!({ "script": script, "args": args })))
            .map_err(script_error)
    }

    pub fn execute_async(&self, script: &str, args: Value) -> Result<Value, BrowserError> {
        self.call(reqwest::Method::POST, "execute/async", Some(&json!({ "script": script, "args": args })))
            .map_err(script_error)
    }

    pub fn set_window_size(&mut self, width: u32, height: u32) -> Result<(), BrowserError> {
        self.call(reqwest::Method::POST, "window/rect", Some(&json!({ "width": width, "height": height })))?;
        self.viewport = (width, height);
        Ok(())
    }

    pub fn window_rect(&self) -> Result<(u32, u32), BrowserError> {
        let v = self.call(reqwest::Method::GET, "window/rect", None)?;
        let dim = |k: &str| {
            v.get(k)
                .and_then(Value::as_f64)
                .map(|n| n as u32)
                .ok_or_else(|| BrowserError::Protocol(format!("window rect lacks {k}")))
        };
        Ok((dim("width")?, dim("height")?))
    }

    pub fn screenshot(&self) -> Result<Vec<u8>, BrowserError> {
        let v = self.call(reqwest::Method::GET, "screenshot", None)?;
        let b64 = v.as_str().ok_or_else(|| BrowserError::Protocol("screenshot is not a string".into()))?;
        base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| BrowserError::Protocol(format!("screenshot is not base64: {e}")))
    }

    pub fn close(self) -> Result<(), BrowserError> {
        self.call(reqwest::Method::DELETE, "", None).map(|_| ())
    }

    /// Injects bundle and shim unless the page already has them.
    pub fn ensure_injected(&self) -> Result<(), BrowserError> {
        if self.execute(SCRIPT_IS_INJECTED, json!([]))?.as_bool() == Some(true) {
            return Ok(());
        }
        self.execute(&injection_payload(), json!([]))?;
        if self.execute(SCRIPT_IS_INJECTED, json!([]))?.as_bool() != Some(true) {
            return Err(BrowserError::Script("injected script did not define window.__a11yfix".into()));
        }
        Ok(())
    }

    pub fn install_probe(&self) -> Result<ProbeState, BrowserError> {
        self.ensure_injected()?;
        parse_probe(&self.execute(SCRIPT_INSTALL_PROBE, json!([]))?)
    }

    pub fn read_probe(&self) -> Result<ProbeState, BrowserError> {
        parse_probe(&self.execute(SCRIPT_READ_PROBE, json!([]))?)
    }

    /// Polls the probe until the document is complete, quiet for the
    /// quiescence window and has no pending fetch/XHR, or until `budget_ms`.
    pub fn stabilize(&self, budget_ms: u64) -> Result<StabilizationReport, BrowserError> {
        let start = Instant::now();
        let budget = Duration::from_millis(budget_ms);
        let poll = Duration::from_millis(self.timing.poll_ms.max(1));
        let mut state = self.install_probe()?;
        loop {
            if !state.installed {
                // The page navigated and dropped the probe.
                state = self.install_probe()?;
            }
            let ready = state.ready_state == "complete";
            let quiet = state.quiescent_ms();
            let settled = ready && quiet >= self.timing.quiescence_ms && state.pending_requests == 0;
            let elapsed = start.elapsed();
            if settled || elapsed >= budget {
                return Ok(StabilizationReport {
                    ready_state_complete: ready,
                    quiescent_ms: quiet,
                    pending_requests: state.pending_requests,
                    timed_out: !settled,
                    elapsed_ms: elapsed.as_millis() as u64,
                });
            }
            std::thread::sleep(poll.min(budget - elapsed));
            state = self.read_probe()?;
        }
    }

    pub fn run_audit_raw(&self) -> Result<Vec<SerializedViolation>, BrowserError> {
        self.ensure_injected().map_err(|e| BrowserError::Audit(format!("injection failed: {e}")))?;
        let value = self
            .execute_async(SCRIPT_RUN_AUDIT, json!([SCOPE_TAGS]))
            .map_err(|e| BrowserError::Audit(e.to_string()))?;
        parse_audit_payload(&value)
    }

    /// Runs the injected audit and maps results against the live DOM.
    pub fn run_injected_audit(&self) -> Result<AuditReport, BrowserError> {
        let wire = self.run_audit_raw()?;
        let dom_html = self.get_dom().ok();
        let source = self.current_url.as_ref().map(Url::to_string).unwrap_or_default();
        Ok(report_from_wire(&source, &wire, dom_html.as_deref()))
    }

    pub fn get_dom(&self) -> Result<String, BrowserError> {
        match self.execute(SCRIPT_GET_DOM, json!([]))? {
            Value::String(s) => Ok(s),
            other => Err(BrowserError::Protocol(format!("DOM serialization is not a string: {other}"))),
        }
    }

    pub fn has_horizontal_scroll(&self) -> Result<bool, BrowserError> {
        self.execute(SCRIPT_HAS_HSCROLL, json!([]))?
            .as_bool()
            .ok_or_else(|| BrowserError::Protocol("scroll check did not return a boolean".into()))
    }

    /// Screenshots each profile after resizing and re-stabilizing, then runs
    /// the 320 px reflow check and restores the original window size.
    pub fn capture_viewports(
        &mut self,
        profiles: &[ViewportProfile],
        budget_ms: u64,
    ) -> Result<CaptureOutcome, BrowserError> {
        let original = self.viewport;
        let before = self.read_probe()?.mutation_count;
        let mut shots = Vec::with_capacity(profiles.len());
        for profile in profiles {
            shots.push(self.capture_one(*profile, budget_ms));
        }
        let hscroll = self
            .set_window_size(REFLOW_WIDTH_PX, ViewportProfile::MOBILE.height)
            .and_then(|_| self.stabilize(budget_ms))
            .and_then(|_| self.has_horizontal_scroll());
        let horizontal_scroll_at_320 = match hscroll {
            Ok(flag) => Some(flag),
            Err(err) => {
                tracing::warn!(%err, "reflow check failed");
                None
            }
        };
        if original != (0, 0) {
            self.set_window_size(original.0, original.1)?;
        }
        let after = self.read_probe()?.mutation_count;
        Ok(CaptureOutcome { shots, horizontal_scroll_at_320, mutation_delta: after.saturating_sub(before) })
    }

    fn capture_one(&mut self, profile: ViewportProfile, budget_ms: u64) -> Result<ViewportShot, BrowserError> {
        let fail = |e: BrowserError| BrowserError::Screenshot { viewport: profile.name, message: e.to_string() };
        self.set_window_size(profile.width, profile.height).map_err(fail)?;
        self.stabilize(budget_ms).map_err(fail)?;
        let image = self.screenshot().map_err(fail)?;
        if !infer::image::is_png(&image) {
            return Err(fail(BrowserError::Protocol("screenshot is not a PNG".into())));
        }
        Ok(ViewportShot {
            viewport_name: profile.name,
            width_px: profile.width,
            height_px: profile.height,
            image,
            captured_at: Utc::now(),
        })
    }
}

fn script_error(e: BrowserError) -> BrowserError {
    match e {
        BrowserError::Session { message, .. } if message.contains("javascript error") || message.contains("script") => {
            BrowserError::Script(message)
        }
        other => other,
    }
}
