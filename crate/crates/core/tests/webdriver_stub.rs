//! Browser client against a scripted in-process WebDriver server.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use a11yfix_core::browser::{self, BrowserError, Timing, ViewportName, ViewportProfile, DEFAULT_PROFILES};
use a11yfix_core::model::Scanner;
use a11yfix_core::rules;
use base64::Engine as _;
use serde_json::{json, Value};
use tiny_http::{Response, Server};
use url::Url;

const PNG_1X1: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F, 0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0xF8, 0xCF, 0xC0, 0xF0, 0x1F, 0x00, 0x05, 0x00, 0x01, 0xFF, 0x89, 0x99, 0x3D,
    0x1D, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

fn now_ms() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_millis() as f64
}

#[derive(Clone, Copy)]
enum Activity {
    Quiet,
    /// Mutates forever.
    Perpetual,
    /// One request pending until this epoch, then quiet.
    FetchUntil(f64),
}

#[derive(Clone)]
struct Page {
    html: String,
    activity: Activity,
    audit: Value,
    csp_blocks_injection: bool,
    hscroll_below: Option<u32>,
    broken_screenshot_width: Option<u32>,
}

impl Page {
    fn new(html: &str) -> Self {
        Page {
            html: html.into(),
            activity: Activity::Quiet,
            audit: json!("[]"),
            csp_blocks_injection: false,
            hscroll_below: None,
            broken_screenshot_width: None,
        }
    }
}

#[derive(Default)]
struct SessionState {
    rect: (u32, u32),
    injected: bool,
    probe: bool,
    mutations: u64,
}

struct Driver {
    page: Page,
    sessions: HashMap<String, SessionState>,
    next: u32,
}

fn ok(value: Value) -> (u16, Value) {
    (200, json!({ "value": value }))
}

fn err(status: u16, error: &str, message: &str) -> (u16, Value) {
    (status, json!({ "value": { "error": error, "message": message } }))
}

impl Driver {
    fn probe_state(&self, s: &SessionState) -> Value {
        let now = now_ms();
        let (last, pending) = match self.page.activity {
            Activity::Quiet => (now - 60_000.0, 0),
            Activity::Perpetual => (now, 0),
            Activity::FetchUntil(t) if now < t => (t - 1000.0, 1),
            Activity::FetchUntil(t) => (t, 0),
        };
        json!({
            "installed": true, "last_mutation_epoch_ms": last, "pending_requests": pending,
            "mutation_count": s.mutations, "now_epoch_ms": now, "ready_state": "complete"
        })
    }

    fn handle(&mut self, method: &str, path: &str, body: Value) -> (u16, Value) {
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        if method == "POST" && parts == ["session"] {
            self.next += 1;
            let id = format!("s{}", self.next);
            self.sessions.insert(id.clone(), SessionState::default());
            return ok(json!({ "sessionId": id, "capabilities": {} }));
        }
        let [_, id, rest @ ..] = parts.as_slice() else { return err(404, "unknown command", path) };
        if !self.sessions.contains_key(*id) {
            return err(404, "invalid session id", id);
        }
        let page = self.page.clone();
        let state_json = self.probe_state(&self.sessions[*id]);
        let s = self.sessions.get_mut(*id).unwrap();
        match (method, rest) {
            ("DELETE", []) => {
                self.sessions.remove(*id);
                ok(Value::Null)
            }
            ("POST", ["url"]) => {
                s.injected = false;
                s.probe = false;
                ok(Value::Null)
            }
            ("POST", ["window", "rect"]) => {
                s.rect = (body["width"].as_u64().unwrap() as u32, body["height"].as_u64().unwrap() as u32);
                ok(json!({ "x": 0, "y": 0, "width": s.rect.0, "height": s.rect.1 }))
            }
            ("GET", ["window", "rect"]) => ok(json!({ "x": 0, "y": 0, "width": s.rect.0, "height": s.rect.1 })),
            ("GET", ["screenshot"]) => {
                if page.broken_screenshot_width == Some(s.rect.0) {
                    return err(500, "unknown error", "screen capture failed");
                }
                ok(json!(base64::engine::general_purpose::STANDARD.encode(PNG_1X1)))
            }
            ("POST", ["execute", "sync"]) => {
                let script = body["script"].as_str().unwrap_or_default();
                if script.starts_with("/*! axe") {
                    if page.csp_blocks_injection {
                        return err(500, "javascript error", "Refused to evaluate a string as JavaScript");
                    }
                    s.injected = true;
                    ok(Value::Null)
                } else if script.contains("__a11yfix.version") {
                    ok(json!(s.injected))
                } else if script.contains("installProbe") {
                    s.probe = true;
                    ok(json!(state_json.to_string()))
                } else if script.contains("readProbe") {
                    if s.probe {
                        ok(json!(state_json.to_string()))
                    } else {
                        ok(json!(r#"{"installed":false}"#))
                    }
                } else if script.contains("outerHTML") {
                    ok(json!(page.html))
                } else if script.contains("scrollWidth") {
                    ok(json!(page.hscroll_below.is_some_and(|w| s.rect.0 < w)))
                } else {
                    err(500, "javascript error", "unexpected script")
                }
            }
            ("POST", ["execute", "async"]) => {
                if !s.injected {
                    return err(500, "javascript error", "window.__a11yfix is undefined");
                }
                ok(page.audit.clone())
            }
            _ => err(404, "unknown command", path),
        }
    }
}

fn spawn(page: Page) -> (Url, Arc<Mutex<Driver>>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let port = server.server_addr().to_ip().unwrap().port();
    let driver = Arc::new(Mutex::new(Driver { page, sessions: HashMap::new(), next: 0 }));
    let shared = driver.clone();
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let body: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
            let (status, value) = shared.lock().unwrap().handle(req.method().as_str(), req.url(), body);
            let resp = Response::from_string(value.to_string())
                .with_status_code(status)
                .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
            let _ = req.respond(resp);
        }
    });
    (Url::parse(&format!("http://127.0.0.1:{port}")).unwrap(), driver)
}

fn fast() -> Timing {
    Timing { quiescence_ms: 100, poll_ms: 20, http_timeout: Duration::from_secs(5) }
}


fn page_url() -> Url {
    Url::parse("http://fixture.test/index.html").unwrap()
}

#[test]
fn open_session_sizes_the_window_and_isolates_sessions() {
    let (endpoint, _) = spawn(Page::new("<html></html>"));
    let a = browser::open_session(&endpoint, ViewportProfile::DESKTOP).unwrap();
    let b = browser::open_session(&endpoint, ViewportProfile::MOBILE).unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.window_rect().unwrap(), (1920, 1080));
    assert_eq!(b.window_rect().unwrap(), (375, 812));
    a.close().unwrap();
    assert_eq!(b.window_rect().unwrap(), (375, 812));
}

#[test]
fn static_page_settles_quickly() {
    let (endpoint, _) = spawn(Page::new("<html></html>"));
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    let r = s.stabilize(2_000).unwrap();
    assert!(r.ready_state_complete);
    assert!(!r.timed_out);
    assert!(r.quiescent_ms >= 100);
    assert_eq!(r.pending_requests, 0);
}

#[test]
fn perpetual_mutation_times_out_within_bound() {
    let mut page = Page::new("<html></html>");
    page.activity = Activity::Perpetual;
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    let budget = 300;
    let started = std::time::Instant::now();
    let r = s.stabilize(budget).unwrap();
    let elapsed = started.elapsed().as_millis() as u64;
    assert!(r.timed_out);
    assert!(r.elapsed_ms >= budget);
    // Bound: budget + Q + one poll interval.
    assert!(elapsed <= budget + 100 + 20 + 200, "took {elapsed} ms");
}

#[test]
fn delayed_fetch_settles_with_no_pending_requests() {
    let mut page = Page::new("<html></html>");
    page.activity = Activity::FetchUntil(now_ms() + 500.0);
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    let r = s.stabilize(5_000).unwrap();
    assert!(!r.timed_out);
    assert_eq!(r.pending_requests, 0);
    assert!(r.elapsed_ms >= 400, "settled after {} ms", r.elapsed_ms);
}

const SEEDED: &str = "<html><head><title>t</title></head><body><img src=\"a.png\"></body></html>";

#[test]
fn injected_audit_maps_results_and_agrees_with_native_rules() {
    let mut page = Page::new(SEEDED);
    page.audit = json!(json!([
        { "rule_id": "image-alt", "criterion_tag": "wcag111", "impact": "critical",
          "css_selector": "img", "snippet": "<img src=\"a.png\">", "help_text": "Images must have alternate text" },
        { "rule_id": "html-has-lang", "criterion_tag": "wcag311", "impact": "serious",
          "css_selector": "html", "snippet": "<html>", "help_text": "<html> element must have a lang attribute" }
    ])
    .to_string());
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    s.stabilize(2_000).unwrap();
    let injected = s.run_injected_audit().unwrap();
    assert_eq!(injected.scanner, Scanner::InjectedAudit);
    assert_eq!(injected.source, page_url().to_string());
    let dom = s.get_dom().unwrap();
    let native = rules::scan_document(&dom, Some(&page_url()), &[]);
    for v in injected.violations() {
        assert!(native.contains_key(&v.key()), "native rules miss {} @ {}", v.rule_id, v.locator.css_selector);
    }
}

#[test]
fn clean_page_audit_is_empty() {
    let (endpoint, _) = spawn(Page::new("<html lang=\"en\"><head><title>t</title></head><body></body></html>"));
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    assert!(s.run_injected_audit().unwrap().is_empty());
}

#[test]
fn csp_blocked_injection_is_an_audit_error() {
    let mut page = Page::new(SEEDED);
    page.csp_blocks_injection = true;
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    assert!(matches!(s.run_injected_audit(), Err(BrowserError::Audit(_))));
    // The DOM is still available for the native fallback.
    assert!(s.get_dom().unwrap().contains("a.png"));
}

#[test]
fn bundle_error_object_is_an_audit_error() {
    let mut page = Page::new(SEEDED);
    page.audit = json!(r#"{"error":"audit bundle missing"}"#);
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    let err = s.run_injected_audit().unwrap_err();
    assert!(err.to_string().contains("audit bundle missing"));
}

#[test]
fn capture_returns_one_shot_per_profile_and_flags_fixed_width() {
    let mut page = Page::new("<html><body><div style=\"width:1000px\">wide</div></body></html>");
    page.hscroll_below = Some(1000);
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    s.stabilize(2_000).unwrap();
    let out = s.capture_viewports(&DEFAULT_PROFILES, 2_000).unwrap();
    assert_eq!(out.shots.len(), 3);
    for (shot, profile) in out.shots.iter().zip(DEFAULT_PROFILES) {
        let shot = shot.as_ref().unwrap();
        assert_eq!(shot.viewport_name, profile.name);
        assert_eq!((shot.width_px, shot.height_px), (profile.width, profile.height));
        assert!(!shot.image.is_empty());
    }
    assert_eq!(out.horizontal_scroll_at_320, Some(true));
    assert_eq!(out.mutation_delta, 0);
    assert_eq!(s.window_rect().unwrap(), (1920, 1080));
}

#[test]
fn responsive_page_has_no_horizontal_scroll() {
    let (endpoint, _) = spawn(Page::new("<html><body><p>fluid</p></body></html>"));
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    let out = s.capture_viewports(&[ViewportProfile::MOBILE], 2_000).unwrap();
    assert_eq!(out.horizontal_scroll_at_320, Some(false));
}

#[test]
fn screenshot_failure_is_per_profile() {
    let mut page = Page::new("<html></html>");
    page.broken_screenshot_width = Some(768);
    let (endpoint, _) = spawn(page);
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    let out = s.capture_viewports(&DEFAULT_PROFILES, 2_000).unwrap();
    assert!(out.shots[0].is_ok());
    assert!(matches!(&out.shots[1], Err(BrowserError::Screenshot { viewport: ViewportName::Tablet, .. })));
    assert!(out.shots[2].is_ok());
}

#[test]
fn get_dom_returns_live_serialization() {
    let (endpoint, driver) = spawn(Page::new("<html><head></head><body></body></html>"));
    let mut s = browser::open_session_with(&endpoint, ViewportProfile::DESKTOP, fast()).unwrap();
    s.navigate(&page_url()).unwrap();
    driver.lock().unwrap().page.html = "<html><head></head><body><div id=\"late\"></div></body></html>".into();
    assert!(s.get_dom().unwrap().contains("id=\"late\""));
}

#[test]
fn closed_session_is_a_session_error() {
    let (endpoint, _) = spawn(Page::new("<html></html>"));
    let a = browser::open_session(&endpoint, ViewportProfile::DESKTOP).unwrap();
    let id = a.session_id.clone();
    let b = browser::open_session(&endpoint, ViewportProfile::DESKTOP).unwrap();
    a.close().unwrap();
    assert!(b.session_id != id);
    let mut ghost = browser::open_session(&endpoint, ViewportProfile::DESKTOP).unwrap();
    ghost.session_id = id;
    assert!(matches!(ghost.get_dom(), Err(BrowserError::Session { .. })));
}
