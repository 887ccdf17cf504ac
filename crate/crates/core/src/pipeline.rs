//! Run orchestration: detection, visual context, prompting, remediation and
//! verification per target, collected into one run report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use url::Url;

use crate::angular::{self, AngularError, ComponentTriad};
use crate::browser::{self, BrowserError, BrowserSession, Timing, ViewportProfile};
use crate::dom;
use crate::llm::Gateway;
use crate::model::{merge_reports, AuditReport, ViolationKey, ViolationKind};
use crate::patch_angular::{self as pa, PatchError, PlanStatus};
use crate::patch_static::{self as ps, MergeStatus, PatchStatus};
use crate::prompt::{ImagePart, PromptEngine};
use crate::rules::{self, ScanOptions};
use crate::verify::{
    compute_delta, remediation_rate, structural_diff, BuildIntegrity, OutcomeStatus, TargetKind, TargetReport,
    Timings, ViolationDelta, ViolationOutcome,
};
use crate::vision::{self, Describer, ImageCache};

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub out_dir: PathBuf,
    pub webdriver_url: Option<Url>,
    /// Native rules on fetched HTML, no browser.
    pub offline: bool,
    pub image_cache: PathBuf,
    pub build_cmd: Option<String>,
    pub skip_build: bool,
    pub profiles: Vec<ViewportProfile>,
    pub stabilize_budget_ms: u64,
    pub http_timeout: Duration,
    pub parallelism: usize,
    pub run_id: String,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("a11y-out"),
            webdriver_url: None,
            offline: false,
            image_cache: PathBuf::from(vision::DEFAULT_CACHE_DIR),
            build_cmd: None,
            skip_build: false,
            profiles: browser::DEFAULT_PROFILES.to_vec(),
            stabilize_budget_ms: browser::DEFAULT_BUDGET_MS,
            http_timeout: Duration::from_secs(60),
            parallelism: 4,
            run_id: new_run_id(),
        }
    }
}

pub fn new_run_id() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

/// Failures that stop the whole run rather than one target.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Environment(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 64,
            PipelineError::Environment(_) => 69,
        }
    }
}

impl From<BrowserError> for PipelineError {
    fn from(e: BrowserError) -> Self {
        PipelineError::Environment(e.to_string())
    }
}

struct Phases {
    started: Instant,
    mark: Instant,
    phases: BTreeMap<String, u64>,
}

impl Phases {
    fn new() -> Self {
        let now = Instant::now();
        Self { started: now, mark: now, phases: BTreeMap::new() }
    }

    fn end(&mut self, name: &str) {
        let now = Instant::now();
        *self.phases.entry(name.to_string()).or_insert(0) += (now - self.mark).as_millis() as u64;
        self.mark = now;
    }

    fn finish(self) -> Timings {
        Timings { total_ms: self.started.elapsed().as_millis() as u64, phases: self.phases }
    }
}

/// A page to process: its report label, HTML and base URL.
#[derive(Debug, Clone)]
pub struct PageSource {
    pub label: String,
    pub url: Option<Url>,
    pub path: Option<PathBuf>,
}

pub fn page_source(target: &str) -> Result<PageSource, PipelineError> {
    if let Ok(url) = Url::parse(target) {
        match url.scheme() {
            "http" | "https" => return Ok(PageSource { label: target.into(), url: Some(url), path: None }),
            "file" => {
                let path = url.to_file_path().map_err(|_| PipelineError::Usage(format!("bad file URL {target}")))?;
                return Ok(PageSource { label: target.into(), url: Some(url), path: Some(path) });
            }
            _ if target.len() > 2 => {
                return Err(PipelineError::Usage(format!("unsupported target scheme in {target}")));
            }
            _ => {}
        }
    }
    let path = PathBuf::from(target);
    let abs = std::fs::canonicalize(&path).unwrap_or(path.clone());
    let url = Url::from_file_path(&abs).ok();
    Ok(PageSource { label: target.into(), url, path: Some(path) })
}

fn fetch_html(source: &PageSource, timeout: Duration) -> Result<String, String> {
    if let Some(path) = &source.path {
        return std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()));
    }
    let url = source.url.as_ref().ok_or("target has no location")?;
    let client = reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| e.to_string())?;
    let response = client.get(url.as_str()).send().map_err(|e| e.to_string())?;
    if !response.status().is_success() {
        return Err(format!("http {}", response.status().as_u16()));
    }
    response.text().map_err(|e| e.to_string())
}

pub fn scan_options(source: &PageSource) -> ScanOptions {
    ScanOptions { source: source.label.clone(), base_url: source.url.clone(), ..ScanOptions::default() }
}

/// Baseline detection for one page. With a browser, the injected audit of
/// the live DOM is merged with native rules over the same DOM.
struct Detection {
    html: String,
    report: AuditReport,
    session: Option<BrowserSession>,
}

enum DetectError {
    /// The browser itself is unavailable: stops the run.
    Environment(String),
    /// This target could not be loaded or audited.
    Target(String),
}

fn detect(source: &PageSource, opts: &PipelineOptions) -> Result<Detection, DetectError> {
    let scan = scan_options(source);
    if opts.offline || opts.webdriver_url.is_none() {
        let html = fetch_html(source, opts.http_timeout).map_err(DetectError::Target)?;
        let report = rules::scan_with(&html, &scan);
        return Ok(Detection { html, report, session: None });
    }
    let endpoint = opts.webdriver_url.as_ref().expect("checked above");
    let target = |e: BrowserError| DetectError::Target(e.to_string());
    let url = source.url.clone().ok_or_else(|| DetectError::Target("target has no URL for the browser".into()))?;
    let timing = Timing { http_timeout: opts.http_timeout, ..Timing::default() };
    let mut session = browser::open_session_with(endpoint, ViewportProfile::DESKTOP, timing)
        .map_err(|e| DetectError::Environment(e.to_string()))?;
    session.navigate(&url).map_err(target)?;
    let settle = session.stabilize(opts.stabilize_budget_ms).map_err(target)?;
    if settle.timed_out {
        tracing::warn!(target = %source.label, "page did not settle within budget");
    }
    let html = session.get_dom().map_err(target)?;
    let native = rules::scan_with(&html, &scan);
    let mut report = match session.run_audit_raw() {
        Ok(wire) => {
            let injected = browser::report_from_wire(&source.label, &wire, Some(&html));
            merge_reports(&native, &injected).expect("same source")
        }
        Err(e) => {
            tracing::warn!(target = %source.label, error = %e, "injected audit failed, native rules only");
            native
        }
    };
    if let Ok(capture) = session.capture_viewports(&[], opts.stabilize_budget_ms) {
        if capture.horizontal_scroll_at_320 == Some(true) {
            if let Some(v) = browser::reflow_violation(&html) {
                let extra = AuditReport::new(source.label.clone(), report.scanner, [v]);
                report = merge_reports(&report, &extra).expect("same source");
            }
        }
    }
    Ok(Detection { html, report, session: Some(session) })
}

/// Detection only, no gateway.
pub fn audit_page(target: &str, opts: &PipelineOptions) -> Result<(TargetReport, AuditReport), PipelineError> {
    let source = page_source(target)?;
    let mut phases = Phases::new();
    let detection = detect(&source, opts);
    phases.end("detect");
    let (report, errors) = match detection {
        Ok(d) => {
            if let Some(s) = d.session {
                let _ = s.close();
            }
            (d.report, vec![])
        }
        Err(DetectError::Environment(e)) => return Err(PipelineError::Environment(e)),
        Err(DetectError::Target(e)) => (AuditReport::empty(source.label.clone(), crate::model::Scanner::NativeRules), vec![e]),
    };
    let n = report.len() as u64;
    let target = TargetReport {
        source: source.label,
        kind: TargetKind::StaticPage,
        v_initial: n,
        v_final: n,
        rr_percent: None,
        bi: BuildIntegrity::NotApplicable,
        verified: errors.is_empty() && n == 0,
        sfv_flags: vec![],
        outcomes: vec![],
        introduced_keys: vec![],
        artifact: None,
        build: None,
        errors,
        timings: phases.finish(),
    };
    Ok((target, report))
}

/// Alt descriptions keyed by the image-alt violation they answer.
fn describe_images(
    report: &AuditReport,
    html: &str,
    base: Option<&Url>,
    cache: &ImageCache,
    describer: &Describer,
    errors: &mut Vec<String>,
) -> BTreeMap<ViolationKey, vision::AltDescription> {
    let tasks = cache.fetch_all(vision::collect_image_tasks(report, html, base));
    let mut out = BTreeMap::new();
    for task in tasks {
        let Some(v) = report.violations().iter().find(|v| v.kind == ViolationKind::ImageAlt && v.locator == task.locator)
        else {
            continue;
        };
        match describer.describe_image(&task) {
            Ok(desc) => {
                out.insert(v.key(), desc);
            }
            Err(e) => errors.push(format!("{}: no description for {}: {e}", v.locator.css_selector, task.source_url)),
        }
    }
    out
}

/// Full static remediation of one page.
pub fn fix_page(
    target: &str,
    opts: &PipelineOptions,
    gateway: &Gateway,
    engine: &PromptEngine,
    cache: &ImageCache,
    describer: &Describer,
) -> Result<TargetReport, PipelineError> {
    let source = page_source(target)?;
    let scan = scan_options(&source);
    let mut phases = Phases::new();
    let mut errors = Vec::new();
    let detection = match detect(&source, opts) {
        Ok(d) => d,
        Err(DetectError::Environment(e)) => return Err(PipelineError::Environment(e)),
        Err(DetectError::Target(e)) => {
            return Ok(TargetReport {
                source: source.label,
                kind: TargetKind::StaticPage,
                v_initial: 0,
                v_final: 0,
                rr_percent: None,
                bi: BuildIntegrity::NotApplicable,
                verified: false,
                sfv_flags: vec![],
                outcomes: vec![],
                introduced_keys: vec![],
                artifact: None,
                build: None,
                errors: vec![e],
                timings: phases.finish(),
            })
        }
    };
    phases.end("detect");
    let Detection { html, report: baseline, mut session } = detection;
    let original = dom::parse(&html).html().to_string();

    let alts = describe_images(&baseline, &original, source.url.as_ref(), cache, describer, &mut errors);
    phases.end("vision");

    let remediation = ps::remediate_document(&original, &baseline, &scan, gateway, engine, &alts);
    phases.end("patch");

    let merge = ps::responsive_merge(&original, &remediation.document, &scan, gateway, engine);
    match &merge.status {
        MergeStatus::Rejected(r) => errors.push(format!("merge rejected: {r}")),
        MergeStatus::Failed(r) => errors.push(format!("merge failed: {r}")),
        _ => {}
    }
    let final_doc = merge.document;
    phases.end("merge");

    let out_path = ps::artifact_path(&opts.out_dir, &source.label);
    let mut artifact = None;
    match ps::emit_artifact(&final_doc, ps::has_doctype(&html), &out_path) {
        Ok(p) => artifact = Some(p.to_string_lossy().into_owned()),
        Err(e) => errors.push(format!("cannot write artifact {}: {e}", out_path.display())),
    }

    let mut after = rules::scan_with(&final_doc, &scan);
    let injected_keys: Vec<ViolationKey> =
        baseline.keys().difference(&rules::scan_with(&original, &scan).keys()).cloned().collect();
    if !injected_keys.is_empty() {
        after = match reaudit_in_browser(session.as_mut(), artifact.as_deref(), &source.label, &scan, opts) {
            Ok(report) => report,
            Err(e) => {
                // Without a browser re-audit, injected-only findings count as remaining.
                errors.push(format!("re-audit in browser failed: {e}"));
                let kept = baseline.violations().iter().filter(|v| injected_keys.contains(&v.key())).cloned();
                let extra = AuditReport::new(source.label.clone(), baseline.scanner, kept);
                merge_reports(&after, &extra).expect("same source")
            }
        };
    }
    if let Some(s) = session {
        let _ = s.close();
    }
    let delta = compute_delta(&baseline, &after).expect("same source");
    let sfv_flags = structural_diff(&original, &final_doc);
    phases.end("verify");

    let outcomes = baseline
        .violations()
        .iter()
        .map(|v| {
            let key = v.key();
            let record = remediation.records.iter().find(|r| r.violation_key == key);
            let (status, detail) = if delta.fixed_keys.contains(&key) {
                (OutcomeStatus::Fixed, None)
            } else {
                match record {
                    Some(r) if r.status == PatchStatus::Rejected => (OutcomeStatus::Rejected, r.reason.clone()),
                    _ => (OutcomeStatus::Failed, Some("still present after remediation".into())),
                }
            };
            ViolationOutcome {
                key,
                rule_id: v.rule_id.clone(),
                criterion: v.criterion.id().to_string(),
                selector: v.locator.css_selector.clone(),
                status,
                detail,
            }
        })
        .collect();
    Ok(static_target(source.label, &baseline, &after, delta, sfv_flags, outcomes, artifact, errors, phases.finish()))
}

fn reaudit_in_browser(
    session: Option<&mut BrowserSession>,
    artifact: Option<&str>,
    label: &str,
    scan: &ScanOptions,
    opts: &PipelineOptions,
) -> Result<AuditReport, String> {
    let session = session.ok_or("no browser session")?;
    let path = artifact.ok_or("no artifact")?;
    let abs = std::fs::canonicalize(path).map_err(|e| e.to_string())?;
    let url = Url::from_file_path(&abs).map_err(|_| "artifact path is not absolute".to_string())?;
    session.navigate(&url).map_err(|e| e.to_string())?;
    session.stabilize(opts.stabilize_budget_ms).map_err(|e| e.to_string())?;
    let html = session.get_dom().map_err(|e| e.to_string())?;
    let wire = session.run_audit_raw().map_err(|e| e.to_string())?;
    let native = rules::scan_with(&html, scan);
    merge_reports(&native, &browser::report_from_wire(label, &wire, Some(&html))).map_err(|e| e.to_string())
}

#[allow(clippy::too_many_arguments)]
fn static_target(
    source: String,
    baseline: &AuditReport,
    after: &AuditReport,
    delta: ViolationDelta,
    sfv_flags: Vec<crate::verify::SfvFlag>,
    outcomes: Vec<ViolationOutcome>,
    artifact: Option<String>,
    errors: Vec<String>,
    timings: Timings,
) -> TargetReport {
    let v_initial = baseline.len() as u64;
    let v_final = after.len() as u64;
    let introduced_keys: Vec<ViolationKey> = delta.introduced_keys.iter().cloned().collect();
    let verified = artifact.is_some() && introduced_keys.is_empty() && sfv_flags.is_empty();
    TargetReport {
        source,
        kind: TargetKind::StaticPage,
        v_initial,
        v_final,
        rr_percent: remediation_rate(v_initial, v_final).ok(),
        bi: BuildIntegrity::NotApplicable,
        verified,
        sfv_flags,
        outcomes,
        introduced_keys,
        artifact,
        build: None,
        errors,
        timings,
    }
}

/// Runs `f` over `items` on up to `parallelism` threads, keeping input order.
pub fn run_parallel<T: Sync, R: Send>(
    items: &[T],
    parallelism: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallelism.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every item ran")).collect()
}

pub fn fix_pages(
    targets: &[String],
    opts: &PipelineOptions,
    gateway: &Gateway,
    engine: &PromptEngine,
) -> Result<Vec<TargetReport>, PipelineError> {
    let cache = ImageCache::new(&opts.image_cache, opts.http_timeout);
    let describer = Describer::new(gateway, &cache);
    run_parallel(targets, opts.parallelism, |t| fix_page(t, opts, gateway, engine, &cache, &describer))
        .into_iter()
        .collect()
}

fn angular_error(e: AngularError) -> PipelineError {
    match e {
        AngularError::NotAWorkspace(_) => PipelineError::Usage(e.to_string()),
        other => PipelineError::Environment(other.to_string()),
    }
}

fn component_label(root: &Path, triad: &ComponentTriad) -> String {
    let rel = triad.typescript_path.strip_prefix(root).unwrap_or(&triad.typescript_path);
    format!("{}#{}", rel.display(), triad.component_name)
}

/// Static component scans of a workspace, for `audit`.
pub fn audit_workspace(root: &Path) -> Result<Vec<TargetReport>, PipelineError> {
    let ws = angular::load_workspace(root).map_err(angular_error)?;
    let discovery = angular::discover_components(&ws);
    let mut out = Vec::new();
    for triad in &discovery.triads {
        let mut phases = Phases::new();
        let report = angular::static_scan_component(triad);
        phases.end("detect");
        let n = report.len() as u64;
        out.push(TargetReport {
            source: component_label(root, triad),
            kind: TargetKind::AngularComponent,
            v_initial: n,
            v_final: n,
            rr_percent: None,
            bi: BuildIntegrity::NotApplicable,
            verified: n == 0,
            sfv_flags: vec![],
            outcomes: vec![],
            introduced_keys: vec![],
            artifact: None,
            build: None,
            errors: vec![],
            timings: phases.finish(),
        });
    }
    Ok(out)
}

fn reload(root: &Path, triad: &ComponentTriad) -> Result<ComponentTriad, PipelineError> {
    let ws = angular::load_workspace(root).map_err(angular_error)?;
    angular::discover_components(&ws)
        .triads
        .into_iter()
        .find(|t| t.typescript_path == triad.typescript_path)
        .ok_or_else(|| PipelineError::Environment(format!("{} vanished during the run", triad.typescript_path.display())))
}

/// Remediates every component with violations, one at a time, each with
/// its own build check and all-or-nothing write-back.
pub fn fix_workspace(
    root: &Path,
    opts: &PipelineOptions,
    gateway: &Gateway,
    engine: &PromptEngine,
    shots: &[ImagePart],
) -> Result<Vec<TargetReport>, PipelineError> {
    let ws = angular::load_workspace(root).map_err(angular_error)?;
    let build_cmd = opts.build_cmd.clone().or_else(|| ws.default_build_command().map(str::to_string));
    if !opts.skip_build && build_cmd.is_none() {
        return Err(PipelineError::Usage("workspace has no projects to build; pass --build-cmd or --skip-build".into()));
    }
    let discovery = angular::discover_components(&ws);
    for e in &discovery.errors {
        tracing::warn!("{e}");
    }
    let backup = pa::backup_dir(root, &opts.run_id);
    let mut out = Vec::new();
    for triad in &discovery.triads {
        let baseline = angular::static_scan_component(triad);
        if baseline.is_empty() {
            continue;
        }
        let cmd = if opts.skip_build { None } else { build_cmd.as_deref() };
        out.push(fix_component(root, triad, &baseline, cmd, gateway, engine, shots, &backup)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn fix_component(
    root: &Path,
    triad: &ComponentTriad,
    baseline: &AuditReport,
    build_cmd: Option<&str>,
    gateway: &Gateway,
    engine: &PromptEngine,
    shots: &[ImagePart],
    backup: &Path,
) -> Result<TargetReport, PipelineError> {
    let mut phases = Phases::new();
    let label = component_label(root, triad);
    let mut errors = Vec::new();
    let n = baseline.len() as u64;
    let outcome_all = |status: OutcomeStatus, detail: Option<String>| -> Vec<ViolationOutcome> {
        baseline
            .violations()
            .iter()
            .map(|v| ViolationOutcome {
                key: v.key(),
                rule_id: v.rule_id.clone(),
                criterion: v.criterion.id().to_string(),
                selector: v.locator.css_selector.clone(),
                status,
                detail: detail.clone(),
            })
            .collect()
    };
    let unverified = |errors: Vec<String>, outcomes, bi, build, timings| TargetReport {
        source: label.clone(),
        kind: TargetKind::AngularComponent,
        v_initial: n,
        v_final: n,
        rr_percent: remediation_rate(n, n).ok(),
        bi,
        verified: false,
        sfv_flags: vec![],
        outcomes,
        introduced_keys: vec![],
        artifact: None,
        build,
        errors,
        timings,
    };
    let plan = match pa::remediate_component(root, triad, baseline, gateway, engine, shots, backup) {
        Ok(p) => p,
        Err(e) => {
            phases.end("patch");
            let msg = e.to_string();
            return Ok(unverified(vec![msg.clone()], outcome_all(OutcomeStatus::Failed, Some(msg)), BuildIntegrity::NotApplicable, None, phases.finish()));
        }
    };
    phases.end("patch");
    if plan.is_empty() {
        let detail = plan.failures.join("; ");
        return Ok(unverified(plan.failures.clone(), outcome_all(OutcomeStatus::Failed, Some(detail)), BuildIntegrity::NotApplicable, None, phases.finish()));
    }
    errors.extend(plan.failures.iter().cloned());
    let before = pa::digest_sweep(root).map_err(|e| PipelineError::Environment(e.to_string()))?;
    let applied = match pa::apply_with_backup(&plan, triad, root) {
        Ok(a) => a,
        Err(e) => {
            errors.push(e.to_string());
            return Ok(unverified(errors, outcome_all(OutcomeStatus::Failed, Some(e.to_string())), BuildIntegrity::NotApplicable, None, phases.finish()));
        }
    };
    let build = match build_cmd {
        None => None,
        Some(cmd) => match pa::verify_build(root, cmd) {
            Ok(b) => Some(b),
            Err(e @ PatchError::Environment(_)) => {
                let delta = ViolationDelta::from_keys(&baseline.keys(), &baseline.keys());
                let failed = crate::verify::BuildOutcome { command: cmd.into(), exit_code: 127, duration_ms: 0, log_excerpt: String::new(), passed: false };
                pa::finalize_or_rollback(&applied, Some(&failed), &delta, &baseline.keys(), root)
                    .map_err(|e| PipelineError::Environment(e.to_string()))?;
                return Err(PipelineError::Environment(e.to_string()));
            }
            Err(e) => return Err(PipelineError::Environment(e.to_string())),
        },
    };
    phases.end("build");
    let after = angular::static_scan_component(&reload(root, triad)?);
    let delta = compute_delta(baseline, &after).expect("same component source");
    let done = pa::finalize_or_rollback(&applied, build.as_ref(), &delta, &baseline.keys(), root)
        .map_err(|e| PipelineError::Environment(e.to_string()))?;
    errors.extend(done.failures.iter().skip(applied.failures.len()).cloned());
    let after_sweep = pa::digest_sweep(root).map_err(|e| PipelineError::Environment(e.to_string()))?;
    let changed = pa::changed_paths(&before, &after_sweep);
    let owned: Vec<PathBuf> =
        triad.files().iter().map(|p| p.strip_prefix(root).unwrap_or(p).to_path_buf()).collect();
    let consistent = match done.status {
        PlanStatus::RolledBack => changed.is_empty(),
        _ => changed.iter().all(|p| owned.contains(p)),
    };
    if !consistent {
        return Err(PipelineError::Environment(format!("workspace integrity check failed: unexpected changes {changed:?}")));
    }
    phases.end("verify");
    let bi = match &build {
        None => BuildIntegrity::Skipped,
        Some(b) if b.passed => BuildIntegrity::Pass,
        Some(_) => BuildIntegrity::Fail,
    };
    if done.status == PlanStatus::RolledBack {
        let reason = done.failures.last().cloned().unwrap_or_else(|| "rolled back".into());
        return Ok(TargetReport {
            introduced_keys: delta.introduced_keys.iter().cloned().collect(),
            ..unverified(errors, outcome_all(OutcomeStatus::RolledBack, Some(reason)), bi, build, phases.finish())
        });
    }
    let outcomes = baseline
        .violations()
        .iter()
        .map(|v| {
            let fixed = delta.fixed_keys.contains(&v.key());
            ViolationOutcome {
                key: v.key(),
                rule_id: v.rule_id.clone(),
                criterion: v.criterion.id().to_string(),
                selector: v.locator.css_selector.clone(),
                status: if fixed { OutcomeStatus::Fixed } else { OutcomeStatus::Failed },
                detail: (!fixed).then(|| "still present after remediation".to_string()),
            }
        })
        .collect();
    let v_final = after.len() as u64;
    Ok(TargetReport {
        source: label,
        kind: TargetKind::AngularComponent,
        v_initial: n,
        v_final,
        rr_percent: remediation_rate(n, v_final).ok(),
        bi,
        verified: done.status == PlanStatus::Verified,
        sfv_flags: vec![],
        outcomes,
        introduced_keys: vec![],
        artifact: Some(backup.to_string_lossy().into_owned()),
        build,
        errors,
        timings: phases.finish(),
    })
}
