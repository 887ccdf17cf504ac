//! Source-level remediation for Angular components: prompt, plan a
//! per-file write-back, back up, build, and keep or roll back.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::angular::{self, ComponentTriad, TemplateSource};
use crate::llm::{sha256_hex, Gateway, GatewayError};
use crate::model::{AuditReport, Violation, ViolationKey, ViolationKind};
use crate::prompt::{self, ImagePart, PromptContext, PromptEngine, PromptError, PromptKind};
use crate::segments::{self, check_ts_brackets};
use crate::verify::{BuildOutcome, ViolationDelta};
use crate::vision::write_atomic;

pub const BACKUP_DIR: &str = ".a11y-backup";
pub const LOG_EXCERPT_LINES: usize = 200;
const SWEEP_EXCLUDED: [&str; 3] = [BACKUP_DIR, "node_modules", ".git"];

/// Criteria whose fixes usually need component logic, not just markup.
const SCRIPTED_CRITERIA: [&str; 6] = ["2.1.1", "2.1.2", "2.4.3", "2.4.7", "2.4.11", "4.1.3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Planned,
    Applied,
    Verified,
    RolledBack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: PathBuf,
    pub old_digest: String,
    pub new_content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub component_name: String,
    pub prompt_kind: Option<PromptKind>,
    pub file_changes: Vec<FileChange>,
    pub backup_dir: PathBuf,
    pub status: PlanStatus,
    /// Rejected segments and other discarded work, in order.
    pub failures: Vec<String>,
}

impl PatchPlan {
    pub fn is_empty(&self) -> bool {
        self.file_changes.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("no violations to remediate for {0}")]
    EmptyReport(String),
    #[error("{path} changed on disk since planning")]
    DigestMismatch { path: PathBuf },
    #[error("{path} is not part of component {component}")]
    ForeignPath { path: PathBuf, component: String },
    #[error("plan is {0:?}, expected {1:?}")]
    WrongStatus(PlanStatus, PlanStatus),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("build environment: {0}")]
    Environment(String),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PatchError + '_ {
    move |source| PatchError::Io { path: path.to_path_buf(), source }
}

pub fn file_digest(path: &Path) -> Result<String, PatchError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

/// Relative path → SHA-256 of every file in the workspace, skipping backups,
/// dependencies and VCS metadata.
pub fn digest_sweep(root: &Path) -> Result<BTreeMap<PathBuf, String>, PatchError> {
    let mut out = BTreeMap::new();
    let walker = walkdir::WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| {
        e.depth() == 0 || !SWEEP_EXCLUDED.iter().any(|x| e.file_name() == *x)
    });
    for entry in walker {
        let entry = entry.map_err(|e| PatchError::Io { path: root.to_path_buf(), source: e.into() })?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).unwrap_or(entry.path()).to_path_buf();
            out.insert(rel, file_digest(entry.path())?);
        }
    }
    Ok(out)
}

/// Paths whose digest differs between two sweeps, including added and removed files.
pub fn changed_paths(before: &BTreeMap<PathBuf, String>, after: &BTreeMap<PathBuf, String>) -> BTreeSet<PathBuf> {
    let keys: BTreeSet<&PathBuf> = before.keys().chain(after.keys()).collect();
    keys.into_iter().filter(|k| before.get(*k) != after.get(*k)).cloned().collect()
}

/// Template-only violations go through the template prompt; anything that
/// implicates styles or scripted behavior needs the whole component.
pub fn needs_holistic(violations: &[Violation]) -> bool {
    violations
        .iter()
        .any(|v| v.kind == ViolationKind::Contrast || SCRIPTED_CRITERIA.contains(&v.criterion.id()))
}

pub fn backup_dir(root: &Path, run_id: &str) -> PathBuf {
    root.join(BACKUP_DIR).join(run_id)
}

struct Planner<'a> {
    triad: &'a ComponentTriad,
    changes: BTreeMap<PathBuf, String>,
    failures: Vec<String>,
}

impl Planner<'_> {
    fn fail(&mut self, what: impl Into<String>) {
        let what = what.into();
        tracing::warn!(component = %self.triad.component_name, "{what}");
        self.failures.push(what);
    }

    fn current(&self, path: &Path) -> String {
        if let Some(c) = self.changes.get(path) {
            return c.clone();
        }
        if path == self.triad.typescript_path {
            self.triad.typescript_content.clone()
        } else if Some(path) == self.triad.styles_path.as_deref() {
            self.triad.styles_content.clone()
        } else {
            self.triad.template_content.clone()
        }
    }

    fn template(&mut self, body: &str, elisions: &[String]) {
        if segments::is_unchanged(body) {
            return;
        }
        let body = match prompt::expand_elisions(body, elisions) {
            Ok(b) => b,
            Err(e) => return self.fail(format!("TEMPLATE rejected: {e}")),
        };
        if let Err(e) = segments::validate_html_segment(&body) {
            return self.fail(format!("TEMPLATE rejected: {e}"));
        }
        match &self.triad.template {
            TemplateSource::File(p) => {
                self.changes.insert(p.clone(), with_trailing_newline(&body, &self.triad.template_content));
            }
            TemplateSource::Inline { .. } => {
                let ts = self.current(&self.triad.typescript_path);
                match angular::splice_inline_template(&ts, &body) {
                    Some(next) => {
                        self.changes.insert(self.triad.typescript_path.clone(), next);
                    }
                    None => self.fail("TEMPLATE rejected: inline template literal not found"),
                }
            }
        }
    }

    fn typescript(&mut self, body: &str) {
        if segments::is_unchanged(body) {
            return;
        }
        if let Err(e) = segments::validate_typescript_segment(body, Some(&self.triad.component_name)) {
            return self.fail(format!("TYPESCRIPT rejected: {e}"));
        }
        self.changes.insert(
            self.triad.typescript_path.clone(),
            with_trailing_newline(body, &self.triad.typescript_content),
        );
    }

    fn styles(&mut self, body: &str) {
        if segments::is_unchanged(body) {
            return;
        }
        let Some(path) = self.triad.styles_path.clone() else {
            if body.trim().is_empty() {
                return;
            }
            return self.fail("STYLES rejected: component has no stylesheet file");
        };
        if let Err(e) = check_ts_brackets(body) {
            return self.fail(format!("STYLES rejected: {e}"));
        }
        self.changes.insert(path, with_trailing_newline(body, &self.triad.styles_content));
    }
}

fn with_trailing_newline(body: &str, original: &str) -> String {
    let mut s = body.to_string();
    if original.ends_with('\n') && !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

/// Prompts for a corrected component and plans the resulting file changes.
/// Rejected segments are recorded as failures and produce no change. Paths
/// in prompts are relative to `root` so recorded exchanges stay portable.
pub fn remediate_component(
    root: &Path,
    triad: &ComponentTriad,
    report: &AuditReport,
    gateway: &Gateway,
    engine: &PromptEngine,
    shots: &[ImagePart],
    backup_dir: &Path,
) -> Result<PatchPlan, PatchError> {
    if report.is_empty() {
        return Err(PatchError::EmptyReport(triad.component_name.clone()));
    }
    let violations = report.violations();
    let holistic = needs_holistic(violations);
    let full = triad.template_path();
    let template_path = full.strip_prefix(root).unwrap_or(&full).to_string_lossy().into_owned();
    let ctx = if holistic {
        PromptContext::AngularHolistic {
            component_name: &triad.component_name,
            violations,
            template_content: &triad.template_content,
            typescript_content: &triad.typescript_content,
            styles_content: &triad.styles_content,
            shots: shots.to_vec(),
        }
    } else {
        PromptContext::AngularTemplate {
            template_path: &template_path,
            violations,
            template_content: &triad.template_content,
            targets: violations.iter().filter_map(|v| angular::raw_span(&triad.template_content, v)).collect(),
        }
    };
    let bundle = engine.build(ctx)?;
    let exchange = gateway.complete(&bundle)?;
    let mut planner = Planner { triad, changes: BTreeMap::new(), failures: Vec::new() };
    match segments::parse_segments(&exchange.response_text, &bundle.expected) {
        Err(e) => planner.fail(format!("response rejected: {e}")),
        Ok(segs) => {
            // TYPESCRIPT first so an inline template splices into the new file.
            if let Some(ts) = segs.typescript.as_deref() {
                planner.typescript(ts);
            }
            if let Some(t) = segs.template.as_deref() {
                planner.template(t, &bundle.elisions);
            }
            if let Some(s) = segs.styles.as_deref() {
                planner.styles(s);
            }
        }
    }
    let mut file_changes = Vec::new();
    for (path, new_content) in planner.changes.clone() {
        let old = std::fs::read(&path).map_err(io_err(&path))?;
        if old == new_content.as_bytes() {
            continue;
        }
        file_changes.push(FileChange { old_digest: sha256_hex(&old), path, new_content });
    }
    if file_changes.is_empty() && planner.failures.is_empty() {
        planner.failures.push("response changed no files".into());
    }
    Ok(PatchPlan {
        component_name: triad.component_name.clone(),
        prompt_kind: Some(bundle.kind),
        file_changes,
        backup_dir: backup_dir.to_path_buf(),
        status: PlanStatus::Planned,
        failures: planner.failures,
    })
}

fn backup_path(plan: &PatchPlan, root: &Path, path: &Path) -> PathBuf {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let rel: PathBuf = rel.components().filter(|c| matches!(c, std::path::Component::Normal(_))).collect();
    plan.backup_dir.join(rel)
}

/// Backs up every target, then writes each file atomically. Digests are
/// checked for all files before anything is written.
pub fn apply_with_backup(plan: &PatchPlan, triad: &ComponentTriad, root: &Path) -> Result<PatchPlan, PatchError> {
    if plan.status != PlanStatus::Planned {
        return Err(PatchError::WrongStatus(plan.status, PlanStatus::Planned));
    }
    let owned = triad.files();
    for change in &plan.file_changes {
        if !owned.contains(&change.path) {
            return Err(PatchError::ForeignPath { path: change.path.clone(), component: triad.component_name.clone() });
        }
        if file_digest(&change.path)? != change.old_digest {
            return Err(PatchError::DigestMismatch { path: change.path.clone() });
        }
    }
    for change in &plan.file_changes {
        let original = std::fs::read(&change.path).map_err(io_err(&change.path))?;
        let dest = backup_path(plan, root, &change.path);
        write_atomic(&dest, &original).map_err(io_err(&dest))?;
    }
    let mut applied = plan.clone();
    applied.status = PlanStatus::Applied;
    for change in &plan.file_changes {
        if let Err(source) = write_atomic(&change.path, change.new_content.as_bytes()) {
            restore(&applied, root)?;
            return Err(PatchError::Io { path: change.path.clone(), source });
        }
    }
    Ok(applied)
}

fn restore(plan: &PatchPlan, root: &Path) -> Result<(), PatchError> {
    for change in &plan.file_changes {
        let src = backup_path(plan, root, &change.path);
        let bytes = std::fs::read(&src)
            .map_err(|e| PatchError::Integrity(format!("backup {} unreadable: {e}", src.display())))?;
        if sha256_hex(&bytes) != change.old_digest {
            return Err(PatchError::Integrity(format!("backup {} does not match the original digest", src.display())));
        }
        write_atomic(&change.path, &bytes).map_err(io_err(&change.path))?;
    }
    Ok(())
}

fn tail_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

/// Runs the build command through the shell in the workspace root.
pub fn verify_build(root: &Path, command: &str) -> Result<BuildOutcome, PatchError> {
    let started = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(format!("exec 2>&1; {command}"))
        .current_dir(root)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| PatchError::Environment(format!("cannot start `{command}`: {e}")))?;
    let mut log = Vec::new();
    if let Some(mut out) = child.stdout.take() {
        out.read_to_end(&mut log).map_err(|e| PatchError::Environment(e.to_string()))?;
    }
    let status = child.wait().map_err(|e| PatchError::Environment(e.to_string()))?;
    let exit_code = status.code().unwrap_or(-1);
    let log = String::from_utf8_lossy(&log);
    if exit_code == 127 {
        return Err(PatchError::Environment(format!("build command not found: {}", tail_lines(&log, 3))));
    }
    Ok(BuildOutcome {
        command: command.to_string(),
        exit_code,
        duration_ms: started.elapsed().as_millis() as u64,
        log_excerpt: tail_lines(&log, LOG_EXCERPT_LINES),
        passed: exit_code == 0,
    })
}

/// Keeps the applied changes only if the build passed (or was skipped) and
/// the rescan is regression-free; otherwise restores every file from backup.
/// A skipped build leaves a kept plan `Applied`, never `Verified`.
pub fn finalize_or_rollback(
    plan: &PatchPlan,
    build: Option<&BuildOutcome>,
    delta: &ViolationDelta,
    original: &BTreeSet<ViolationKey>,
    root: &Path,
) -> Result<PatchPlan, PatchError> {
    if plan.status != PlanStatus::Applied {
        return Err(PatchError::WrongStatus(plan.status, PlanStatus::Applied));
    }
    let build_ok = build.is_none_or(|b| b.passed);
    let remaining_ok = delta.remaining_keys.iter().all(|k| original.contains(k));
    let mut out = plan.clone();
    if build_ok && delta.introduced_keys.is_empty() && remaining_ok {
        out.status = if build.is_some() { PlanStatus::Verified } else { PlanStatus::Applied };
        return Ok(out);
    }
    if !build_ok {
        out.failures.push(format!("build failed (exit {})", build.map_or(-1, |b| b.exit_code)));
    }
    if !delta.introduced_keys.is_empty() {
        out.failures.push(format!("rescan found {} new violation(s)", delta.introduced_keys.len()));
    }
    restore(plan, root)?;
    out.status = PlanStatus::RolledBack;
    Ok(out)
}
