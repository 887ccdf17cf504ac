//! Static-page remediation: per-violation node surgery, alt injection,
//! the final merge pass and artifact emission.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::dom;
use crate::llm::{Gateway, GatewayError};
use crate::model::{AuditReport, NodeLocator, Violation, ViolationKey, ViolationKind};
use crate::prompt::{PromptContext, PromptEngine, PromptError, PromptKind};
use crate::rules::{self, style::parse_declarations, ScanOptions};
use crate::segments::{self, Expected, StructuralError};
use crate::verify;
use crate::vision::{self, AltDescription};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchStatus {
    Planned,
    Applied,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomPatch {
    pub violation_key: ViolationKey,
    pub rule_id: String,
    pub locator: NodeLocator,
    pub original_fragment: String,
    pub fixed_fragment: String,
    pub status: PatchStatus,
    pub prompt_kind: Option<PromptKind>,
    /// Selector of the replacement node once applied.
    pub applied_selector: Option<String>,
    pub reason: Option<String>,
}

impl DomPatch {
    fn reject(mut self, reason: impl Into<String>) -> Self {
        self.status = PatchStatus::Rejected;
        self.reason = Some(reason.into());
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("stale locator: {0}")]
    StaleLocator(String),
    #[error("no alt description available for {0}")]
    NoDescription(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("patch is not planned: {0:?}")]
    NotPlanned(PatchStatus),
}

/// Targets on these elements are patched as a document shell: root and
/// body attributes plus the head, never the body content.
fn is_shell_tag(tag: &str) -> bool {
    matches!(tag, "html" | "head" | "body")
}

fn attrs_text(node: &dom_query::NodeRef) -> String {
    node.attrs()
        .iter()
        .map(|a| format!(" {}=\"{}\"", a.name.local, html_escape_attr(&a.value)))
        .collect()
}

fn html_escape_attr(v: &str) -> String {
    v.replace('&', "&amp;").replace('"', "&quot;")
}

fn document_shell(doc: &dom_query::Document) -> Option<String> {
    let html = dom::find_first(doc, "html")?;
    let head = dom::find_first(doc, "head").map(|h| h.inner_html().to_string()).unwrap_or_default();
    let body_attrs = dom::find_first(doc, "body").map(|b| attrs_text(&b)).unwrap_or_default();
    Some(format!("<html{}><head>{head}</head><body{body_attrs}></body></html>", attrs_text(&html)))
}

fn single_root_element(fragment: &str) -> Result<(), String> {
    let doc = dom_query::Document::fragment(fragment);
    let root = doc.root();
    let container = match root.first_element_child() {
        Some(first) if dom::tag_of(&first).as_deref() == Some("html") => first,
        _ => root,
    };
    let elements = container.element_children().len();
    let stray_text = container.children().iter().any(|c| c.is_text() && !c.text().trim().is_empty());
    if elements != 1 || stray_text {
        return Err(format!("fragment must be exactly one element, found {elements}"));
    }
    Ok(())
}

/// Contrast fixes may only change text color: everything except `color`
/// declarations and `color` attributes must be byte-identical.
pub fn contrast_guard(original: &str, fixed: &str) -> Result<(), String> {
    let a = dom::parse(original);
    let b = dom::parse(fixed);
    let (ea, eb) = (dom::elements(&a), dom::elements(&b));
    if ea.len() != eb.len() {
        return Err(format!("element count changed ({} -> {})", ea.len(), eb.len()));
    }
    for (x, y) in ea.iter().zip(&eb) {
        if dom::tag_of(x) != dom::tag_of(y) {
            return Err(format!("element changed from {:?} to {:?}", dom::tag_of(x), dom::tag_of(y)));
        }
        let (ax, ay) = (guarded_attrs(x), guarded_attrs(y));
        if ax != ay {
            return Err(format!("non-color change on <{}>", dom::tag_of(x).unwrap_or_default()));
        }
        if dom::own_text(x) != dom::own_text(y) {
            return Err("text content changed".into());
        }
    }
    Ok(())
}

fn guarded_attrs(node: &dom_query::NodeRef) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for a in node.attrs() {
        let name = a.name.local.to_string();
        match name.as_str() {
            "color" => {}
            "style" => {
                let kept: Vec<String> = parse_declarations(&a.value)
                    .into_iter()
                    .filter(|(p, _)| p != "color")
                    .map(|(p, v)| format!("{p}:{v}"))
                    .collect();
                if !kept.is_empty() {
                    out.insert(name, kept.join(";"));
                }
            }
            _ => {
                out.insert(name, a.value.to_string());
            }
        }
    }
    out
}

/// Plans one fix against the current document text.
pub fn plan_fix(
    violation: &Violation,
    dom_text: &str,
    gateway: &Gateway,
    engine: &PromptEngine,
    alts: &BTreeMap<ViolationKey, AltDescription>,
) -> Result<DomPatch, PatchError> {
    let doc = dom::parse(dom_text);
    let node = dom::resolve_locator(&doc, &violation.locator)
        .ok_or_else(|| PatchError::StaleLocator(violation.locator.css_selector.clone()))?;
    let tag = dom::tag_of(&node).unwrap_or_default();
    let shell = is_shell_tag(&tag);
    let original_fragment = if shell {
        document_shell(&doc).ok_or_else(|| PatchError::StaleLocator("document has no root".into()))?
    } else {
        node.html().to_string()
    };
    let mut patch = DomPatch {
        violation_key: violation.key(),
        rule_id: violation.rule_id.clone(),
        locator: violation.locator.clone(),
        original_fragment: original_fragment.clone(),
        fixed_fragment: String::new(),
        status: PatchStatus::Planned,
        prompt_kind: None,
        applied_selector: None,
        reason: None,
    };
    if violation.kind == ViolationKind::ImageAlt && !shell {
        let alt = alts.get(&patch.violation_key).ok_or_else(|| PatchError::NoDescription(violation.locator.css_selector.clone()))?;
        node.set_attr("alt", &alt.text);
        patch.fixed_fragment = node.html().to_string();
        return Ok(patch);
    }
    let ctx = if violation.kind == ViolationKind::Contrast && !shell {
        PromptContext::Contrast { description: &violation.help_text, original_fragment: &original_fragment }
    } else {
        PromptContext::General { help_text: &violation.help_text, fragment: &original_fragment }
    };
    let bundle = engine.build(ctx)?;
    patch.prompt_kind = Some(bundle.kind);
    let exchange = gateway.complete(&bundle)?;
    let fixed = match segments::parse_segments(&exchange.response_text, &Expected::FragmentOnly) {
        Ok(s) => s.fragment.unwrap_or_default(),
        Err(e) => return Ok(patch.reject(format!("unparseable response: {e}"))),
    };
    patch.fixed_fragment = fixed.trim().to_string();
    if let Err(e) = validate_fragment(&patch.fixed_fragment, shell) {
        return Ok(patch.reject(e));
    }
    if violation.kind == ViolationKind::Contrast && !shell {
        if let Err(e) = contrast_guard(&original_fragment, &patch.fixed_fragment) {
            return Ok(patch.reject(format!("contrast fix changed more than text color: {e}")));
        }
    }
    Ok(patch)
}

fn validate_fragment(fragment: &str, shell: bool) -> Result<(), String> {
    segments::validate_html_segment(fragment).map_err(|e: StructuralError| e.to_string())?;
    if shell {
        let doc = dom::parse(fragment);
        if dom::find_first(&doc, "html").is_none() {
            return Err("document shell response lacks <html>".into());
        }
        Ok(())
    } else {
        single_root_element(fragment)
    }
}

/// Replaces the patch's node, re-resolving once via the DOM path when the
/// selector has drifted. Returns the new document text and the applied patch.
pub fn apply_patch(dom_text: &str, patch: &DomPatch) -> Result<(String, DomPatch), PatchError> {
    if patch.status != PatchStatus::Planned {
        return Err(PatchError::NotPlanned(patch.status));
    }
    let doc = dom::parse(dom_text);
    let by_selector = dom::resolve_unique(&doc, &patch.locator.css_selector);
    let tag = by_selector.as_ref().and_then(dom::tag_of).unwrap_or_default();
    let mut applied = patch.clone();
    if is_shell_tag(&tag) || patch.original_fragment.starts_with("<html") && patch.locator.depth() <= 2 {
        apply_shell(&doc, &patch.fixed_fragment)?;
        applied.status = PatchStatus::Applied;
        applied.applied_selector = Some(patch.locator.css_selector.clone());
        return Ok((doc.html().to_string(), applied));
    }
    let matches_original = |n: &dom_query::NodeRef| n.html().as_ref() == patch.original_fragment;
    let node = by_selector
        .filter(|n| matches_original(n))
        .or_else(|| dom::resolve_path(&doc, &patch.locator.dom_path).filter(|n| matches_original(n)))
        .ok_or_else(|| PatchError::StaleLocator(patch.locator.css_selector.clone()))?;
    let path = dom::dom_path(&node);
    node.replace_with_html(patch.fixed_fragment.as_str());
    let replacement = dom::resolve_path(&doc, &path)
        .ok_or_else(|| PatchError::StaleLocator(format!("replacement for {} not found", patch.locator.css_selector)))?;
    applied.applied_selector = dom::build_locator(&doc, &replacement).ok().map(|l| l.css_selector);
    applied.status = PatchStatus::Applied;
    Ok((doc.html().to_string(), applied))
}

fn apply_shell(doc: &dom_query::Document, shell: &str) -> Result<(), PatchError> {
    let fixed = dom::parse(shell);
    let stale = || PatchError::StaleLocator("document shell".into());
    for tag in ["html", "body"] {
        let (Some(target), Some(source)) = (dom::find_first(doc, tag), dom::find_first(&fixed, tag)) else {
            return Err(stale());
        };
        for a in source.attrs() {
            target.set_attr(&a.name.local, &a.value);
        }
    }
    let (Some(head), Some(new_head)) = (dom::find_first(doc, "head"), dom::find_first(&fixed, "head")) else {
        return Err(stale());
    };
    head.set_html(new_head.inner_html());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch: Option<DomPatch>,
    pub violation_key: ViolationKey,
    pub rule_id: String,
    pub selector: String,
    pub criterion: String,
    pub status: PatchStatus,
    pub reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DocumentRemediation {
    pub document: String,
    pub records: Vec<PatchRecord>,
}

/// Patches violations one at a time, deepest first, re-scanning after each
/// applied patch. A patch that introduces a violation key is reverted.
pub fn remediate_document(
    html: &str,
    report: &AuditReport,
    scan: &ScanOptions,
    gateway: &Gateway,
    engine: &PromptEngine,
    alts: &BTreeMap<ViolationKey, AltDescription>,
) -> DocumentRemediation {
    let mut order: Vec<&Violation> = report.violations().iter().collect();
    order.sort_by(|a, b| {
        b.locator.depth().cmp(&a.locator.depth()).then_with(|| b.locator.position().cmp(&a.locator.position()))
    });
    let mut current = dom::parse(html).html().to_string();
    let mut current_keys = rules::scan_with(&current, scan).keys();
    // Keys only the injected audit reports cannot be re-checked natively.
    let tracked = current_keys.clone();
    let mut records = Vec::new();
    for v in order {
        let record = |patch: Option<DomPatch>, status, reason: Option<String>| PatchRecord {
            patch,
            violation_key: v.key(),
            rule_id: v.rule_id.clone(),
            selector: v.locator.css_selector.clone(),
            criterion: v.criterion.id().to_string(),
            status,
            reason,
        };
        if tracked.contains(&v.key()) && !current_keys.contains(&v.key()) {
            // Resolved as a side effect of an earlier patch.
            records.push(record(None, PatchStatus::Applied, Some("resolved by an earlier patch".into())));
            continue;
        }
        let planned = match plan_fix(v, &current, gateway, engine, alts) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(rule = %v.rule_id, selector = %v.locator.css_selector, error = %e, "fix not planned");
                records.push(record(None, PatchStatus::Rejected, Some(e.to_string())));
                continue;
            }
        };
        if planned.status == PatchStatus::Rejected {
            tracing::warn!(rule = %v.rule_id, reason = ?planned.reason, "fix rejected");
            let reason = planned.reason.clone();
            records.push(record(Some(planned), PatchStatus::Rejected, reason));
            continue;
        }
        let (next, applied) = match apply_patch(&current, &planned) {
            Ok(r) => r,
            Err(e) => {
                let p = planned.reject(e.to_string());
                let reason = p.reason.clone();
                records.push(record(Some(p), PatchStatus::Rejected, reason));
                continue;
            }
        };
        let next_keys = rules::scan_with(&next, scan).keys();
        let introduced: BTreeSet<_> = next_keys.difference(&current_keys).collect();
        if !introduced.is_empty() {
            let p = applied.reject(format!("patch introduced {} new violation(s)", introduced.len()));
            tracing::warn!(rule = %v.rule_id, "patch reverted: introduced violations");
            let reason = p.reason.clone();
            records.push(record(Some(p), PatchStatus::Rejected, reason));
            continue;
        }
        current = next;
        current_keys = next_keys;
        records.push(record(Some(applied), PatchStatus::Applied, None));
    }
    DocumentRemediation { document: current, records }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum MergeStatus {
    Skipped,
    Accepted,
    Rejected(String),
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub document: String,
    pub status: MergeStatus,
}

/// `(tag, attribute, value)` triples for aria-*, alt and lang.
pub fn accessibility_attributes(html: &str) -> BTreeMap<(String, String, String), usize> {
    let doc = dom::parse(html);
    let mut out = BTreeMap::new();
    for node in dom::elements(&doc) {
        let tag = dom::tag_of(&node).unwrap_or_default();
        for a in node.attrs() {
            let name = a.name.local.to_string();
            if name.starts_with("aria-") || name == "alt" || name == "lang" {
                *out.entry((tag.clone(), name, a.value.to_string())).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Missing triples of `required` in `candidate`, as a readable list.
pub fn retention_gaps(required: &str, candidate: &str) -> Vec<String> {
    let have = accessibility_attributes(candidate);
    accessibility_attributes(required)
        .into_iter()
        .filter(|(k, n)| have.get(k).copied().unwrap_or(0) < *n)
        .map(|((tag, attr, value), _)| format!("<{tag} {attr}={value:?}>"))
        .collect()
}

/// Final merge of the patched document with the original layout. The merged
/// document must keep every accessibility attribute of `patched`, introduce
/// no violation and flag no structural change; otherwise `patched` wins.
pub fn responsive_merge(
    original: &str,
    patched: &str,
    scan: &ScanOptions,
    gateway: &Gateway,
    engine: &PromptEngine,
) -> MergeOutcome {
    let fallback = |status| MergeOutcome { document: patched.to_string(), status };
    if dom::canonical(original) == dom::canonical(patched) {
        return fallback(MergeStatus::Skipped);
    }
    let bundle = match engine.build(PromptContext::ResponsiveMerge { original, current: patched }) {
        Ok(b) => b,
        Err(e) => return fallback(MergeStatus::Failed(e.to_string())),
    };
    let response = match gateway.complete(&bundle) {
        Ok(x) => x.response_text,
        Err(e) => {
            tracing::warn!(error = %e, "merge request failed, keeping patched document");
            return fallback(MergeStatus::Failed(e.to_string()));
        }
    };
    let merged = match segments::parse_segments(&response, &Expected::FragmentOnly) {
        Ok(s) => s.fragment.unwrap_or_default(),
        Err(e) => return fallback(MergeStatus::Rejected(format!("unparseable merge: {e}"))),
    };
    if let Err(e) = segments::validate_html_segment(&merged) {
        return fallback(MergeStatus::Rejected(e.to_string()));
    }
    let gaps = retention_gaps(patched, &merged);
    if !gaps.is_empty() {
        return fallback(MergeStatus::Rejected(format!("dropped accessibility attributes: {}", gaps.join(", "))));
    }
    let before = rules::scan_with(patched, scan).keys();
    let after = rules::scan_with(&merged, scan).keys();
    if !after.is_subset(&before) {
        return fallback(MergeStatus::Rejected("merge introduced violations".into()));
    }
    let flags = verify::structural_diff(patched, &merged);
    if !flags.is_empty() {
        return fallback(MergeStatus::Rejected(format!("merge changed structure: {}", flags[0].detail)));
    }
    MergeOutcome { document: dom::parse(&merged).html().to_string(), status: MergeStatus::Accepted }
}

/// `out_dir/<host or "local">/<path>.fixed.html`.
pub fn artifact_path(out_dir: &Path, source: &str) -> PathBuf {
    let (host, path) = match Url::parse(source) {
        Ok(u) if u.scheme() != "file" => (u.host_str().unwrap_or("local").to_string(), u.path().to_string()),
        Ok(u) => ("local".to_string(), u.to_file_path().ok().and_then(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).unwrap_or_default()),
        Err(_) => (
            "local".to_string(),
            Path::new(source).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        ),
    };
    let mut rel = path.trim_matches('/').to_string();
    if rel.is_empty() || path.ends_with('/') {
        rel = if rel.is_empty() { "index".into() } else { format!("{rel}/index") };
    }
    for ext in [".html", ".htm"] {
        if let Some(stem) = rel.strip_suffix(ext) {
            rel = stem.to_string();
            break;
        }
    }
    let safe: Vec<String> = rel
        .split('/')
        .filter(|s| !s.is_empty() && *s != "." && *s != "..")
        .map(|s| s.to_string())
        .collect();
    let mut out = out_dir.join(host);
    for s in &safe {
        out.push(s);
    }
    let name = out.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| "index".into());
    out.set_file_name(format!("{name}.fixed.html"));
    out
}

/// Writes the document atomically, keeping a doctype when the source had one.
pub fn emit_artifact(document: &str, source_had_doctype: bool, out_path: &Path) -> std::io::Result<PathBuf> {
    let mut text = document.to_string();
    if source_had_doctype && !text.trim_start().to_ascii_lowercase().starts_with("<!doctype") {
        text = format!("<!DOCTYPE html>\n{text}");
    }
    vision::write_atomic(out_path, text.as_bytes())?;
    Ok(out_path.to_path_buf())
}

pub fn has_doctype(html: &str) -> bool {
    html.trim_start().to_ascii_lowercase().starts_with("<!doctype")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayConfig, GatewayMode, PanickingTransport, ThreadSleeper};
    use std::sync::Arc;

    fn offline_gateway() -> Gateway {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let config = GatewayConfig { mode: GatewayMode::Replay, cassette_path: Some(path), ..GatewayConfig::default() };
        let gw = Gateway::with_transport(config, Arc::new(PanickingTransport), Arc::new(ThreadSleeper)).unwrap();
        std::mem::forget(dir);
        gw
    }

    fn violation(html: &str, rule: &str) -> Violation {
        rules::scan_document(html, None, &[]).violations().iter().find(|v| v.rule_id == rule).unwrap().clone()
    }

    const PAGE: &str = "<!DOCTYPE html><html lang=\"en\"><head><title>t</title></head><body><main><p>intro</p><img src=\"a.png\"><ul><li><a href=\"/x\"></a></li></ul></main></body></html>";

    #[test]
    fn alt_injection_needs_no_llm() {
        let v = violation(PAGE, "image-alt");
        let mut alts = BTreeMap::new();
        alts.insert(v.key(), AltDescription::new("A red bicycle leaning on a wall.", "m").unwrap());
        let gw = offline_gateway();
        let patch = plan_fix(&v, PAGE, &gw, &PromptEngine::default(), &alts).unwrap();
        assert_eq!(patch.fixed_fragment, "<img src=\"a.png\" alt=\"A red bicycle leaning on a wall.\">");
        assert_eq!(gw.stats().live_calls + gw.stats().replay_hits, 0);
        let (out, applied) = apply_patch(&dom::parse(PAGE).html(), &patch).unwrap();
        assert_eq!(applied.status, PatchStatus::Applied);
        assert!(out.contains("alt=\"A red bicycle"));
        // Everything outside the node is unchanged.
        assert_eq!(out.replace(" alt=\"A red bicycle leaning on a wall.\"", ""), dom::parse(PAGE).html().to_string());
    }

    #[test]
    fn disjoint_patches_commute() {
        let base = dom::parse(PAGE).html().to_string();
        let img = violation(PAGE, "image-alt");
        let link = violation(PAGE, "link-name");
        let mk = |v: &Violation, fixed: &str| {
            let doc = dom::parse(&base);
            DomPatch {
                violation_key: v.key(),
                rule_id: v.rule_id.clone(),
                locator: v.locator.clone(),
                original_fragment: dom::resolve_locator(&doc, &v.locator).unwrap().html().to_string(),
                fixed_fragment: fixed.into(),
                status: PatchStatus::Planned,
                prompt_kind: None,
                applied_selector: None,
                reason: None,
            }
        };
        let p1 = mk(&img, "<img src=\"a.png\" alt=\"A\">");
        let p2 = mk(&link, "<a href=\"/x\" aria-label=\"X\"></a>");
        let (a, _) = apply_patch(&base, &p1).unwrap();
        let (ab, _) = apply_patch(&a, &p2).unwrap();
        let (b, _) = apply_patch(&base, &p2).unwrap();
        let (ba, _) = apply_patch(&b, &p1).unwrap();
        assert_eq!(dom::canonical(&ab), dom::canonical(&ba));
    }

    #[test]
    fn invalidated_locator_is_stale() {
        let base = dom::parse(PAGE).html().to_string();
        let link = violation(PAGE, "link-name");
        let doc = dom::parse(&base);
        let original = dom::resolve_locator(&doc, &link.locator).unwrap().html().to_string();
        let replace_li = DomPatch {
            violation_key: link.key(),
            rule_id: "x".into(),
            locator: NodeLocator::new("main > ul > li", vec![], ""),
            original_fragment: "<li><a href=\"/x\"></a></li>".into(),
            fixed_fragment: "<li><span>gone</span></li>".into(),
            status: PatchStatus::Planned,
            prompt_kind: None,
            applied_selector: None,
            reason: None,
        };
        let (after, _) = apply_patch(&base, &replace_li).unwrap();
        let second = DomPatch { original_fragment: original, locator: link.locator.clone(), ..replace_li.clone() };
        assert!(matches!(apply_patch(&after, &second), Err(PatchError::StaleLocator(_))));
    }

    #[test]
    fn contrast_guard_allows_only_color() {
        let orig = r#"<p style="color: #777; background-color: #fff; padding: 4px">Hi <b>there</b></p>"#;
        assert!(contrast_guard(orig, r#"<p style="color: #595959; background-color: #fff; padding: 4px">Hi <b>there</b></p>"#).is_ok());
        assert!(contrast_guard(orig, r#"<p style="color: #000; background-color: #eee; padding: 4px">Hi <b>there</b></p>"#).is_err());
        assert!(contrast_guard(orig, r#"<p style="color: #000; background-color: #fff; padding: 4px">Hello <b>there</b></p>"#).is_err());
        assert!(contrast_guard(orig, r#"<p style="color: #000; background-color: #fff; padding: 4px" class="x">Hi <b>there</b></p>"#).is_err());
    }

    #[test]
    fn fragments_must_be_one_element() {
        assert!(single_root_element("<a href=\"/\">x</a>").is_ok());
        assert!(single_root_element("  <label>Name <input></label>\n").is_ok());
        assert!(single_root_element("<a></a><b></b>").is_err());
        assert!(single_root_element("text <a></a>").is_err());
        assert!(validate_fragment("<div><p>", false).is_err());
    }

    #[test]
    fn shell_patch_sets_root_attributes_and_head() {
        let base = "<html><head><meta charset=\"utf-8\"></head><body class=\"b\"><p>body text</p></body></html>";
        let v = violation(base, "html-has-lang");
        let doc = dom::parse(base);
        let shell = document_shell(&doc).unwrap();
        assert_eq!(shell, "<html><head><meta charset=\"utf-8\"></head><body class=\"b\"></body></html>");
        let patch = DomPatch {
            violation_key: v.key(),
            rule_id: v.rule_id.clone(),
            locator: v.locator.clone(),
            original_fragment: shell,
            fixed_fragment: "<html lang=\"en\"><head><meta charset=\"utf-8\"><title>Home</title></head><body class=\"b\"></body></html>".into(),
            status: PatchStatus::Planned,
            prompt_kind: None,
            applied_selector: None,
            reason: None,
        };
        let (out, _) = apply_patch(&doc.html(), &patch).unwrap();
        assert!(out.contains("<html lang=\"en\">"), "{out}");
        assert!(out.contains("<title>Home</title>"));
        assert!(out.contains("<p>body text</p>"));
        assert!(rules::scan_document(&out, None, &[]).violations().iter().all(|v| v.rule_id != "html-has-lang" && v.rule_id != "document-title"));
    }

    #[test]
    fn retention_gaps_count_triples() {
        let patched = r#"<button aria-label="Close">x</button><img alt="A"><p lang="fr">t</p>"#;
        assert!(retention_gaps(patched, patched).is_empty());
        let gaps = retention_gaps(patched, r#"<button>x</button><img alt="A"><p lang="fr">t</p>"#);
        assert_eq!(gaps, ["<button aria-label=\"Close\">"]);
    }

    #[test]
    fn merge_short_circuits_on_identical_documents() {
        let gw = offline_gateway();
        let out = responsive_merge(PAGE, PAGE, &ScanOptions::document(""), &gw, &PromptEngine::default());
        assert_eq!(out.status, MergeStatus::Skipped);
        assert_eq!(gw.stats().replay_hits, 0);
    }

    #[test]
    fn artifact_paths() {
        let out = Path::new("/o");
        assert_eq!(artifact_path(out, "https://example.org/a/b.html"), Path::new("/o/example.org/a/b.fixed.html"));
        assert_eq!(artifact_path(out, "https://example.org/"), Path::new("/o/example.org/index.fixed.html"));
        assert_eq!(artifact_path(out, "https://example.org/docs/"), Path::new("/o/example.org/docs/index.fixed.html"));
        assert_eq!(artifact_path(out, "fixtures/page.html"), Path::new("/o/local/page.fixed.html"));
        assert_eq!(artifact_path(out, "file:///tmp/x/page.htm"), Path::new("/o/local/page.fixed.html"));
        assert_eq!(artifact_path(out, "https://e.org/../../etc/passwd"), Path::new("/o/e.org/etc/passwd.fixed.html"));
    }

    #[test]
    fn artifact_is_written_atomically_with_doctype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("new/dir/p.fixed.html");
        emit_artifact("<html><body></body></html>", true, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<!DOCTYPE html>"));
        emit_artifact(&text, true, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }
}
