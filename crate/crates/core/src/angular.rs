//! Angular workspace discovery and static template detection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::{Component, Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::markup;
use crate::model::{AuditReport, Violation};
use crate::rules::{self, ScanOptions};

pub const MANIFEST: &str = "angular.json";
/// Suffix appended to the component file path for inline templates.
pub const INLINE_MARKER: &str = "#inline-template";

#[derive(Debug, thiserror::Error)]
pub enum AngularError {
    #[error("{0} is not an Angular workspace (no angular.json)")]
    NotAWorkspace(PathBuf),
    #[error("{path}:{line}:{column}: {message}")]
    Manifest { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub name: String,
    pub source_root: PathBuf,
    pub build_command: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngularWorkspace {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    /// Sorted by name.
    pub projects: Vec<Project>,
}

impl AngularWorkspace {
    /// Build command of the first project, used when no override is given.
    pub fn default_build_command(&self) -> Option<&str> {
        self.projects.first().map(|p| p.build_command.as_str())
    }
}

fn manifest_error(path: &Path, message: impl Into<String>) -> AngularError {
    AngularError::Manifest { path: path.to_path_buf(), line: 0, column: 0, message: message.into() }
}

fn is_within(root: &Path, rel: &Path) -> bool {
    let mut depth = 0i32;
    for c in rel.components() {
        match c {
            Component::ParentDir => depth -= 1,
            Component::Normal(_) => depth += 1,
            Component::CurDir => {}
            _ => return false,
        }
        if depth < 0 {
            return false;
        }
    }
    !root.as_os_str().is_empty()
}

fn build_command_for(name: &str, project: &Value) -> String {
    let targets = project.get("architect").or_else(|| project.get("targets"));
    let Some(build) = targets.and_then(|t| t.get("build")) else {
        return format!("ng build {name} --configuration production");
    };
    let has_production = build.get("configurations").and_then(|c| c.get("production")).is_some();
    let configuration = if has_production {
        Some("production".to_string())
    } else {
        build.get("defaultConfiguration").and_then(Value::as_str).map(str::to_string)
    };
    match configuration {
        Some(c) => format!("ng build {name} --configuration {c}"),
        None => format!("ng build {name}"),
    }
}

pub fn load_workspace(root: &Path) -> Result<AngularWorkspace, AngularError> {
    let manifest_path = root.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(AngularError::NotAWorkspace(root.to_path_buf()));
    }
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|source| AngularError::Io { path: manifest_path.clone(), source })?;
    let manifest: Value = serde_json::from_str(&text).map_err(|e| AngularError::Manifest {
        path: manifest_path.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let projects = manifest
        .get("projects")
        .and_then(Value::as_object)
        .ok_or_else(|| manifest_error(&manifest_path, "missing \"projects\" object"))?;
    let mut out = Vec::new();
    for (name, project) in projects {
        let source_root = match project.get("sourceRoot").and_then(Value::as_str) {
            Some(s) => PathBuf::from(s),
            None => {
                let base = project.get("root").and_then(Value::as_str).unwrap_or("");
                Path::new(base).join("src")
            }
        };
        if !is_within(root, &source_root) {
            return Err(manifest_error(
                &manifest_path,
                format!("project {name}: sourceRoot {} escapes the workspace", source_root.display()),
            ));
        }
        out.push(Project { name: name.clone(), build_command: build_command_for(name, project), source_root });
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(AngularWorkspace { root: root.to_path_buf(), manifest_path, projects: out })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    File(PathBuf),
    /// Byte range of the literal's content inside the component file.
    Inline { span: Range<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentTriad {
    pub component_name: String,
    pub selector: Option<String>,
    pub typescript_path: PathBuf,
    pub template: TemplateSource,
    pub styles_path: Option<PathBuf>,
    pub template_content: String,
    pub typescript_content: String,
    pub styles_content: String,
    /// Class names listed in the decorator's `imports` array.
    pub imports: Vec<String>,
}

impl ComponentTriad {
    pub fn template_path(&self) -> PathBuf {
        match &self.template {
            TemplateSource::File(p) => p.clone(),
            TemplateSource::Inline { .. } => {
                let mut s = self.typescript_path.clone().into_os_string();
                s.push(INLINE_MARKER);
                PathBuf::from(s)
            }
        }
    }

    pub fn is_inline(&self) -> bool {
        matches!(self.template, TemplateSource::Inline { .. })
    }

    /// Files the component owns on disk.
    pub fn files(&self) -> Vec<PathBuf> {
        let mut files = vec![self.typescript_path.clone()];
        if let TemplateSource::File(p) = &self.template {
            files.push(p.clone());
        }
        files.extend(self.styles_path.clone());
        files
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    TemplateTag,
    Route,
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from_component: String,
    pub to_component: String,
    pub via: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryError {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for DiscoveryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Discovery {
    pub triads: Vec<ComponentTriad>,
    pub edges: Vec<DependencyEdge>,
    pub errors: Vec<DiscoveryError>,
}

/// Index just past the bracket matching the one at `open`, skipping
/// strings, template literals and comments.
fn matching_close(src: &str, open: usize) -> Option<usize> {
    let b = src.as_bytes();
    let mut stack = vec![b[open]];
    let mut i = open + 1;
    while i < b.len() {
        match b[i] {
            q @ (b'\'' | b'"' | b'`') => i = skip_string(b, i, q)?,
            b'/' if b.get(i + 1) == Some(&b'/') => {
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                i = src[i + 2..].find("*/").map(|p| i + 2 + p + 1)?;
            }
            c @ (b'{' | b'[' | b'(') => stack.push(c),
            c @ (b'}' | b']' | b')') => {
                let want = match stack.pop()? {
                    b'{' => b'}',
                    b'[' => b']',
                    _ => b')',
                };
                if c != want {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

// Returns the index of the closing quote.
fn skip_string(b: &[u8], start: usize, quote: u8) -> Option<usize> {
    let mut i = start + 1;
    let mut depth = 0usize;
    while i < b.len() {
        match b[i] {
            b'\\' => i += 1,
            b'$' if quote == b'`' && b.get(i + 1) == Some(&b'{') => {
                depth += 1;
                i += 1;
            }
            b'}' if depth > 0 => depth -= 1,
            c if c == quote && depth == 0 => return Some(i),
            b'\n' if quote != b'`' => return None,
            _ => {}
        }
        i += 1;
    }
    None
}

/// String literal starting at `at` (after whitespace): content span and
/// decoded value.
fn literal_at(src: &str, at: usize) -> Option<(Range<usize>, String)> {
    let start = at + src[at..].len() - src[at..].trim_start().len();
    let b = src.as_bytes();
    let quote = *b.get(start)?;
    if !matches!(quote, b'\'' | b'"' | b'`') {
        return None;
    }
    let end = skip_string(b, start, quote)?;
    let raw = &src[start + 1..end];
    Some((start + 1..end, unescape_literal(raw)))
}

fn unescape_literal(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(other) => out.push(other),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Replaces the inline template literal of a component file, re-quoting it
/// as a template literal. `None` when the file has no inline template.
pub fn splice_inline_template(ts: &str, template: &str) -> Option<String> {
    let (span, _) = parse_decorator(ts).ok()?.inline_template?;
    Some(format!("{}`{}`{}", &ts[..span.start - 1], escape_template_literal(template), &ts[span.end + 1..]))
}

pub fn inline_template_of(ts: &str) -> Option<String> {
    parse_decorator(ts).ok()?.inline_template.map(|(_, v)| v)
}

/// Escapes text for embedding in a template literal.
pub fn escape_template_literal(text: &str) -> String {
    text.replace('\\', "\\\\").replace('`', "\\`").replace("${", "\\${")
}

fn decorator_property(body: &str, name: &str) -> Option<usize> {
    // Property keys may be quoted; require a key boundary.
    let re = Regex::new(&format!(r#"(?:^|[\s,{{])['"]?{name}['"]?\s*:"#)).ok()?;
    re.find(body).map(|m| m.end())
}

fn class_after(src: &str, from: usize) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\bclass\s+([A-Za-z_$][\w$]*)").unwrap());
    re.captures(&src[from..]).map(|c| c[1].to_string())
}

fn identifiers(list: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[A-Za-z_$][\w$]*").unwrap());
    re.find_iter(list).map(|m| m.as_str().to_string()).collect()
}

#[derive(Debug, Default, PartialEq, Eq)]
struct Decorator {
    class_name: String,
    selector: Option<String>,
    template_url: Option<String>,
    inline_template: Option<(Range<usize>, String)>,
    style_urls: Vec<String>,
    imports: Vec<String>,
}

fn parse_decorator(src: &str) -> Result<Decorator, String> {
    let at = src.find("@Component").ok_or("no @Component decorator")?;
    let paren = at + src[at..].find('(').ok_or("malformed @Component decorator")?;
    let brace = paren + 1 + src[paren + 1..].find('{').ok_or("@Component without a metadata object")?;
    let end = matching_close(src, brace).ok_or("unbalanced @Component metadata")?;
    let body = &src[brace..end];
    let mut d = Decorator {
        class_name: class_after(src, end).ok_or("no class follows @Component")?,
        ..Decorator::default()
    };
    if let Some(p) = decorator_property(body, "selector") {
        d.selector = literal_at(body, p).map(|(_, v)| v);
    }
    if let Some(p) = decorator_property(body, "templateUrl") {
        d.template_url = Some(literal_at(body, p).ok_or("templateUrl is not a string literal")?.1);
    } else if let Some(p) = decorator_property(body, "template") {
        let (span, value) = literal_at(body, p).ok_or("template is not a string literal")?;
        d.inline_template = Some((span.start + brace..span.end + brace, value));
    }
    if let Some(p) = decorator_property(body, "styleUrls") {
        let open = p + body[p..].find('[').ok_or("styleUrls is not an array")?;
        let close = matching_close(body, open).ok_or("unbalanced styleUrls")?;
        let mut i = open + 1;
        while let Some((span, v)) = next_literal(body, i, close) {
            d.style_urls.push(v);
            i = span.end + 1;
        }
    } else if let Some(p) = decorator_property(body, "styleUrl") {
        d.style_urls.extend(literal_at(body, p).map(|(_, v)| v));
    }
    if let Some(p) = decorator_property(body, "imports") {
        if let Some(open) = body[p..].find('[').map(|o| p + o) {
            if let Some(close) = matching_close(body, open) {
                d.imports = identifiers(&body[open + 1..close - 1]);
            }
        }
    }
    Ok(d)
}

fn next_literal(src: &str, from: usize, limit: usize) -> Option<(Range<usize>, String)> {
    let rel = src[from..limit].find(['\'', '"', '`'])?;
    literal_at(src, from + rel)
}

fn element_selectors(selector: &str) -> Vec<String> {
    selector
        .split(',')
        .filter_map(|part| {
            let part = part.trim();
            let end = part.find(|c: char| !(c.is_ascii_alphanumeric() || c == '-')).unwrap_or(part.len());
            (end > 0).then(|| part[..end].to_ascii_lowercase())
        })
        .collect()
}

fn template_tags(template: &str) -> BTreeSet<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"<([A-Za-z][\w-]*)").unwrap());
    re.captures_iter(template).map(|c| c[1].to_ascii_lowercase()).collect()
}

fn route_targets(ts: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\bcomponent\s*:\s*([A-Za-z_$][\w$]*)").unwrap());
    re.captures_iter(ts).map(|c| c[1].to_string()).collect()
}

fn read(path: &Path) -> Result<String, DiscoveryError> {
    std::fs::read_to_string(path).map_err(|e| DiscoveryError { path: path.to_path_buf(), message: e.to_string() })
}

fn load_triad(ts_path: &Path) -> Result<ComponentTriad, DiscoveryError> {
    let ts = read(ts_path)?;
    let fail = |message: String| DiscoveryError { path: ts_path.to_path_buf(), message };
    let d = parse_decorator(&ts).map_err(|m| fail(m.to_string()))?;
    let dir = ts_path.parent().unwrap_or(Path::new("."));
    let (template, template_content) = match (&d.template_url, &d.inline_template) {
        (Some(url), _) => {
            let path = dir.join(url);
            let content = read(&path).map_err(|e| fail(format!("templateUrl {url}: {}", e.message)))?;
            (TemplateSource::File(path), content)
        }
        (None, Some((span, value))) => (TemplateSource::Inline { span: span.clone() }, value.clone()),
        (None, None) => return Err(fail("component has neither templateUrl nor template".into())),
    };
    let (styles_path, styles_content) = match d.style_urls.first() {
        Some(url) => {
            let path = dir.join(url);
            let content = read(&path).map_err(|e| fail(format!("styleUrl {url}: {}", e.message)))?;
            (Some(path), content)
        }
        None => (None, String::new()),
    };
    Ok(ComponentTriad {
        component_name: d.class_name,
        selector: d.selector,
        typescript_path: ts_path.to_path_buf(),
        template,
        styles_path,
        template_content,
        typescript_content: ts,
        styles_content,
        imports: d.imports,
    })
}

const SKIPPED_DIRS: [&str; 4] = ["node_modules", ".git", ".a11y-backup", "dist"];

/// Finds `*.component.ts` files under every project's source root and links
/// components by selector usage, decorator imports and route tables.
pub fn discover_components(ws: &AngularWorkspace) -> Discovery {
    let mut files = BTreeSet::new();
    for project in &ws.projects {
        let root = ws.root.join(&project.source_root);
        let walker = walkdir::WalkDir::new(&root).sort_by_file_name().into_iter().filter_entry(|e| {
            !(e.file_type().is_dir() && SKIPPED_DIRS.contains(&e.file_name().to_string_lossy().as_ref()))
        });
        for entry in walker.filter_map(Result::ok) {
            let name = entry.file_name().to_string_lossy();
            if entry.file_type().is_file() && name.ends_with(".component.ts") && !name.ends_with(".spec.ts") {
                files.insert(entry.into_path());
            }
        }
    }
    let mut out = Discovery::default();
    for path in files {
        match load_triad(&path) {
            Ok(t) => out.triads.push(t),
            Err(e) => {
                tracing::warn!(%e, "component skipped");
                out.errors.push(e);
            }
        }
    }
    out.edges = dependency_edges(&out.triads);
    out
}

pub fn dependency_edges(triads: &[ComponentTriad]) -> Vec<DependencyEdge> {
    let mut by_tag: BTreeMap<String, &str> = BTreeMap::new();
    for t in triads {
        for tag in t.selector.as_deref().map(element_selectors).unwrap_or_default() {
            by_tag.insert(tag, &t.component_name);
        }
    }
    let known: BTreeSet<&str> = triads.iter().map(|t| t.component_name.as_str()).collect();
    let mut edges = BTreeSet::new();
    for t in triads {
        let mut add = |to: &str, via| {
            if to != t.component_name && known.contains(to) {
                edges.insert(DependencyEdge { from_component: t.component_name.clone(), to_component: to.into(), via });
            }
        };
        for tag in template_tags(&t.template_content) {
            if let Some(to) = by_tag.get(&tag) {
                add(to, EdgeKind::TemplateTag);
            }
        }
        for name in &t.imports {
            add(name, EdgeKind::Import);
        }
        for name in route_targets(&t.typescript_content) {
            add(&name, EdgeKind::Route);
        }
    }
    edges.into_iter().collect()
}

const DYNAMIC: &str = "{{dynamic}}";

// Control-flow block openers: `@if (...) {`, `} @else {`, `@for (...) {`.
fn block_opener() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^@(?:if|else\s+if|else|for|empty|switch|case|default|defer|placeholder|loading|error)\b").unwrap()
    })
}

/// Rewrites a template into plain HTML for the rule engine. Structural
/// directives and control-flow blocks are dropped, keeping their content;
/// property bindings become attributes with a placeholder value; style
/// bindings mark the element's style as dynamic. Element structure is
/// preserved so DOM paths match the raw template.
pub fn preprocess_template(template: &str) -> String {
    let tokens = match markup::tokenize(template) {
        Ok(t) => t,
        Err(err) => {
            tracing::debug!(%err, "template tokenization failed, scanning raw text");
            return template.to_string();
        }
    };
    let mut out = String::with_capacity(template.len());
    let mut depth = 0usize;
    for token in tokens {
        let span = token.span();
        match token {
            markup::Token::StartTag { name, attrs, self_closing, .. } => {
                out.push('<');
                out.push_str(&name);
                let mut present: BTreeSet<String> = attrs.iter().map(|a| a.name.to_ascii_lowercase()).collect();
                let mut dynamic_style = false;
                for a in &attrs {
                    match rewrite_attr(&a.name) {
                        AttrRewrite::Keep => {
                            out.push(' ');
                            out.push_str(&template[a.span.clone()]);
                        }
                        AttrRewrite::Drop => {}
                        AttrRewrite::DynamicStyle => dynamic_style = true,
                        AttrRewrite::Bound(target) => {
                            if present.insert(target.clone()) {
                                out.push_str(&format!(" {target}=\"{DYNAMIC}\""));
                            }
                        }
                    }
                }
                if dynamic_style {
                    out.push_str(" data-a11y-dynamic-style");
                }
                let is_void = markup::VOID_ELEMENTS.contains(&name.as_str());
                if self_closing && !is_void {
                    // Custom elements may self-close in templates.
                    out.push_str("></");
                    out.push_str(&name);
                    out.push('>');
                } else {
                    out.push('>');
                }
            }
            markup::Token::Text(_) => {
                let text = &template[span];
                out.push_str(&neutralize_blocks(text, &mut depth));
            }
            _ => out.push_str(&template[span]),
        }
    }
    out
}

enum AttrRewrite {
    Keep,
    Drop,
    DynamicStyle,
    Bound(String),
}

fn rewrite_attr(name: &str) -> AttrRewrite {
    let lower = name.to_ascii_lowercase();
    if lower.starts_with('*') || lower.starts_with('#') || lower.starts_with("let-") {
        return AttrRewrite::Drop;
    }
    if lower == "[ngstyle]" || lower.starts_with("[style") {
        return AttrRewrite::DynamicStyle;
    }
    if let Some(inner) = lower.strip_prefix("[(").and_then(|s| s.strip_suffix(")]")) {
        return if inner == "ngmodel" { AttrRewrite::Drop } else { AttrRewrite::Bound(inner.to_string()) };
    }
    if let Some(inner) = lower.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        let target = inner.strip_prefix("attr.").unwrap_or(inner);
        return match target {
            "ngclass" | "ngmodel" | "routerlink" | "formcontrol" | "formgroup" | "formcontrolname" => AttrRewrite::Drop,
            t if t.starts_with("class.") || t.contains('.') => AttrRewrite::Drop,
            t => AttrRewrite::Bound(t.to_string()),
        };
    }
    if let Some(target) = lower.strip_prefix("bind-") {
        return AttrRewrite::Bound(target.to_string());
    }
    AttrRewrite::Keep
}

fn neutralize_blocks(text: &str, depth: &mut usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        if rest.starts_with("{{") {
            let end = rest.find("}}").map_or(rest.len(), |e| e + 2);
            out.push_str(&rest[..end]);
            rest = &rest[end..];
        } else if rest.starts_with('@') && block_opener().is_match(rest) {
            match block_header_end(rest) {
                Some(end) => {
                    *depth += 1;
                    rest = &rest[end..];
                }
                None => {
                    out.push('@');
                    rest = &rest[1..];
                }
            }
        } else if rest.starts_with('}') && *depth > 0 {
            *depth -= 1;
            rest = &rest[1..];
        } else {
            let c = rest.chars().next().unwrap();
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

// End of `@kw (...) {` including the brace.
fn block_header_end(s: &str) -> Option<usize> {
    let mut i = s.find(|c: char| c.is_whitespace() || c == '(' || c == '{')?;
    loop {
        let trimmed = s[i..].trim_start();
        i = s.len() - trimmed.len();
        if trimmed.starts_with('(') {
            i = matching_close(s, i)?;
        } else if trimmed.starts_with('{') {
            return Some(i + 1);
        } else if trimmed.starts_with("if") && !trimmed[2..].starts_with(|c: char| c.is_alphanumeric() || c == '_') {
            // `@else if (...)`
            i += 2;
        } else {
            return None;
        }
    }
}

/// Runs the rule engine over a component template with framework
/// preprocessing and the component's styles.
pub fn static_scan_component(triad: &ComponentTriad) -> AuditReport {
    let html = preprocess_template(&triad.template_content);
    let mut opts = ScanOptions::template(triad.template_path().to_string_lossy());
    if !triad.styles_content.trim().is_empty() {
        opts.extra_css = Some(triad.styles_content.clone());
    }
    rules::scan_with(&html, &opts)
}

/// Byte range in the raw template of the element a violation points at,
/// found by walking the violation's DOM path through the raw element tree.
pub fn raw_span(template: &str, violation: &Violation) -> Option<Range<usize>> {
    let tree = markup::element_tree(template).ok()?;
    let path = &violation.locator.dom_path;
    // Fragment scans wrap the template in html/body.
    let steps = match path.first().map(|s| s.tag.as_str()) {
        Some("html") => path.get(2..)?,
        _ => path.as_slice(),
    };
    let mut parent: Option<usize> = None;
    let mut found = None;
    for step in steps {
        let children: Vec<usize> = (0..tree.len()).filter(|&i| tree[i].parent == parent).collect();
        let idx = *children.get(step.index.checked_sub(1)?)?;
        if tree[idx].tag != step.tag {
            return None;
        }
        parent = Some(idx);
        found = Some(idx);
    }
    found.map(|i| tree[i].outer())
}
