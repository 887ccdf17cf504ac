//! Prompt templates and rendering. Template texts live in
//! `assets/prompts/` so they can be diffed on their own.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::markup;
use crate::model::Violation;
use crate::segments::Expected;

pub const SYSTEM_INSTRUCTION: &str = include_str!("../assets/prompts/system.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Vision,
    Contrast,
    General,
    ResponsiveMerge,
    AngularTemplate,
    AngularHolistic,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::Vision,
        PromptKind::Contrast,
        PromptKind::General,
        PromptKind::ResponsiveMerge,
        PromptKind::AngularTemplate,
        PromptKind::AngularHolistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Vision => "vision",
            PromptKind::Contrast => "contrast",
            PromptKind::General => "general",
            PromptKind::ResponsiveMerge => "responsive_merge",
            PromptKind::AngularTemplate => "angular_template",
            PromptKind::AngularHolistic => "angular_holistic",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Vision => include_str!("../assets/prompts/vision.txt"),
            PromptKind::Contrast => include_str!("../assets/prompts/contrast.txt"),
            PromptKind::General => include_str!("../assets/prompts/general.txt"),
            PromptKind::ResponsiveMerge => include_str!("../assets/prompts/responsive_merge.txt"),
            PromptKind::AngularTemplate => include_str!("../assets/prompts/angular_template.txt"),
            PromptKind::AngularHolistic => include_str!("../assets/prompts/angular_holistic.txt"),
        }
    }

    pub fn system_text(self) -> &'static str {
        match self {
            PromptKind::Vision => "",
            _ => SYSTEM_INSTRUCTION,
        }
    }

    pub fn expected(self) -> Expected {
        match self {
            PromptKind::AngularTemplate => Expected::template(),
            PromptKind::AngularHolistic => Expected::trio(),
            _ => Expected::FragmentOnly,
        }
    }

    /// Kinds that need a multimodal model.
    pub fn multimodal(self) -> bool {
        matches!(self, PromptKind::Vision | PromptKind::AngularHolistic)
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePart {
    pub label: String,
    pub mime: String,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<ImagePart>,
    pub expected: Expected,
    /// Original text of regions replaced by elision markers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elisions: Vec<String>,
}

impl PromptBundle {
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system_text) + estimate_tokens(&self.user_text)
    }
}

/// Rough token estimate: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("missing value for template field {0:?}")]
    MissingField(String),
    #[error("a prompt needs at least one violation")]
    NoViolations,
    #[error("{kind} prompt needs {tokens} tokens, budget is {budget}")]
    OverBudget { kind: PromptKind, tokens: usize, budget: usize },
    #[error("context cannot be trimmed: {0}")]
    Untrimmable(String),
    #[error("response does not preserve elision markers: {0}")]
    Elision(String),
}

pub enum PromptContext<'a> {
    Vision { image: ImagePart },
    Contrast { description: &'a str, original_fragment: &'a str },
    General { help_text: &'a str, fragment: &'a str },
    ResponsiveMerge { original: &'a str, current: &'a str },
    AngularTemplate {
        template_path: &'a str,
        violations: &'a [Violation],
        template_content: &'a str,
        /// Raw-source spans of the violating elements, used when trimming.
        targets: Vec<Range<usize>>,
    },
    AngularHolistic {
        component_name: &'a str,
        violations: &'a [Violation],
        template_content: &'a str,
        typescript_content: &'a str,
        styles_content: &'a str,
        shots: Vec<ImagePart>,
    },
}

impl PromptContext<'_> {
    pub fn kind(&self) -> PromptKind {
        match self {
            PromptContext::Vision { .. } => PromptKind::Vision,
            PromptContext::Contrast { .. } => PromptKind::Contrast,
            PromptContext::General { .. } => PromptKind::General,
            PromptContext::ResponsiveMerge { .. } => PromptKind::ResponsiveMerge,
            PromptContext::AngularTemplate { .. } => PromptKind::AngularTemplate,
            PromptContext::AngularHolistic { .. } => PromptKind::AngularHolistic,
        }
    }
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// Single-pass substitution: values are never re-scanned, so code with
/// braces can be injected safely.
pub fn render(template: &str, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in placeholder().captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        let value = values.get(name).ok_or_else(|| PromptError::MissingField(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

pub fn placeholders(template: &str) -> Vec<String> {
    placeholder().captures_iter(template).map(|c| c[1].to_string()).collect()
}

const LINE_LIMIT: usize = 500;

/// Numbered list "N. [rule] help @ selector -> snippet", one line per
/// violation, ordered by document position then rule id.
pub fn render_violations_text(violations: &[Violation]) -> Result<String, PromptError> {
    if violations.is_empty() {
        return Err(PromptError::NoViolations);
    }
    let mut sorted: Vec<&Violation> = violations.iter().collect();
    sorted.sort_by(|a, b| {
        (a.locator.position(), &a.rule_id, &a.locator.css_selector).cmp(&(
            b.locator.position(),
            &b.rule_id,
            &b.locator.css_selector,
        ))
    });
    let lines: Vec<String> = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let snippet = v.locator.snippet.split_whitespace().collect::<Vec<_>>().join(" ");
            let help = v.help_text.split_whitespace().collect::<Vec<_>>().join(" ");
            let line = format!("{}. [{}] {} @ {} -> {}", i + 1, v.rule_id, help, v.locator.css_selector, snippet);
            cap_line(&line)
        })
        .collect();
    Ok(lines.join("\n"))
}

fn cap_line(line: &str) -> String {
    if line.chars().count() <= LINE_LIMIT {
        return line.to_string();
    }
    let mut out: String = line.chars().take(LINE_LIMIT - 1).collect();
    out.push('…');
    out
}

fn elision_marker(n: usize) -> String {
    format!("<!-- [elided] #{n} -->")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trimmed {
    pub text: String,
    pub elisions: Vec<String>,
}

/// Keeps each target element whole plus the start and end tags of up to
/// `levels` ancestors; everything else becomes a numbered elision marker.
pub fn trim_to_targets(content: &str, targets: &[Range<usize>], levels: usize) -> Result<Trimmed, PromptError> {
    let tree = markup::element_tree(content).map_err(|e| PromptError::Untrimmable(e.to_string()))?;
    let mut keep: Vec<Range<usize>> = Vec::new();
    for target in targets {
        let idx = tree
            .iter()
            .position(|e| e.start_tag.start == target.start)
            .ok_or_else(|| PromptError::Untrimmable(format!("no element starts at byte {}", target.start)))?;
        keep.push(tree[idx].outer());
        let mut cur = tree[idx].parent;
        for _ in 0..levels {
            let Some(p) = cur else { break };
            keep.push(tree[p].start_tag.clone());
            if let Some(end) = &tree[p].end_tag {
                keep.push(end.clone());
            }
            cur = tree[p].parent;
        }
    }
    if keep.is_empty() {
        return Err(PromptError::Untrimmable("no target elements".into()));
    }
    keep.sort_by_key(|r| (r.start, std::cmp::Reverse(r.end)));
    let mut merged: Vec<Range<usize>> = Vec::new();
    for r in keep {
        match merged.last_mut() {
            Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
            _ => merged.push(r),
        }
    }
    let mut text = String::new();
    let mut elisions = Vec::new();
    let gap = |from: usize, to: usize, text: &mut String, elisions: &mut Vec<String>| {
        let chunk = &content[from..to];
        if chunk.trim().is_empty() {
            text.push_str(chunk);
        } else {
            text.push_str(&elision_marker(elisions.len() + 1));
            elisions.push(chunk.to_string());
        }
    };
    let mut pos = 0;
    for r in &merged {
        gap(pos, r.start, &mut text, &mut elisions);
        text.push_str(&content[r.clone()]);
        pos = r.end;
    }
    gap(pos, content.len(), &mut text, &mut elisions);
    Ok(Trimmed { text, elisions })
}

/// Restores elided regions in a model response; every marker must appear
/// exactly once.
pub fn expand_elisions(response: &str, elisions: &[String]) -> Result<String, PromptError> {
    static MARKER: OnceLock<Regex> = OnceLock::new();
    let re = MARKER.get_or_init(|| Regex::new(r"<!--\s*\[elided\]\s*#(\d+)\s*-->").unwrap());
    let mut seen = vec![0usize; elisions.len()];
    let mut out = String::with_capacity(response.len());
    let mut last = 0;
    for caps in re.captures_iter(response) {
        let whole = caps.get(0).unwrap();
        let n: usize = caps[1].parse().map_err(|_| PromptError::Elision("bad marker number".into()))?;
        let chunk = n
            .checked_sub(1)
            .and_then(|i| elisions.get(i))
            .ok_or_else(|| PromptError::Elision(format!("unknown marker #{n}")))?;
        seen[n - 1] += 1;
        out.push_str(&response[last..whole.start()]);
        out.push_str(chunk);
        last = whole.end();
    }
    out.push_str(&response[last..]);
    if let Some(i) = seen.iter().position(|&c| c != 1) {
        return Err(PromptError::Elision(format!("marker #{} appears {} times", i + 1, seen[i])));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptEngine {
    pub token_budget: usize,
    pub ancestor_levels: usize,
}

impl Default for PromptEngine {
    fn default() -> Self {
        Self { token_budget: 32_000, ancestor_levels: 3 }
    }
}

fn required(name: &'static str, value: &str) -> Result<(&'static str, String), PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::MissingField(name.to_string()))
    } else {
        Ok((name, value.to_string()))
    }
}

impl PromptEngine {
    pub fn build(&self, ctx: PromptContext<'_>) -> Result<PromptBundle, PromptError> {
        let kind = ctx.kind();
        let mut images = Vec::new();
        let mut elisions = Vec::new();
        let values: BTreeMap<&str, String> = match ctx {
            PromptContext::Vision { image } => {
                images.push(image);
                BTreeMap::new()
            }
            PromptContext::Contrast { description, original_fragment } => {
                [required("description", description)?, required("original_fragment", original_fragment)?].into()
            }
            PromptContext::General { help_text, fragment } => {
                [required("help_text", help_text)?, required("fragment", fragment)?].into()
            }
            PromptContext::ResponsiveMerge { original, current } => {
                [required("original", original)?, required("current", current)?].into()
            }
            PromptContext::AngularTemplate { template_path, violations, template_content, targets } => {
                let mut values: BTreeMap<&str, String> = [
                    ("total", violations.len().to_string()),
                    required("template_path", template_path)?,
                    ("violations_text", render_violations_text(violations)?),
                    required("template_content", template_content)?,
                ]
                .into();
                let draft = render(kind.template(), &values)?;
                let tokens = estimate_tokens(kind.system_text()) + estimate_tokens(&draft);
                if tokens > self.token_budget {
                    let trimmed = trim_to_targets(template_content, &targets, self.ancestor_levels)?;
                    tracing::info!(template_path, elided = trimmed.elisions.len(), "template context trimmed");
                    values.insert("template_content", trimmed.text);
                    elisions = trimmed.elisions;
                }
                values
            }
            PromptContext::AngularHolistic {
                component_name,
                violations,
                template_content,
                typescript_content,
                styles_content,
                shots,
            } => {
                images = shots;
                let styles = if styles_content.trim().is_empty() { "/* no styles */" } else { styles_content };
                [
                    required("component_name", component_name)?,
                    ("violations_text", render_violations_text(violations)?),
                    required("template_content", template_content)?,
                    required("typescript_content", typescript_content)?,
                    ("styles_content", styles.to_string()),
                ]
                .into()
            }
        };
        let bundle = PromptBundle {
            kind,
            system_text: kind.system_text().to_string(),
            user_text: render(kind.template(), &values)?,
            images,
            expected: kind.expected(),
            elisions,
        };
        let tokens = bundle.estimated_tokens();
        if tokens > self.token_budget {
            return Err(match kind {
                PromptKind::AngularTemplate => PromptError::Untrimmable(format!("{tokens} tokens after trimming")),
                _ => PromptError::OverBudget { kind, tokens, budget: self.token_budget },
            });
        }
        Ok(bundle)
    }
}
