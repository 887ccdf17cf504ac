//! Shared vocabulary of the pipeline: WCAG criteria, violations, audit reports
//! and the identity rules used to deduplicate them across scans.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Maximum stored length of [`NodeLocator::snippet`], in bytes.
pub const SNIPPET_LIMIT: usize = 4096;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed success criterion id {0:?}")]
    MalformedCriterion(String),
    #[error("unknown success criterion {0}")]
    UnknownCriterion(String),
    #[error("cannot merge reports for different sources ({left} vs {right})")]
    SourceMismatch { left: String, right: String },
    #[error("invalid violation: {0}")]
    InvalidViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    A,
    AA,
    AAA,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::A => "A",
            Level::AA => "AA",
            Level::AAA => "AAA",
        })
    }
}

/// A WCAG success criterion such as `1.1.1 Non-text Content (A)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCriterion")]
pub struct WcagCriterion {
    id: String,
    name: String,
    level: Level,
}

#[derive(Deserialize)]
struct RawCriterion {
    id: String,
    name: String,
    level: Level,
}

impl TryFrom<RawCriterion> for WcagCriterion {
    type Error = ModelError;

    fn try_from(raw: RawCriterion) -> Result<Self, Self::Error> {
        WcagCriterion::new(raw.id, raw.name, raw.level)
    }
}

fn criterion_id_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"^\d+\.\d+\.\d+$").unwrap())
}

impl WcagCriterion {
    pub fn new(id: impl Into<String>, name: impl Into<String>, level: Level) -> Result<Self, ModelError> {
        let id = id.into();
        if !criterion_id_pattern().is_match(&id) {
            return Err(ModelError::MalformedCriterion(id));
        }
        Ok(Self { id, name: name.into(), level })
    }

    /// Looks a criterion up in the WCAG 2.2 table.
    pub fn lookup(id: &str) -> Result<Self, ModelError> {
        if !criterion_id_pattern().is_match(id) {
            return Err(ModelError::MalformedCriterion(id.to_string()));
        }
        WCAG22
            .iter()
            .find(|(cid, _, _)| *cid == id)
            .map(|(cid, name, level)| Self { id: cid.to_string(), name: name.to_string(), level: *level })
            .ok_or_else(|| ModelError::UnknownCriterion(id.to_string()))
    }

    /// Parses an audit-library tag (`wcag111`, `wcag1410`) or a dotted id.
    pub fn from_tag(tag: &str) -> Result<Self, ModelError> {
        if criterion_id_pattern().is_match(tag) {
            return Self::lookup(tag);
        }
        let digits = tag
            .strip_prefix("wcag")
            .filter(|d| d.len() >= 3 && d.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| ModelError::MalformedCriterion(tag.to_string()))?;
        let id = format!("{}.{}.{}", &digits[..1], &digits[1..2], digits[2..].trim_start_matches('0'));
        Self::lookup(&id)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn level(&self) -> Level {
        self.level
    }
}

impl fmt::Display for WcagCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ({})", self.id, self.name, self.level)
    }
}

/// WCAG 2.2 success criteria (4.1.1 was removed in 2.2).
const WCAG22: &[(&str, &str, Level)] = &[
    ("1.1.1", "Non-text Content", Level::A),
    ("1.2.1", "Audio-only and Video-only (Prerecorded)", Level::A),
    ("1.2.2", "Captions (Prerecorded)", Level::A),
    ("1.2.3", "Audio Description or Media Alternative (Prerecorded)", Level::A),
    ("1.2.4", "Captions (Live)", Level::AA),
    ("1.2.5", "Audio Description (Prerecorded)", Level::AA),
    ("1.2.6", "Sign Language (Prerecorded)", Level::AAA),
    ("1.2.7", "Extended Audio Description (Prerecorded)", Level::AAA),
    ("1.2.8", "Media Alternative (Prerecorded)", Level::AAA),
    ("1.2.9", "Audio-only (Live)", Level::AAA),
    ("1.3.1", "Info and Relationships", Level::A),
    ("1.3.2", "Meaningful Sequence", Level::A),
    ("1.3.3", "Sensory Characteristics", Level::A),
    ("1.3.4", "Orientation", Level::AA),
    ("1.3.5", "Identify Input Purpose", Level::AA),
    ("1.3.6", "Identify Purpose", Level::AAA),
    ("1.4.1", "Use of Color", Level::A),
    ("1.4.2", "Audio Control", Level::A),
    ("1.4.3", "Contrast (Minimum)", Level::AA),
    ("1.4.4", "Resize Text", Level::AA),
    ("1.4.5", "Images of Text", Level::AA),
    ("1.4.6", "Contrast (Enhanced)", Level::AAA),
    ("1.4.7", "Low or No Background Audio", Level::AAA),
    ("1.4.8", "Visual Presentation", Level::AAA),
    ("1.4.9", "Images of Text (No Exception)", Level::AAA),
    ("1.4.10", "Reflow", Level::AA),
    ("1.4.11", "Non-text Contrast", Level::AA),
    ("1.4.12", "Text Spacing", Level::AA),
    ("1.4.13", "Content on Hover or Focus", Level::AA),
    ("2.1.1", "Keyboard", Level::A),
    ("2.1.2", "No Keyboard Trap", Level::A),
    ("2.1.3", "Keyboard (No Exception)", Level::AAA),
    ("2.1.4", "Character Key Shortcuts", Level::A),
    ("2.2.1", "Timing Adjustable", Level::A),
    ("2.2.2", "Pause, Stop, Hide", Level::A),
    ("2.2.3", "No Timing", Level::AAA),
    ("2.2.4", "Interruptions", Level::AAA),
    ("2.2.5", "Re-authenticating", Level::AAA),
    ("2.2.6", "Timeouts", Level::AAA),
    ("2.3.1", "Three Flashes or Below Threshold", Level::A),
    ("2.3.2", "Three Flashes", Level::AAA),
    ("2.3.3", "Animation from Interactions", Level::AAA),
    ("2.4.1", "Bypass Blocks", Level::A),
    ("2.4.2", "Page Titled", Level::A),
    ("2.4.3", "Focus Order", Level::A),
    ("2.4.4", "Link Purpose (In Context)", Level::A),
    ("2.4.5", "Multiple Ways", Level::AA),
    ("2.4.6", "Headings and Labels", Level::AA),
    ("2.4.7", "Focus Visible", Level::AA),
    ("2.4.8", "Location", Level::AAA),
    ("2.4.9", "Link Purpose (Link Only)", Level::AAA),
    ("2.4.10", "Section Headings", Level::AAA),
    ("2.4.11", "Focus Not Obscured (Minimum)", Level::AA),
    ("2.4.12", "Focus Not Obscured (Enhanced)", Level::AAA),
    ("2.4.13", "Focus Appearance", Level::AAA),
    ("2.5.1", "Pointer Gestures", Level::A),
    ("2.5.2", "Pointer Cancellation", Level::A),
    ("2.5.3", "Label in Name", Level::A),
    ("2.5.4", "Motion Actuation", Level::A),
    ("2.5.5", "Target Size (Enhanced)", Level::AAA),
    ("2.5.6", "Concurrent Input Mechanisms", Level::AAA),
    ("2.5.7", "Dragging Movements", Level::AA),
    ("2.5.8", "Target Size (Minimum)", Level::AA),
    ("3.1.1", "Language of Page", Level::A),
    ("3.1.2", "Language of Parts", Level::AA),
    ("3.1.3", "Unusual Words", Level::AAA),
    ("3.1.4", "Abbreviations", Level::AAA),
    ("3.1.5", "Reading Level", Level::AAA),
    ("3.1.6", "Pronunciation", Level::AAA),
    ("3.2.1", "On Focus", Level::A),
    ("3.2.2", "On Input", Level::A),
    ("3.2.3", "Consistent Navigation", Level::AA),
    ("3.2.4", "Consistent Identification", Level::AA),
    ("3.2.5", "Change on Request", Level::AAA),
    ("3.2.6", "Consistent Help", Level::A),
    ("3.3.1", "Error Identification", Level::A),
    ("3.3.2", "Labels or Instructions", Level::A),
    ("3.3.3", "Error Suggestion", Level::AA),
    ("3.3.4", "Error Prevention (Legal, Financial, Data)", Level::AA),
    ("3.3.5", "Help", Level::AAA),
    ("3.3.6", "Error Prevention (All)", Level::AAA),
    ("3.3.7", "Redundant Entry", Level::A),
    ("3.3.8", "Accessible Authentication (Minimum)", Level::AA),
    ("3.3.9", "Accessible Authentication (Enhanced)", Level::AAA),
    ("4.1.2", "Name, Role, Value", Level::A),
    ("4.1.3", "Status Messages", Level::AA),
];

/// The five AA criteria remediated alongside all of Level A.
pub const IN_SCOPE_AA: [&str; 5] = ["1.4.10", "2.4.5", "2.1.1", "3.1.2", "3.2.3"];

/// Contrast (Minimum): admitted into reports because the remediation
/// pipeline carries a dedicated contrast prompt.
pub const CONTRAST_CRITERION: &str = "1.4.3";
pub const NON_TEXT_CONTENT: &str = "1.1.1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    InScope,
    OutOfScope,
}

pub fn classify_scope(criterion: &WcagCriterion) -> Scope {
    match criterion.level {
        Level::A => Scope::InScope,
        Level::AA if IN_SCOPE_AA.contains(&criterion.id.as_str()) => Scope::InScope,
        _ => Scope::OutOfScope,
    }
}

/// Whether violations of `criterion` may appear in an [`AuditReport`].
pub fn admitted_in_report(criterion: &WcagCriterion) -> bool {
    classify_scope(criterion) == Scope::InScope || criterion.id == CONTRAST_CRITERION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Minor,
    Moderate,
    Serious,
    Critical,
}

impl Severity {
    /// Maps an audit-library impact string; unknown values become `moderate`.
    pub fn from_impact(impact: Option<&str>) -> Self {
        match impact.map(str::to_ascii_lowercase).as_deref() {
            Some("minor") => Severity::Minor,
            Some("serious") => Severity::Serious,
            Some("critical") => Severity::Critical,
            _ => Severity::Moderate,
        }
    }
}

/// One step of a root-to-node path: the tag and its 1-based position among
/// the parent's element children.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub tag: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeLocator {
    pub css_selector: String,
    pub dom_path: Vec<PathStep>,
    pub snippet: String,
}

impl NodeLocator {
    pub fn new(css_selector: impl Into<String>, dom_path: Vec<PathStep>, outer_html: &str) -> Self {
        Self { css_selector: css_selector.into(), dom_path, snippet: truncate_snippet(outer_html) }
    }

    pub fn depth(&self) -> usize {
        self.dom_path.len()
    }

    /// Document-order sort key.
    pub fn position(&self) -> Vec<usize> {
        self.dom_path.iter().map(|s| s.index).collect()
    }
}

pub fn truncate_snippet(html: &str) -> String {
    if html.len() <= SNIPPET_LIMIT {
        return html.to_string();
    }
    let mut end = SNIPPET_LIMIT;
    while !html.is_char_boundary(end) {
        end -= 1;
    }
    html[..end].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Contrast,
    ImageAlt,
    General,
    Structural,
}

impl ViolationKind {
    /// Kind implied by a criterion and the element it was found on; `fallback`
    /// applies when neither contrast nor image rules match.
    pub fn infer(criterion: &WcagCriterion, tag: &str, fallback: ViolationKind) -> Self {
        if criterion.id == CONTRAST_CRITERION {
            ViolationKind::Contrast
        } else if criterion.id == NON_TEXT_CONTENT && is_image_tag(tag) {
            ViolationKind::ImageAlt
        } else if matches!(fallback, ViolationKind::Contrast | ViolationKind::ImageAlt) {
            ViolationKind::General
        } else {
            fallback
        }
    }
}

pub fn is_image_tag(tag: &str) -> bool {
    matches!(tag, "img" | "image")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub criterion: WcagCriterion,
    pub severity: Severity,
    pub locator: NodeLocator,
    pub help_text: String,
    pub kind: ViolationKind,
}

/// Stable identity of a violation: SHA-256 over rule id and selector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViolationKey(String);

impl ViolationKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ViolationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn violation_identity(v: &Violation) -> ViolationKey {
    let mut hasher = Sha256::new();
    hasher.update((v.rule_id.len() as u64).to_le_bytes());
    hasher.update(v.rule_id.as_bytes());
    hasher.update((v.locator.css_selector.len() as u64).to_le_bytes());
    hasher.update(v.locator.css_selector.as_bytes());
    ViolationKey(hex::encode(hasher.finalize()))
}

impl Violation {
    pub fn key(&self) -> ViolationKey {
        violation_identity(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rule_id.trim().is_empty() {
            return Err(ModelError::InvalidViolation("empty rule id".into()));
        }
        if self.locator.css_selector.trim().is_empty() {
            return Err(ModelError::InvalidViolation(format!("{}: empty selector", self.rule_id)));
        }
        let is_contrast = self.criterion.id == CONTRAST_CRITERION;
        if (self.kind == ViolationKind::Contrast) != is_contrast {
            return Err(ModelError::InvalidViolation(format!(
                "{}: contrast kind must match criterion {CONTRAST_CRITERION}",
                self.rule_id
            )));
        }
        if self.kind == ViolationKind::ImageAlt && self.criterion.id != NON_TEXT_CONTENT {
            return Err(ModelError::InvalidViolation(format!(
                "{}: image_alt kind requires criterion {NON_TEXT_CONTENT}",
                self.rule_id
            )));
        }
        Ok(())
    }

    fn order_key(&self) -> (Vec<usize>, &str, &str) {
        (self.locator.position(), &self.rule_id, &self.locator.css_selector)
    }

    // Total order used to pick one representative among same-key duplicates.
    fn tie_key(&self) -> (Vec<usize>, Severity, &str, &str, &[PathStep], &str) {
        (
            self.locator.position(),
            self.severity,
            &self.help_text,
            &self.locator.snippet,
            &self.locator.dom_path,
            self.criterion.id(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scanner {
    NativeRules,
    InjectedAudit,
    Combined,
}

/// A deduplicated, scope-filtered set of violations for one document or
/// component, ordered by document position then rule id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub source: String,
    violations: Vec<Violation>,
    pub scanned_at: DateTime<Utc>,
    pub scanner: Scanner,
}

impl AuditReport {
    pub fn new(source: impl Into<String>, scanner: Scanner, violations: impl IntoIterator<Item = Violation>) -> Self {
        Self::with_timestamp(source, scanner, violations, Utc::now())
    }

    pub fn with_timestamp(
        source: impl Into<String>,
        scanner: Scanner,
        violations: impl IntoIterator<Item = Violation>,
        scanned_at: DateTime<Utc>,
    ) -> Self {
        let mut unique: BTreeMap<ViolationKey, Violation> = BTreeMap::new();
        for v in violations {
            if !admitted_in_report(&v.criterion) {
                tracing::debug!(rule = %v.rule_id, criterion = %v.criterion, "dropping out-of-scope violation");
                continue;
            }
            match unique.entry(v.key()) {
                std::collections::btree_map::Entry::Vacant(slot) => {
                    slot.insert(v);
                }
                std::collections::btree_map::Entry::Occupied(mut slot) => {
                    if v.tie_key() < slot.get().tie_key() {
                        slot.insert(v);
                    }
                }
            }
        }
        let mut violations: Vec<Violation> = unique.into_values().collect();
        violations.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        Self { source: source.into(), violations, scanned_at, scanner }
    }

    pub fn empty(source: impl Into<String>, scanner: Scanner) -> Self {
        Self::new(source, scanner, Vec::new())
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn keys(&self) -> std::collections::BTreeSet<ViolationKey> {
        self.violations.iter().map(Violation::key).collect()
    }

    pub fn contains_key(&self, key: &ViolationKey) -> bool {
        self.violations.iter().any(|v| &v.key() == key)
    }
}

/// Union of two reports of the same source, deduplicated by identity key.
/// The scanner becomes [`Scanner::Combined`] when the inputs disagree.
pub fn merge_reports(a: &AuditReport, b: &AuditReport) -> Result<AuditReport, ModelError> {
    if a.source != b.source {
        return Err(ModelError::SourceMismatch { left: a.source.clone(), right: b.source.clone() });
    }
    let scanner = if a.scanner == b.scanner { a.scanner } else { Scanner::Combined };
    let scanned_at = a.scanned_at.max(b.scanned_at);
    Ok(AuditReport::with_timestamp(
        a.source.clone(),
        scanner,
        a.violations.iter().chain(b.violations.iter()).cloned(),
        scanned_at,
    ))
}
