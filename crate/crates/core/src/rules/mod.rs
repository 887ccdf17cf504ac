//! Native static rule engine.

pub mod checks;
pub mod color;
pub mod style;

use dom_query::Document;

use crate::dom;
use crate::model::{AuditReport, Scanner, Severity, Violation, ViolationKind, WcagCriterion};

pub use color::{contrast_ratio, relative_luminance, ColorPair, Rgb};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleDescriptor {
    pub rule_id: &'static str,
    pub criterion_id: &'static str,
    pub severity: Severity,
    pub kind: ViolationKind,
    pub description: &'static str,
}

impl RuleDescriptor {
    pub fn criterion(&self) -> WcagCriterion {
        WcagCriterion::lookup(self.criterion_id).expect("catalog criteria are in the WCAG table")
    }
}

const fn rule(
    rule_id: &'static str,
    criterion_id: &'static str,
    severity: Severity,
    kind: ViolationKind,
    description: &'static str,
) -> RuleDescriptor {
    RuleDescriptor { rule_id, criterion_id, severity, kind, description }
}

use Severity::{Critical, Moderate, Serious};
use ViolationKind::{Contrast, General, ImageAlt, Structural};

static CATALOG: &[RuleDescriptor] = &[
    rule("image-alt", "1.1.1", Critical, ImageAlt, "Images must have alternative text"),
    rule("html-has-lang", "3.1.1", Serious, Structural, "<html> element must have a lang attribute"),
    rule("html-lang-valid", "3.1.1", Serious, Structural, "<html> element must have a valid value for the lang attribute"),
    rule("valid-lang", "3.1.2", Serious, General, "lang attribute must have a valid value"),
    rule("color-contrast", "1.4.3", Serious, Contrast, "Elements must meet minimum color contrast ratio thresholds"),
    rule("link-name", "2.4.4", Serious, General, "Links must have discernible text"),
    rule("button-name", "4.1.2", Critical, General, "Buttons must have discernible text"),
    rule("label", "3.3.2", Critical, General, "Form elements must have labels"),
    rule("document-title", "2.4.2", Serious, Structural, "Documents must have <title> element to aid in navigation"),
    rule("heading-order", "1.3.1", Moderate, Structural, "Heading levels should only increase by one"),
    rule("aria-valid-attr", "4.1.2", Critical, General, "ARIA attributes must conform to valid names"),
    rule(
        "pointer-only-handler",
        "2.1.1",
        Serious,
        General,
        "Elements with pointer event handlers must be focusable and operable from the keyboard",
    ),
    rule("tabindex", "2.1.1", Serious, General, "Elements should not have tabindex greater than zero"),
    rule(
        "multiple-ways",
        "2.4.5",
        Moderate,
        Structural,
        "Provide more than one way to locate a page within a set of pages",
    ),
    rule(
        "consistent-navigation",
        "3.2.3",
        Moderate,
        Structural,
        "Navigation repeated across pages must occur in the same relative order",
    ),
    rule("reflow", "1.4.10", Serious, General, "Content must reflow at 320 CSS px without horizontal scrolling"),
];

pub fn catalog() -> &'static [RuleDescriptor] {
    CATALOG
}

pub fn descriptor(rule_id: &str) -> Option<&'static RuleDescriptor> {
    CATALOG.iter().find(|r| r.rule_id == rule_id)
}

/// Full documents get document-level rules and browser default colors;
/// component templates do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Document,
    Template,
}

#[derive(Debug, Clone, Default)]
pub struct ScanOptions {
    pub source: String,
    pub base_url: Option<url::Url>,
    /// Sibling documents of the same site, as HTML text.
    pub pages: Vec<String>,
    pub mode: ScanMode,
    /// Additional CSS treated as if it were in a style block.
    pub extra_css: Option<String>,
}

impl ScanOptions {
    pub fn document(source: impl Into<String>) -> Self {
        Self { source: source.into(), ..Self::default() }
    }

    pub fn template(source: impl Into<String>) -> Self {
        Self { source: source.into(), mode: ScanMode::Template, ..Self::default() }
    }
}

/// Scans a full HTML document with the native catalog.
pub fn scan_document(html: &str, base_url: Option<&url::Url>, pages: &[String]) -> AuditReport {
    let source = base_url.map(|u| u.to_string()).unwrap_or_default();
    let opts = ScanOptions { source, base_url: base_url.cloned(), pages: pages.to_vec(), ..ScanOptions::default() };
    scan_with(html, &opts)
}

pub fn scan_with(html: &str, opts: &ScanOptions) -> AuditReport {
    scan_parsed(&dom::parse(html), opts)
}

pub fn scan_parsed(doc: &Document, opts: &ScanOptions) -> AuditReport {
    let mut sheet = style::StyleSheet::from_document(doc);
    if let Some(css) = &opts.extra_css {
        sheet.add_css(css);
    }
    let mut found = Vec::new();
    checks::image_alt(doc, &mut found);
    if opts.mode == ScanMode::Document {
        checks::html_lang(doc, &mut found);
        checks::document_title(doc, &mut found);
        checks::multiple_ways(doc, opts, &mut found);
        checks::consistent_navigation(doc, opts, &mut found);
    }
    checks::valid_lang(doc, &mut found);
    checks::color_contrast(doc, &sheet, opts, &mut found);
    checks::link_name(doc, &mut found);
    checks::button_name(doc, &mut found);
    checks::form_label(doc, &mut found);
    checks::heading_order(doc, &mut found);
    checks::aria_valid_attr(doc, &mut found);
    checks::keyboard(doc, &mut found);
    checks::reflow(doc, &sheet, &mut found);

    let violations = found.into_iter().filter_map(|f| {
        let desc = descriptor(f.rule_id).expect("checks only emit catalog rules");
        let locator = match dom::build_locator(doc, &f.node) {
            Ok(l) => l,
            Err(err) => {
                tracing::warn!(rule = f.rule_id, %err, "cannot locate violating node");
                return None;
            }
        };
        let criterion = desc.criterion();
        let tag = dom::tag_of(&f.node).unwrap_or_default();
        Some(Violation {
            rule_id: desc.rule_id.to_string(),
            kind: ViolationKind::infer(&criterion, &tag, desc.kind),
            criterion,
            severity: desc.severity,
            locator,
            help_text: f.help.unwrap_or_else(|| desc.description.to_string()),
        })
    });
    AuditReport::new(opts.source.clone(), Scanner::NativeRules, violations.collect::<Vec<_>>())
}
