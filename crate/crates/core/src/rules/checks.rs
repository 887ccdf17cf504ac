//! Individual catalog checks. Each returns the offending element plus an
//! optional node-specific help text.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use dom_query::{Document, NodeRef};
use regex::Regex;

use super::color::{ColorPair, Rgb};
use super::style::{self, StyleSheet};
use super::{ScanMode, ScanOptions};
use crate::dom;

pub struct Finding<'a> {
    pub rule_id: &'static str,
    pub node: NodeRef<'a>,
    pub help: Option<String>,
}

impl<'a> Finding<'a> {
    fn new(rule_id: &'static str, node: NodeRef<'a>) -> Self {
        Self { rule_id, node, help: None }
    }
}

const ARIA_ATTRIBUTES: &[&str] = &[
    "aria-activedescendant", "aria-atomic", "aria-autocomplete", "aria-braillelabel",
    "aria-brailleroledescription", "aria-busy", "aria-checked", "aria-colcount", "aria-colindex",
    "aria-colindextext", "aria-colspan", "aria-controls", "aria-current", "aria-describedby",
    "aria-description", "aria-details", "aria-disabled", "aria-dropeffect", "aria-errormessage",
    "aria-expanded", "aria-flowto", "aria-grabbed", "aria-haspopup", "aria-hidden", "aria-invalid",
    "aria-keyshortcuts", "aria-label", "aria-labelledby", "aria-level", "aria-live", "aria-modal",
    "aria-multiline", "aria-multiselectable", "aria-orientation", "aria-owns", "aria-placeholder",
    "aria-posinset", "aria-pressed", "aria-readonly", "aria-relevant", "aria-required",
    "aria-roledescription", "aria-rowcount", "aria-rowindex", "aria-rowindextext", "aria-rowspan",
    "aria-selected", "aria-setsize", "aria-sort", "aria-valuemax", "aria-valuemin", "aria-valuenow",
    "aria-valuetext",
];

const ISO_639_1: &str = "aa ab ae af ak am an ar as av ay az ba be bg bh bi bm bn bo br bs ca ce ch co cr cs cu cv cy \
da de dv dz ee el en eo es et eu fa ff fi fj fo fr fy ga gd gl gn gu gv ha he hi ho hr ht hu hy hz ia id ie ig ii ik \
io is it iu ja jv ka kg ki kj kk kl km kn ko kr ks ku kv kw ky la lb lg li ln lo lt lu lv mg mh mi mk ml mn mr ms mt \
my na nb nd ne ng nl nn no nr nv ny oc oj om or os pa pi pl ps pt qu rm rn ro ru rw sa sc sd se sg si sk sl sm sn so \
sq sr ss st su sv sw ta te tg th ti tk tl tn to tr ts tt tw ty ug uk ur uz ve vi vo wa wo xh yi yo za zh zu";

/// Well-formed tag whose primary subtag is a known two-letter code or any
/// three-letter code.
pub fn is_valid_lang(value: &str) -> bool {
    static SHAPE: OnceLock<Regex> = OnceLock::new();
    let shape = SHAPE.get_or_init(|| Regex::new(r"^[A-Za-z]{2,3}(-[A-Za-z0-9]{1,8})*$").unwrap());
    let value = value.trim();
    if !shape.is_match(value) {
        return false;
    }
    let primary = value.split('-').next().unwrap_or_default().to_ascii_lowercase();
    primary.len() == 3 || ISO_639_1.split_whitespace().any(|code| code == primary)
}

fn inline_style_hides(node: &NodeRef) -> bool {
    node.attr("style").is_some_and(|s| {
        style::parse_declarations(&s)
            .iter()
            .any(|(p, v)| (p == "display" && v == "none") || (p == "visibility" && v == "hidden"))
    })
}

/// Hidden from assistive technology by attribute or inline style.
pub fn is_hidden(node: &NodeRef) -> bool {
    std::iter::once(*node).chain(dom::ancestors(node)).filter(|n| n.is_element()).any(|n| {
        n.has_attr("hidden")
            || n.attr("aria-hidden").is_some_and(|v| v.trim() == "true")
            || inline_style_hides(&n)
            || matches!(dom::tag_of(&n).as_deref(), Some("template" | "noscript" | "head" | "script" | "style"))
    })
}

fn has_role(node: &NodeRef, roles: &[&str]) -> bool {
    node.attr("role")
        .is_some_and(|r| r.split_whitespace().next().is_some_and(|first| roles.contains(&first.to_ascii_lowercase().as_str())))
}

fn labelledby_text(doc: &Document, node: &NodeRef) -> String {
    let Some(ids) = node.attr("aria-labelledby") else {
        return String::new();
    };
    let mut parts = Vec::new();
    for id in ids.split_whitespace() {
        if let Some(target) = dom::elements(doc).into_iter().find(|n| n.attr("id").is_some_and(|v| &*v == id)) {
            parts.push(dom::collapsed_text(&target));
        }
    }
    parts.join(" ").trim().to_string()
}

/// Name computed from content: text plus alt text of descendant images.
fn content_name(node: &NodeRef) -> String {
    let mut name = dom::collapsed_text(node);
    for d in dom::descendant_elements(node) {
        if is_hidden(&d) {
            continue;
        }
        if dom::tag_of(&d).as_deref() == Some("img") {
            if let Some(alt) = dom::nonblank_attr(&d, "alt") {
                name.push(' ');
                name.push_str(&alt);
            }
        }
        if let Some(label) = dom::nonblank_attr(&d, "aria-label") {
            name.push(' ');
            name.push_str(&label);
        }
    }
    name.trim().to_string()
}

/// Simplified accessible name: labelledby, aria-label, content, title.
pub fn accessible_name(doc: &Document, node: &NodeRef) -> String {
    let by = labelledby_text(doc, node);
    if !by.is_empty() {
        return by;
    }
    if let Some(label) = dom::nonblank_attr(node, "aria-label") {
        return label;
    }
    let content = content_name(node);
    if !content.is_empty() {
        return content;
    }
    dom::nonblank_attr(node, "title").unwrap_or_default()
}

pub fn image_alt<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    for node in dom::elements(doc) {
        if dom::tag_of(&node).as_deref() != Some("img") || is_hidden(&node) {
            continue;
        }
        if node.has_attr("alt") || has_role(&node, &["presentation", "none"]) {
            continue;
        }
        if dom::nonblank_attr(&node, "aria-label").is_some() || !labelledby_text(doc, &node).is_empty() {
            continue;
        }
        if dom::nonblank_attr(&node, "title").is_some() {
            continue;
        }
        out.push(Finding::new("image-alt", node));
    }
}

pub fn html_lang<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    let Some(html) = dom::find_first(doc, "html") else {
        return;
    };
    match dom::nonblank_attr(&html, "lang") {
        None => out.push(Finding::new("html-has-lang", html)),
        Some(lang) if !is_valid_lang(&lang) => out.push(Finding {
            rule_id: "html-lang-valid",
            node: html,
            help: Some(format!("<html> element must have a valid value for the lang attribute, found {lang:?}")),
        }),
        Some(_) => {}
    }
}

pub fn valid_lang<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    for node in dom::elements(doc) {
        if dom::tag_of(&node).as_deref() == Some("html") {
            continue;
        }
        let Some(lang) = node.attr("lang") else { continue };
        let lang = lang.trim().to_string();
        if lang.is_empty() || lang.contains("{{") || is_valid_lang(&lang) {
            continue;
        }
        out.push(Finding {
            rule_id: "valid-lang",
            node,
            help: Some(format!("lang attribute must have a valid value, found {lang:?}")),
        });
    }
}

pub fn document_title<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    let titled = dom::elements(doc)
        .into_iter()
        .find(|n| dom::tag_of(n).as_deref() == Some("title"))
        .is_some_and(|t| !dom::collapsed_text(&t).is_empty());
    if !titled {
        if let Some(html) = dom::find_first(doc, "html") {
            out.push(Finding::new("document-title", html));
        }
    }
}

pub fn link_name<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    for node in dom::elements(doc) {
        if dom::tag_of(&node).as_deref() != Some("a") || !node.has_attr("href") || is_hidden(&node) {
            continue;
        }
        if has_role(&node, &["presentation", "none"]) {
            continue;
        }
        if accessible_name(doc, &node).is_empty() {
            out.push(Finding::new("link-name", node));
        }
    }
}

pub fn button_name<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    for node in dom::elements(doc) {
        if is_hidden(&node) {
            continue;
        }
        let tag = dom::tag_of(&node).unwrap_or_default();
        let is_button = match tag.as_str() {
            "button" => true,
            "input" => node.attr("type").is_some_and(|t| t.eq_ignore_ascii_case("button")),
            _ => has_role(&node, &["button"]),
        };
        if !is_button {
            continue;
        }
        let named = if tag == "input" {
            dom::nonblank_attr(&node, "value").is_some()
                || dom::nonblank_attr(&node, "aria-label").is_some()
                || !labelledby_text(doc, &node).is_empty()
                || dom::nonblank_attr(&node, "title").is_some()
        } else {
            !accessible_name(doc, &node).is_empty()
        };
        if !named {
            out.push(Finding::new("button-name", node));
        }
    }
}

fn is_labelable_control(node: &NodeRef) -> bool {
    match dom::tag_of(node).as_deref() {
        Some("select" | "textarea") => true,
        Some("input") => {
            let kind = node.attr("type").map(|t| t.to_ascii_lowercase()).unwrap_or_else(|| "text".into());
            !matches!(kind.as_str(), "hidden" | "submit" | "reset" | "button" | "image")
        }
        _ => false,
    }
}

pub fn form_label<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    let all = dom::elements(doc);
    let label_targets: BTreeSet<String> = all
        .iter()
        .filter(|n| dom::tag_of(n).as_deref() == Some("label"))
        .filter(|n| !dom::collapsed_text(n).is_empty())
        .filter_map(|n| dom::nonblank_attr(n, "for"))
        .collect();
    for node in &all {
        if !is_labelable_control(node) || is_hidden(node) {
            continue;
        }
        let wrapped = dom::ancestors(node)
            .iter()
            .any(|a| dom::tag_of(a).as_deref() == Some("label") && !dom::collapsed_text(a).is_empty());
        let by_for = dom::nonblank_attr(node, "id").is_some_and(|id| label_targets.contains(&id));
        let labelled = wrapped
            || by_for
            || dom::nonblank_attr(node, "aria-label").is_some()
            || !labelledby_text(doc, node).is_empty()
            || dom::nonblank_attr(node, "title").is_some();
        if !labelled {
            out.push(Finding::new("label", *node));
        }
    }
}

fn heading_level(node: &NodeRef) -> Option<u32> {
    let tag = dom::tag_of(node)?;
    if let Some(level) = tag.strip_prefix('h').and_then(|d| d.parse::<u32>().ok()).filter(|l| (1..=6).contains(l)) {
        return Some(level);
    }
    if has_role(node, &["heading"]) {
        return node.attr("aria-level").and_then(|l| l.trim().parse().ok()).or(Some(2));
    }
    None
}

pub fn heading_order<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    let mut previous: Option<u32> = None;
    for node in dom::elements(doc) {
        if is_hidden(&node) {
            continue;
        }
        let Some(level) = heading_level(&node) else { continue };
        if let Some(prev) = previous {
            if level > prev + 1 {
                out.push(Finding {
                    rule_id: "heading-order",
                    node,
                    help: Some(format!("Heading levels should only increase by one: h{prev} is followed by h{level}")),
                });
            }
        }
        previous = Some(level);
    }
}

pub fn aria_valid_attr<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    for node in dom::elements(doc) {
        let invalid: Vec<String> = dom::attr_names(&node)
            .into_iter()
            .filter(|name| name.starts_with("aria-") && !ARIA_ATTRIBUTES.contains(&name.as_str()))
            .collect();
        if !invalid.is_empty() {
            out.push(Finding {
                rule_id: "aria-valid-attr",
                node,
                help: Some(format!("ARIA attribute name is not valid: {}", invalid.join(", "))),
            });
        }
    }
}

fn handler_event(name: &str) -> Option<String> {
    if let Some(event) = name.strip_prefix("on") {
        return Some(event.to_string());
    }
    name.strip_prefix('(').and_then(|n| n.strip_suffix(')')).map(|e| e.split('.').next().unwrap_or(e).to_string())
}

fn is_natively_focusable(node: &NodeRef) -> bool {
    match dom::tag_of(node).as_deref() {
        Some("a" | "area") => node.has_attr("href"),
        Some("button" | "input" | "select" | "textarea" | "summary" | "iframe") => true,
        _ => false,
    }
}

pub fn keyboard<'a>(doc: &'a Document, out: &mut Vec<Finding<'a>>) {
    const POINTER: &[&str] = &["click", "dblclick", "mousedown", "mouseup"];
    const KEYS: &[&str] = &["keydown", "keyup", "keypress"];
    for node in dom::elements(doc) {
        let events: Vec<String> = dom::attr_names(&node).iter().filter_map(|n| handler_event(n)).collect();
        let pointer = events.iter().any(|e| POINTER.contains(&e.as_str()));
        if pointer && !is_natively_focusable(&node) && !is_hidden(&node) {
            let focusable = node.attr("tabindex").and_then(|t| t.trim().parse::<i32>().ok()).is_some_and(|t| t >= 0);
            let keyed = events.iter().any(|e| KEYS.contains(&e.as_str()));
            if !(focusable && keyed) {
                out.push(Finding::new("pointer-only-handler", node));
            }
        }
        if node.attr("tabindex").and_then(|t| t.trim().parse::<i32>().ok()).is_some_and(|t| t > 0) {
            out.push(Finding::new("tabindex", node));
        }
    }
}

fn nav_landmarks<'a>(doc: &'a Document) -> Vec<NodeRef<'a>> {
    dom::elements(doc)
        .into_iter()
        .filter(|n| dom::tag_of(n).as_deref() == Some("nav") || has_role(n, &["navigation"]))
        .collect()
}

/// (link text, href) pairs in document order over every nav landmark.
pub fn nav_sequence(doc: &Document) -> Vec<(String, String)> {
    let mut seq = Vec::new();
    for nav in nav_landmarks(doc) {
        for link in dom::descendant_elements(&nav) {
            if dom::tag_of(&link).as_deref() == Some("a") {
                seq.push((accessible_name(doc, &link), dom::attr(&link, "href").unwrap_or_default()));
            }
        }
    }
    seq
}

fn has_search(doc: &Document) -> bool {
    dom::elements(doc).iter().any(|n| match dom::tag_of(n).as_deref() {
        Some("search") => true,
        Some("input") => n.attr("type").is_some_and(|t| t.eq_ignore_ascii_case("search")),
        _ => has_role(n, &["search"]),
    })
}

fn has_sitemap_link(doc: &Document) -> bool {
    dom::elements(doc).iter().filter(|n| dom::tag_of(n).as_deref() == Some("a")).any(|a| {
        let href = dom::attr(a, "href").unwrap_or_default().to_ascii_lowercase();
        let text = dom::collapsed_text(a).to_ascii_lowercase();
        href.contains("sitemap") || text.contains("sitemap") || text.contains("site map")
    })
}

/// Applies when the page is part of a set or carries navigation at all.
pub fn multiple_ways<'a>(doc: &'a Document, opts: &ScanOptions, out: &mut Vec<Finding<'a>>) {
    let navs = nav_landmarks(doc);
    if navs.is_empty() && opts.pages.is_empty() {
        return;
    }
    let ways = usize::from(!navs.is_empty()) + usize::from(has_search(doc)) + usize::from(has_sitemap_link(doc));
    if ways >= 2 {
        return;
    }
    let target = navs.first().copied().or_else(|| dom::find_first(doc, "body"));
    if let Some(node) = target {
        out.push(Finding {
            rule_id: "multiple-ways",
            node,
            help: Some(format!(
                "Provide at least two ways to locate pages (navigation, search, site map); found {ways}"
            )),
        });
    }
}

fn is_prefix_equal(a: &[(String, String)], b: &[(String, String)]) -> bool {
    let n = a.len().min(b.len());
    a[..n] == b[..n]
}

pub fn consistent_navigation<'a>(doc: &'a Document, opts: &ScanOptions, out: &mut Vec<Finding<'a>>) {
    if opts.pages.is_empty() {
        tracing::debug!(source = %opts.source, "consistent-navigation skipped: no sibling pages");
        return;
    }
    let own = nav_sequence(doc);
    let Some(nav) = nav_landmarks(doc).into_iter().next() else {
        return;
    };
    let mismatched = opts
        .pages
        .iter()
        .map(|page| nav_sequence(&dom::parse(page)))
        .any(|other| !is_prefix_equal(&own, &other));
    if mismatched {
        out.push(Finding::new("consistent-navigation", nav));
    }
}

fn css_px(value: &str) -> Option<f64> {
    let v = value.trim().to_ascii_lowercase();
    v.strip_suffix("px").and_then(|n| n.trim().parse().ok())
}

/// Elements forced wider than the 320 CSS px reflow viewport.
pub fn reflow<'a>(doc: &'a Document, sheet: &StyleSheet, out: &mut Vec<Finding<'a>>) {
    const REFLOW_WIDTH: f64 = 320.0;
    for node in dom::elements(doc) {
        let tag = dom::tag_of(&node).unwrap_or_default();
        if matches!(tag.as_str(), "img" | "video" | "canvas" | "svg" | "table" | "iframe" | "pre" | "code" | "picture") {
            continue;
        }
        let forced = ["width", "min-width"]
            .iter()
            .filter_map(|p| sheet.cascaded(&node, p))
            .filter_map(|v| css_px(&v))
            .fold(0.0_f64, f64::max);
        if forced > REFLOW_WIDTH {
            out.push(Finding {
                rule_id: "reflow",
                node,
                help: Some(format!(
                    "Content must reflow at 320 CSS px without horizontal scrolling; element has a fixed width of {forced}px"
                )),
            });
        }
    }
}

fn owns_text(node: &NodeRef) -> bool {
    !dom::own_text(node).trim().is_empty()
}

pub fn color_contrast<'a>(doc: &'a Document, sheet: &StyleSheet, opts: &ScanOptions, out: &mut Vec<Finding<'a>>) {
    if sheet.opaque {
        tracing::info!(source = %opts.source, "color-contrast skipped: stylesheet not statically resolvable");
        return;
    }
    for node in dom::elements(doc) {
        if !owns_text(&node) || is_hidden(&node) {
            continue;
        }
        if matches!(dom::tag_of(&node).as_deref(), Some("html" | "title" | "option" | "textarea")) {
            continue;
        }
        let fg = style::foreground(sheet, &node);
        let bg = style::background(sheet, &node);
        let (fg, bg) = match opts.mode {
            ScanMode::Document => (fg.or_default(Rgb::BLACK), bg.or_default(Rgb::WHITE)),
            ScanMode::Template => match (fg, bg) {
                (style::Resolved::Known(f), style::Resolved::Known(b)) => (Some(f), Some(b)),
                _ => (None, None),
            },
        };
        let (Some(fg), Some(bg)) = (fg, bg) else { continue };
        let size = style::font_size_px(sheet, &node);
        let bold = style::is_bold(sheet, &node);
        let Ok(pair) = ColorPair::new(fg, bg, size, bold) else { continue };
        if pair.fails() {
            out.push(Finding { rule_id: "color-contrast", node, help: Some(contrast_help(&pair)) });
        }
    }
}

pub fn contrast_help(pair: &ColorPair) -> String {
    format!(
        "Element has insufficient color contrast of {:.2} (foreground color: {}, background color: {}, font size: {:.1}pt ({}px), font weight: {}). Expected contrast ratio of {}:1",
        pair.ratio(),
        pair.foreground.to_hex(),
        pair.background.to_hex(),
        pair.font_size_px * 0.75,
        (pair.font_size_px * 100.0).round() / 100.0,
        if pair.is_bold { "bold" } else { "normal" },
        pair.required_ratio(),
    )
}
