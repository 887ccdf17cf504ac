//! Static resolution of text and background colors from inline styles,
//! presentational attributes and `<style>` blocks with simple selectors.
//! Anything needing layout or the full cascade is reported as unresolvable.

use std::sync::OnceLock;

use dom_query::{Document, NodeRef};
use regex::Regex;

use super::color::{parse_css_color, Rgb};
use crate::dom;

const DEFAULT_FONT_PX: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
struct SimpleSelector {
    tag: Option<String>,
    id: Option<String>,
    classes: Vec<String>,
}

impl SimpleSelector {
    fn parse(text: &str) -> Option<Self> {
        static PATTERN: OnceLock<Regex> = OnceLock::new();
        let re = PATTERN.get_or_init(|| {
            Regex::new(r"^(?P<tag>[a-zA-Z][a-zA-Z0-9-]*|\*)?(?P<id>#[A-Za-z_-][A-Za-z0-9_-]*)?(?P<cls>(?:\.[A-Za-z_-][A-Za-z0-9_-]*)*)$")
                .unwrap()
        });
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        let caps = re.captures(text)?;
        let tag = caps.name("tag").map(|m| m.as_str().to_ascii_lowercase()).filter(|t| t != "*");
        let id = caps.name("id").map(|m| m.as_str()[1..].to_string());
        let classes = caps
            .name("cls")
            .map(|m| m.as_str().split('.').filter(|c| !c.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        Some(Self { tag, id, classes })
    }

    fn specificity(&self) -> (u32, u32, u32) {
        (u32::from(self.id.is_some()), self.classes.len() as u32, u32::from(self.tag.is_some()))
    }

    fn matches(&self, node: &NodeRef) -> bool {
        if let Some(tag) = &self.tag {
            if dom::tag_of(node).as_deref() != Some(tag.as_str()) {
                return false;
            }
        }
        if let Some(id) = &self.id {
            if node.attr("id").as_deref() != Some(id.as_str()) {
                return false;
            }
        }
        if !self.classes.is_empty() {
            let class = node.attr("class").map(|c| c.to_string()).unwrap_or_default();
            let have: Vec<&str> = class.split_whitespace().collect();
            if !self.classes.iter().all(|c| have.contains(&c.as_str())) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Rule {
    selector: SimpleSelector,
    order: usize,
    declarations: Vec<(String, String)>,
}

/// Properties whose values feed the contrast computation.
fn affects_contrast(property: &str) -> bool {
    matches!(property, "color" | "font-size" | "font-weight" | "font" | "opacity" | "visibility")
        || property.starts_with("background")
}

pub fn parse_declarations(text: &str) -> Vec<(String, String)> {
    text.split(';')
        .filter_map(|decl| {
            let (prop, value) = decl.split_once(':')?;
            let prop = prop.trim().to_ascii_lowercase();
            let value = value.trim().trim_end_matches("!important").trim().to_string();
            (!prop.is_empty() && !value.is_empty()).then_some((prop, value))
        })
        .collect()
}

fn strip_comments(css: &str) -> String {
    static COMMENT: OnceLock<Regex> = OnceLock::new();
    COMMENT.get_or_init(|| Regex::new(r"(?s)/\*.*?\*/").unwrap()).replace_all(css, "").into_owned()
}

#[derive(Debug, Default)]
pub struct StyleSheet {
    rules: Vec<Rule>,
    /// A rule we cannot evaluate statically touches contrast-relevant
    /// properties, so computed colors may differ from what we derive.
    pub opaque: bool,
}

impl StyleSheet {
    pub fn from_document(doc: &Document) -> Self {
        let mut sheet = StyleSheet::default();
        for node in dom::elements(doc) {
            if dom::tag_of(&node).as_deref() == Some("style") {
                sheet.add_css(&node.text());
            }
        }
        sheet
    }

    pub fn add_css(&mut self, css: &str) {
        let css = strip_comments(css);
        let mut rest = css.as_str();
        while let Some(open) = rest.find('{') {
            let prelude = rest[..open].trim();
            if prelude.starts_with('@') {
                // At-rule block: skip its balanced body; conditional rules may apply.
                let body_end = balanced_end(&rest[open..]).map(|e| open + e).unwrap_or(rest.len());
                let body = &rest[open..body_end];
                if body.split(['{', '}', ';']).any(|d| d.split_once(':').is_some_and(|(p, _)| affects_contrast(p.trim()))) {
                    self.opaque = true;
                }
                rest = rest.get(body_end..).unwrap_or("");
                continue;
            }
            let Some(close) = rest[open..].find('}').map(|c| open + c) else {
                break;
            };
            let declarations = parse_declarations(&rest[open + 1..close]);
            let relevant = declarations.iter().any(|(p, _)| affects_contrast(p));
            for part in prelude.split(',') {
                match SimpleSelector::parse(part) {
                    Some(selector) => {
                        let order = self.rules.len();
                        self.rules.push(Rule { selector, order, declarations: declarations.clone() });
                    }
                    None if relevant => self.opaque = true,
                    None => {}
                }
            }
            rest = &rest[close + 1..];
        }
    }

    /// Cascaded (not inherited) value of `property` on `node`.
    pub fn cascaded(&self, node: &NodeRef, property: &str) -> Option<String> {
        if let Some(style) = node.attr("style") {
            if let Some((_, v)) = parse_declarations(&style).into_iter().rev().find(|(p, _)| p == property) {
                return Some(v);
            }
        }
        let mut best: Option<((u32, u32, u32), usize, String)> = None;
        for rule in &self.rules {
            if !rule.selector.matches(node) {
                continue;
            }
            if let Some((_, v)) = rule.declarations.iter().rev().find(|(p, _)| p == property) {
                let rank = (rule.selector.specificity(), rule.order);
                if best.as_ref().is_none_or(|(s, o, _)| (*s, *o) <= rank) {
                    best = Some((rank.0, rank.1, v.clone()));
                }
            }
        }
        best.map(|(_, _, v)| v).or_else(|| presentational(node, property))
    }
}

fn balanced_end(text: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, ch) in text.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn presentational(node: &NodeRef, property: &str) -> Option<String> {
    let tag = dom::tag_of(node)?;
    match (property, tag.as_str()) {
        ("color", "font") => dom::nonblank_attr(node, "color"),
        ("color", "body") => dom::nonblank_attr(node, "text"),
        ("background-color", _) => dom::nonblank_attr(node, "bgcolor"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolved<T> {
    Known(T),
    /// Nothing declared anywhere up the ancestor chain.
    Default,
    Unresolvable,
}

impl Resolved<Rgb> {
    pub fn or_default(self, default: Rgb) -> Option<Rgb> {
        match self {
            Resolved::Known(c) => Some(c),
            Resolved::Default => Some(default),
            Resolved::Unresolvable => None,
        }
    }
}

/// Resolves the inherited text color of `node`.
pub fn foreground(sheet: &StyleSheet, node: &NodeRef) -> Resolved<Rgb> {
    for el in std::iter::once(*node).chain(dom::ancestors(node)).filter(|n| n.is_element()) {
        if el.has_attr("data-a11y-dynamic-style") {
            return Resolved::Unresolvable;
        }
        if let Some(value) = sheet.cascaded(&el, "color") {
            if value.eq_ignore_ascii_case("inherit") {
                continue;
            }
            return parse_css_color(&value).map_or(Resolved::Unresolvable, Resolved::Known);
        }
    }
    Resolved::Default
}

fn background_of(sheet: &StyleSheet, el: &NodeRef) -> Option<Resolved<Rgb>> {
    if sheet.cascaded(el, "background-image").is_some_and(|v| !v.eq_ignore_ascii_case("none")) {
        return Some(Resolved::Unresolvable);
    }
    if let Some(shorthand) = sheet.cascaded(el, "background") {
        if shorthand.contains("url(") || shorthand.contains("gradient(") {
            return Some(Resolved::Unresolvable);
        }
        if let Some(c) = parse_css_color(&shorthand) {
            return Some(Resolved::Known(c));
        }
        if !shorthand.eq_ignore_ascii_case("none") && !shorthand.eq_ignore_ascii_case("transparent") {
            // Multi-token shorthand: look for a color token.
            let colors: Vec<Rgb> = shorthand.split_whitespace().filter_map(parse_css_color).collect();
            return Some(match colors.as_slice() {
                [c] => Resolved::Known(*c),
                _ => Resolved::Unresolvable,
            });
        }
    }
    let value = sheet.cascaded(el, "background-color")?;
    if value.eq_ignore_ascii_case("transparent") || value.eq_ignore_ascii_case("inherit") {
        return None;
    }
    Some(parse_css_color(&value).map_or(Resolved::Unresolvable, Resolved::Known))
}

/// Nearest opaque background declared on `node` or an ancestor.
pub fn background(sheet: &StyleSheet, node: &NodeRef) -> Resolved<Rgb> {
    for el in std::iter::once(*node).chain(dom::ancestors(node)).filter(|n| n.is_element()) {
        if el.has_attr("data-a11y-dynamic-style") {
            return Resolved::Unresolvable;
        }
        if let Some(found) = background_of(sheet, &el) {
            return found;
        }
    }
    Resolved::Default
}

fn default_font_scale(tag: &str) -> Option<f64> {
    Some(match tag {
        "h1" => 2.0,
        "h2" => 1.5,
        "h3" => 1.17,
        "h5" => 0.83,
        "h6" => 0.67,
        "small" => 0.83,
        _ => return None,
    })
}

fn parse_font_size(value: &str, parent_px: f64) -> Option<f64> {
    let v = value.trim().to_ascii_lowercase();
    let keyword = match v.as_str() {
        "xx-small" => Some(9.0),
        "x-small" => Some(10.0),
        "small" => Some(13.0),
        "medium" => Some(16.0),
        "large" => Some(18.0),
        "x-large" => Some(24.0),
        "xx-large" => Some(32.0),
        "smaller" => Some(parent_px / 1.2),
        "larger" => Some(parent_px * 1.2),
        _ => None,
    };
    if keyword.is_some() {
        return keyword;
    }
    let split = v.find(|c: char| !(c.is_ascii_digit() || c == '.'))?;
    let (num, unit) = v.split_at(split);
    let n: f64 = num.parse().ok()?;
    match unit {
        "px" => Some(n),
        "pt" => Some(n * 4.0 / 3.0),
        "em" => Some(n * parent_px),
        "rem" => Some(n * DEFAULT_FONT_PX),
        "%" => Some(n * parent_px / 100.0),
        _ => None,
    }
}

/// Computed font size in px following inheritance from the root.
pub fn font_size_px(sheet: &StyleSheet, node: &NodeRef) -> f64 {
    let mut chain: Vec<NodeRef> = std::iter::once(*node).chain(dom::ancestors(node)).filter(|n| n.is_element()).collect();
    chain.reverse();
    let mut px = DEFAULT_FONT_PX;
    for el in chain {
        let tag = dom::tag_of(&el).unwrap_or_default();
        if let Some(value) = sheet.cascaded(&el, "font-size") {
            if let Some(size) = parse_font_size(&value, px) {
                px = size;
                continue;
            }
        }
        if let Some(scale) = default_font_scale(&tag) {
            px *= scale;
        }
    }
    px
}

pub fn is_bold(sheet: &StyleSheet, node: &NodeRef) -> bool {
    for el in std::iter::once(*node).chain(dom::ancestors(node)).filter(|n| n.is_element()) {
        if let Some(weight) = sheet.cascaded(&el, "font-weight") {
            let w = weight.trim().to_ascii_lowercase();
            return match w.as_str() {
                "bold" | "bolder" => true,
                "normal" | "lighter" => false,
                other => other.parse::<u32>().is_ok_and(|n| n >= 700),
            };
        }
        if matches!(dom::tag_of(&el).as_deref(), Some("h1" | "h2" | "h3" | "h4" | "h5" | "h6" | "b" | "strong" | "th")) {
            return true;
        }
    }
    false
}
