//! Delimiter-structured LLM responses and the structural validators run
//! before any patch is planned.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dom;
use crate::markup::{self, Location, MarkupError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Delimiter {
    Template,
    Typescript,
    Styles,
}

impl Delimiter {
    pub const ALL: [Delimiter; 3] = [Delimiter::Template, Delimiter::Typescript, Delimiter::Styles];

    pub fn name(self) -> &'static str {
        match self {
            Delimiter::Template => "TEMPLATE",
            Delimiter::Typescript => "TYPESCRIPT",
            Delimiter::Styles => "STYLES",
        }
    }

    pub fn marker(self) -> String {
        format!("<<<{}>>>", self.name())
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    FragmentOnly,
    Delimited(BTreeSet<Delimiter>),
}

impl Expected {
    pub fn template() -> Self {
        Expected::Delimited([Delimiter::Template].into())
    }

    pub fn trio() -> Self {
        Expected::Delimited(Delimiter::ALL.into())
    }
}

/// Body accepted in place of a segment that needs no change.
pub const UNCHANGED: &str = "/* unchanged */";

pub fn is_unchanged(body: &str) -> bool {
    body.trim() == UNCHANGED
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RemediationSegments {
    pub template: Option<String>,
    pub typescript: Option<String>,
    pub styles: Option<String>,
    pub fragment: Option<String>,
    pub raw: String,
}

impl RemediationSegments {
    pub fn get(&self, d: Delimiter) -> Option<&str> {
        match d {
            Delimiter::Template => self.template.as_deref(),
            Delimiter::Typescript => self.typescript.as_deref(),
            Delimiter::Styles => self.styles.as_deref(),
        }
    }

    fn slot(&mut self, d: Delimiter) -> &mut Option<String> {
        match d {
            Delimiter::Template => &mut self.template,
            Delimiter::Typescript => &mut self.typescript,
            Delimiter::Styles => &mut self.styles,
        }
    }

    /// Re-serializes delimited segments in canonical order.
    pub fn reassemble(&self) -> String {
        let mut out = String::new();
        for d in Delimiter::ALL {
            if let Some(body) = self.get(d) {
                out.push_str(&d.marker());
                out.push('\n');
                out.push_str(body);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentError {
    #[error("empty response")]
    EmptyResponse,
    #[error("missing delimiter(s): expected {expected:?}, found {found:?}")]
    MissingDelimiter { expected: Vec<Delimiter>, found: Vec<Delimiter> },
    #[error("unknown delimiter <<<{name}>>> on line {line}")]
    UnknownDelimiter { name: String, line: usize },
    #[error("delimiter {0} appears more than once")]
    DuplicateDelimiter(Delimiter),
    #[error("unexpected delimiter {0} in a fragment-only response")]
    UnexpectedDelimiter(Delimiter),
    #[error("segment {0} has an empty body")]
    EmptySegment(String),
}

struct Marker {
    name: String,
    start: usize,
    end: usize,
}

fn markers(response: &str, line_start_only: bool) -> Vec<Marker> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    static ANY: OnceLock<Regex> = OnceLock::new();
    let re = if line_start_only {
        LINE.get_or_init(|| Regex::new(r"(?m)^[ \t]*<<<([A-Za-z_]+)>>>").unwrap())
    } else {
        ANY.get_or_init(|| Regex::new(r"<<<([A-Za-z_]+)>>>").unwrap())
    };
    re.captures_iter(response)
        .map(|c| {
            let whole = c.get(0).unwrap();
            Marker { name: c[1].to_string(), start: whole.start(), end: whole.end() }
        })
        .collect()
}

/// Removes a surrounding markdown code fence; with prose around a fenced
/// block, keeps the block.
pub fn strip_fences(body: &str) -> String {
    let trimmed = body.trim();
    let Some(open) = trimmed.find("```") else {
        return trimmed.to_string();
    };
    let after_open = &trimmed[open + 3..];
    let content_start = after_open.find('\n').map_or(after_open.len(), |i| i + 1);
    let content = &after_open[content_start..];
    let content = match content.find("```") {
        Some(close) => &content[..close],
        None => content,
    };
    content.trim().to_string()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].matches('\n').count() + 1
}

pub fn parse_segments(response: &str, expected: &Expected) -> Result<RemediationSegments, SegmentError> {
    if response.trim().is_empty() {
        return Err(SegmentError::EmptyResponse);
    }
    let line_markers = markers(response, true);
    for m in &line_markers {
        if Delimiter::from_name(&m.name).is_none() {
            return Err(SegmentError::UnknownDelimiter { name: m.name.clone(), line: line_of(response, m.start) });
        }
    }
    let mut segments = RemediationSegments { raw: response.to_string(), ..Default::default() };

    let wanted = match expected {
        Expected::FragmentOnly => {
            let mut body = response;
            if let Some(first) = line_markers.first() {
                let d = Delimiter::from_name(&first.name).expect("checked above");
                if d != Delimiter::Template || line_markers.len() > 1 {
                    return Err(SegmentError::UnexpectedDelimiter(
                        Delimiter::from_name(&line_markers.last().unwrap().name).unwrap(),
                    ));
                }
                body = &response[first.end..];
            }
            let fragment = strip_fences(body);
            if fragment.is_empty() {
                return Err(SegmentError::EmptySegment("fragment".into()));
            }
            segments.fragment = Some(fragment);
            return Ok(segments);
        }
        Expected::Delimited(wanted) => wanted,
    };

    let covers = |ms: &[Marker]| wanted.iter().all(|d| ms.iter().any(|m| m.name == d.name()));
    let chosen = if covers(&line_markers) {
        line_markers
    } else {
        let inline = markers(response, false);
        for m in &inline {
            if Delimiter::from_name(&m.name).is_none() {
                return Err(SegmentError::UnknownDelimiter { name: m.name.clone(), line: line_of(response, m.start) });
            }
        }
        if !covers(&inline) {
            let found: BTreeSet<Delimiter> = inline.iter().filter_map(|m| Delimiter::from_name(&m.name)).collect();
            return Err(SegmentError::MissingDelimiter {
                expected: wanted.iter().copied().collect(),
                found: found.into_iter().collect(),
            });
        }
        inline
    };

    for (i, m) in chosen.iter().enumerate() {
        let d = Delimiter::from_name(&m.name).expect("validated");
        let end = chosen.get(i + 1).map_or(response.len(), |next| next.start);
        let body = strip_fences(&response[m.end..end]);
        if body.is_empty() {
            return Err(SegmentError::EmptySegment(d.name().into()));
        }
        let slot = segments.slot(d);
        if slot.is_some() {
            return Err(SegmentError::DuplicateDelimiter(d));
        }
        *slot = Some(body);
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructuralError {
    #[error("empty HTML segment")]
    Empty,
    #[error(transparent)]
    Markup(#[from] MarkupError),
    #[error("serialization does not reach a fixed point")]
    NotFixedPoint,
}

fn looks_like_document(s: &str) -> bool {
    let head: String = s.trim_start().chars().take(9).collect::<String>().to_ascii_lowercase();
    head.starts_with("<!doctype") || head.starts_with("<html")
}

fn reserialize(s: &str, document: bool) -> String {
    if document {
        dom::canonical(s)
    } else {
        dom::fragment_inner_html(&dom_query::Document::fragment(s))
    }
}

pub fn validate_html_segment(s: &str) -> Result<(), StructuralError> {
    if s.trim().is_empty() {
        return Err(StructuralError::Empty);
    }
    markup::check_balance(s)?;
    let document = looks_like_document(s);
    let once = reserialize(s, document);
    let twice = reserialize(&once, document);
    if once != twice {
        return Err(StructuralError::NotFixedPoint);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TsError {
    #[error("empty TypeScript segment")]
    Empty,
    #[error("unbalanced {found:?} at {location}")]
    Unbalanced { found: char, location: Location },
    #[error("unclosed {open:?} opened at {location}")]
    Unclosed { open: char, location: Location },
    #[error("unterminated {what} starting at {location}")]
    Unterminated { what: &'static str, location: Location },
    #[error("class declaration {0:?} is missing")]
    MissingClass(String),
    #[error("truncation sentinel at line {0}")]
    Truncated(usize),
}

#[derive(Clone, Copy)]
enum Frame {
    Bracket(char, usize),
    Interpolation(usize),
}

fn closing_for(open: char) -> char {
    match open {
        '(' => ')',
        '[' => ']',
        _ => '}',
    }
}

/// Heuristic bracket balance over code, ignoring strings, comments and
/// template literal text. Regex literals are recognized by the usual
/// previous-token heuristic.
pub fn check_ts_brackets(s: &str) -> Result<(), TsError> {
    let bytes: Vec<(usize, char)> = s.char_indices().collect();
    let loc = |i: usize| Location::of(s, i);
    let mut stack: Vec<Frame> = Vec::new();
    let mut i = 0;
    let mut prev_sig: Option<char> = None;
    // Inside a template literal when Some(start)
    let mut in_template: Option<usize> = None;
    while i < bytes.len() {
        let (off, c) = bytes[i];
        let next = bytes.get(i + 1).map(|&(_, n)| n);
        if let Some(start) = in_template {
            match c {
                '\\' => i += 1,
                '`' => in_template = None,
                '$' if next == Some('{') => {
                    stack.push(Frame::Interpolation(start));
                    in_template = None;
                    prev_sig = Some('{');
                    i += 1;
                }
                _ => {}
            }
            i += 1;
            if i >= bytes.len() && in_template.is_some() {
                return Err(TsError::Unterminated { what: "template literal", location: loc(start) });
            }
            continue;
        }
        match c {
            '/' if next == Some('/') => {
                while i < bytes.len() && bytes[i].1 != '\n' {
                    i += 1;
                }
                continue;
            }
            '/' if next == Some('*') => {
                let rest = &s[off + 2..];
                match rest.find("*/") {
                    Some(end) => {
                        let stop = off + 2 + end + 2;
                        while i < bytes.len() && bytes[i].0 < stop {
                            i += 1;
                        }
                        continue;
                    }
                    None => return Err(TsError::Unterminated { what: "block comment", location: loc(off) }),
                }
            }
            '/' if prev_sig.is_none_or(|p| "(,=:[!&|?{};+-*%<>~^".contains(p)) => {
                let start = off;
                i += 1;
                let mut in_class = false;
                loop {
                    let Some(&(_, r)) = bytes.get(i) else {
                        return Err(TsError::Unterminated { what: "regular expression", location: loc(start) });
                    };
                    match r {
                        '\\' => i += 1,
                        '\n' => return Err(TsError::Unterminated { what: "regular expression", location: loc(start) }),
                        '[' => in_class = true,
                        ']' => in_class = false,
                        '/' if !in_class => break,
                        _ => {}
                    }
                    i += 1;
                }
                prev_sig = Some('a');
            }
            '"' | '\'' => {
                let start = off;
                i += 1;
                loop {
                    let Some(&(_, r)) = bytes.get(i) else {
                        return Err(TsError::Unterminated { what: "string literal", location: loc(start) });
                    };
                    match r {
                        '\\' => i += 1,
                        '\n' => return Err(TsError::Unterminated { what: "string literal", location: loc(start) }),
                        r if r == c => break,
                        _ => {}
                    }
                    i += 1;
                }
                prev_sig = Some('a');
            }
            '`' => {
                in_template = Some(off);
                if i + 1 >= bytes.len() {
                    return Err(TsError::Unterminated { what: "template literal", location: loc(off) });
                }
            }
            '(' | '[' | '{' => {
                stack.push(Frame::Bracket(c, off));
                prev_sig = Some(c);
            }
            ')' | ']' | '}' => {
                match stack.pop() {
                    Some(Frame::Bracket(open, _)) if closing_for(open) == c => {}
                    Some(Frame::Interpolation(start)) if c == '}' => in_template = Some(start),
                    _ => return Err(TsError::Unbalanced { found: c, location: loc(off) }),
                }
                prev_sig = Some(c);
            }
            c if c.is_whitespace() => {}
            c => prev_sig = Some(if c.is_alphanumeric() || c == '_' || c == '$' { 'a' } else { c }),
        }
        i += 1;
    }
    match stack.pop() {
        Some(Frame::Bracket(open, at)) => Err(TsError::Unclosed { open, location: loc(at) }),
        Some(Frame::Interpolation(start)) => {
            Err(TsError::Unterminated { what: "template literal", location: loc(start) })
        }
        None => Ok(()),
    }
}

pub fn class_names(ts: &str) -> Vec<String> {
    static CLASS: OnceLock<Regex> = OnceLock::new();
    CLASS
        .get_or_init(|| Regex::new(r"\bclass\s+([A-Za-z_$][A-Za-z0-9_$]*)").unwrap())
        .captures_iter(ts)
        .map(|c| c[1].to_string())
        .collect()
}

pub fn validate_typescript_segment(s: &str, expected_class: Option<&str>) -> Result<(), TsError> {
    if s.trim().is_empty() {
        return Err(TsError::Empty);
    }
    for (n, line) in s.lines().enumerate() {
        if matches!(line.trim(), "..." | "...;" | "…" | "// ..." | "// …") {
            return Err(TsError::Truncated(n + 1));
        }
    }
    check_ts_brackets(s)?;
    if let Some(name) = expected_class {
        if !class_names(s).iter().any(|c| c == name) {
            return Err(TsError::MissingClass(name.to_string()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn template_on_its_own_line() {
        let s = parse_segments("<<<TEMPLATE>>>\n<div></div>", &Expected::template()).unwrap();
        assert_eq!(s.template.as_deref(), Some("<div></div>"));
    }

    #[test]
    fn inline_trio() {
        let s = parse_segments("<<<TEMPLATE>>>A<<<TYPESCRIPT>>>B<<<STYLES>>>C", &Expected::trio()).unwrap();
        assert_eq!((s.template.as_deref(), s.typescript.as_deref(), s.styles.as_deref()), (Some("A"), Some("B"), Some("C")));
    }

    #[test]
    fn fenced_fragment() {
        let s = parse_segments("```html\n<p>x</p>\n```", &Expected::FragmentOnly).unwrap();
        assert_eq!(s.fragment.as_deref(), Some("<p>x</p>"));
        let prose = parse_segments("Here you go:\n```html\n<p>y</p>\n```\nDone.", &Expected::FragmentOnly).unwrap();
        assert_eq!(prose.fragment.as_deref(), Some("<p>y</p>"));
    }

    #[test]
    fn error_cases() {
        let missing = parse_segments("<<<TEMPLATE>>>\n<p></p>\n<<<STYLES>>>\np{}", &Expected::trio()).unwrap_err();
        assert_eq!(
            missing,
            SegmentError::MissingDelimiter {
                expected: Delimiter::ALL.to_vec(),
                found: vec![Delimiter::Template, Delimiter::Styles]
            }
        );
        let unknown = parse_segments("<<<TEMPLATE>>>\na\n<<<HTML>>>\nb", &Expected::template()).unwrap_err();
        assert_eq!(unknown, SegmentError::UnknownDelimiter { name: "HTML".into(), line: 3 });
        let empty = parse_segments("<<<TEMPLATE>>>\n   \n", &Expected::template()).unwrap_err();
        assert_eq!(empty, SegmentError::EmptySegment("TEMPLATE".into()));
        assert_eq!(parse_segments("  ", &Expected::template()), Err(SegmentError::EmptyResponse));
    }

    #[test]
    fn line_start_delimiters_win_over_inline_literals() {
        let response = "<<<TEMPLATE>>>\n<p>the string <<<STYLES>>> is literal</p>";
        let s = parse_segments(response, &Expected::template()).unwrap();
        assert_eq!(s.template.as_deref(), Some("<p>the string <<<STYLES>>> is literal</p>"));
    }

    #[test]
    fn unchanged_body_accepted() {
        let s = parse_segments("<<<TEMPLATE>>>\n<p></p>\n<<<TYPESCRIPT>>>\n/* unchanged */\n<<<STYLES>>>\n/* unchanged */", &Expected::trio())
            .unwrap();
        assert!(is_unchanged(s.styles.as_deref().unwrap()));
    }

    #[test]
    fn html_validation() {
        assert!(validate_html_segment("<div><p>a</p></div>").is_ok());
        assert!(matches!(validate_html_segment("<div><p>a</div>"), Err(StructuralError::Markup(_))));
        assert!(validate_html_segment(r#"<button (click)="go()">Go</button>"#).is_ok());
        assert!(validate_html_segment("<!DOCTYPE html><html lang=\"en\"><head><title>t</title></head><body></body></html>").is_ok());
        assert!(validate_html_segment("<div><p>").is_err());
    }

    #[test]
    fn html_validation_idempotent_on_serialize() {
        let s = r#"<nav aria-label="Main"><a href="/">Home</a><img src="a.png" alt="A"></nav>"#;
        assert!(validate_html_segment(s).is_ok());
        let serialized = reserialize(s, false);
        assert!(validate_html_segment(&serialized).is_ok());
    }

    #[test]
    fn typescript_checks() {
        assert!(validate_typescript_segment("export class Foo { go() {} }", Some("Foo")).is_ok());
        assert!(matches!(validate_typescript_segment("export class Foo { go() {", Some("Foo")), Err(TsError::Unclosed { .. })));
        assert_eq!(validate_typescript_segment("export class Bar {}", Some("Foo")), Err(TsError::MissingClass("Foo".into())));
        assert!(matches!(validate_typescript_segment("class Foo {\n  ...\n}", None), Err(TsError::Truncated(2))));
        assert!(matches!(validate_typescript_segment("const s = 'abc;", None), Err(TsError::Unterminated { .. })));
        assert!(validate_typescript_segment("const t = `a ${x + `b ${y}`} }`; // }\n/* { */ const r = /[}]/g;", None).is_ok());
        assert!(matches!(validate_typescript_segment("const t = `abc", None), Err(TsError::Unterminated { .. })));
        assert!(validate_typescript_segment("f(...args);", None).is_ok());
        assert!(matches!(validate_typescript_segment("a = (b];", None), Err(TsError::Unbalanced { found: ']', .. })));
    }

    fn body() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 <>/{}();=.\\n\"'-]{1,60}"
            .prop_map(|s| s.trim().to_string())
            .prop_filter("non-empty, delimiter- and fence-free", |s| {
                !s.is_empty() && !s.contains("<<<") && !s.contains(">>>") && !s.contains("```")
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn round_trip(t in proptest::option::of(body()), ts in proptest::option::of(body()), st in proptest::option::of(body())) {
            let segs = RemediationSegments { template: t, typescript: ts, styles: st, ..Default::default() };
            let present: BTreeSet<Delimiter> = Delimiter::ALL.into_iter().filter(|d| segs.get(*d).is_some()).collect();
            prop_assume!(!present.is_empty());
            let text = segs.reassemble();
            let parsed = parse_segments(&text, &Expected::Delimited(present)).unwrap();
            prop_assert_eq!(parsed.template, segs.template);
            prop_assert_eq!(parsed.typescript, segs.typescript);
            prop_assert_eq!(parsed.styles, segs.styles);
        }

        #[test]
        fn parse_is_total(s in "\\PC{0,200}") {
            let _ = parse_segments(&s, &Expected::trio());
            let _ = parse_segments(&s, &Expected::FragmentOnly);
            let _ = check_ts_brackets(&s);
            let _ = markup::tokenize(&s);
        }
    }
}
