//! Thin layer over the error-recovering HTML parser: traversal helpers,
//! selector resolution and node locators.

use std::sync::OnceLock;

use dom_query::{Document, Matcher, NodeRef};
use regex::Regex;

use crate::model::{NodeLocator, PathStep};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LocatorError {
    #[error("node is not attached to a document")]
    Detached,
    #[error("node is not an element")]
    NotAnElement,
    #[error("selector {0:?} does not resolve to exactly one node")]
    Unresolvable(String),
}

pub fn parse(html: &str) -> Document {
    Document::from(html)
}

/// Parse → serialize. Two documents are "canonically equal" when their
/// canonical forms are byte-identical.
pub fn canonical(html: &str) -> String {
    parse(html).html().to_string()
}

/// Serializes a fragment without the wrapper the fragment parser adds.
pub fn fragment_inner_html(doc: &Document) -> String {
    let root = doc.root();
    match root.first_element_child() {
        Some(first) if tag_of(&first).as_deref() == Some("html") && root.element_children().len() == 1 => {
            first.inner_html().to_string()
        }
        _ => root.inner_html().to_string(),
    }
}

pub fn tag_of(node: &NodeRef) -> Option<String> {
    if node.is_element() {
        node.node_name().map(|n| n.to_string())
    } else {
        None
    }
}

pub fn attr(node: &NodeRef, name: &str) -> Option<String> {
    node.attr(name).map(|v| v.to_string())
}

/// Attribute value trimmed, `None` when absent or blank.
pub fn nonblank_attr(node: &NodeRef, name: &str) -> Option<String> {
    node.attr(name).map(|v| v.trim().to_string()).filter(|v| !v.is_empty())
}

pub fn attr_names(node: &NodeRef) -> Vec<String> {
    node.attrs().iter().map(|a| a.name.local.to_string()).collect()
}

/// Every element of the document in pre-order (document order).
pub fn elements<'a>(doc: &'a Document) -> Vec<NodeRef<'a>> {
    let mut out = Vec::new();
    collect_elements(doc.root(), &mut out);
    out
}

/// Element descendants of `node` (excluding itself) in document order.
pub fn descendant_elements<'a>(node: &NodeRef<'a>) -> Vec<NodeRef<'a>> {
    let mut out = Vec::new();
    let mut child = node.first_child();
    while let Some(c) = child {
        collect_elements(c, &mut out);
        child = c.next_sibling();
    }
    out
}

fn collect_elements<'a>(node: NodeRef<'a>, out: &mut Vec<NodeRef<'a>>) {
    if node.is_element() {
        out.push(node);
    }
    let mut child = node.first_child();
    while let Some(c) = child {
        collect_elements(c, out);
        child = c.next_sibling();
    }
}

pub fn find_first<'a>(doc: &'a Document, tag: &str) -> Option<NodeRef<'a>> {
    elements(doc).into_iter().find(|n| tag_of(n).as_deref() == Some(tag))
}

pub fn ancestors<'a>(node: &NodeRef<'a>) -> Vec<NodeRef<'a>> {
    let mut out = Vec::new();
    let mut cur = node.parent();
    while let Some(p) = cur {
        out.push(p);
        cur = p.parent();
    }
    out
}

fn is_attached(node: &NodeRef) -> bool {
    node.is_document() || ancestors(node).last().is_some_and(|root| root.is_document() || root.is_fragment())
}

/// Resolves `selector` against the whole document. Invalid selectors
/// resolve to nothing.
pub fn resolve<'a>(doc: &'a Document, selector: &str) -> Vec<NodeRef<'a>> {
    match Matcher::new(selector) {
        Ok(matcher) => doc.select_matcher(&matcher).nodes().to_vec(),
        Err(_) => Vec::new(),
    }
}

pub fn resolve_unique<'a>(doc: &'a Document, selector: &str) -> Option<NodeRef<'a>> {
    let mut nodes = resolve(doc, selector);
    if nodes.len() == 1 {
        nodes.pop()
    } else {
        None
    }
}

pub fn resolve_path<'a>(doc: &'a Document, path: &[PathStep]) -> Option<NodeRef<'a>> {
    let mut cur = doc.root();
    for step in path {
        let children = cur.element_children();
        let next = children.get(step.index.checked_sub(1)?)?;
        if tag_of(next).as_deref() != Some(step.tag.as_str()) {
            return None;
        }
        cur = *next;
    }
    if path.is_empty() {
        None
    } else {
        Some(cur)
    }
}

/// Resolves a locator by selector, falling back to its dom path.
pub fn resolve_locator<'a>(doc: &'a Document, locator: &NodeLocator) -> Option<NodeRef<'a>> {
    resolve_unique(doc, &locator.css_selector).or_else(|| resolve_path(doc, &locator.dom_path))
}

/// 1-based position of `node` among its parent's element children.
pub fn element_index(node: &NodeRef) -> usize {
    let mut index = 1;
    let mut cur = node.prev_element_sibling();
    while let Some(prev) = cur {
        index += 1;
        cur = prev.prev_element_sibling();
    }
    index
}

pub fn dom_path(node: &NodeRef) -> Vec<PathStep> {
    let mut steps = Vec::new();
    let mut cur = Some(*node);
    while let Some(n) = cur {
        if !n.is_element() {
            break;
        }
        steps.push(PathStep { tag: tag_of(&n).unwrap_or_default(), index: element_index(&n) });
        cur = n.parent();
    }
    steps.reverse();
    steps
}

fn css_ident() -> &'static Regex {
    static IDENT: OnceLock<Regex> = OnceLock::new();
    IDENT.get_or_init(|| Regex::new(r"^-?[A-Za-z_][A-Za-z0-9_-]*$").unwrap())
}

fn is_only<'a>(doc: &'a Document, selector: &str, node: &NodeRef<'a>) -> bool {
    let hits = resolve(doc, selector);
    hits.len() == 1 && hits[0].id == node.id
}

fn id_is_unique(doc: &Document, id: &str) -> bool {
    elements(doc).iter().filter(|n| n.attr("id").is_some_and(|v| &*v == id)).count() == 1
}

fn positional_step(node: &NodeRef) -> String {
    let tag = tag_of(node).unwrap_or_default();
    let same_tag_siblings = node
        .parent()
        .map(|p| p.element_children().iter().filter(|c| tag_of(c).as_deref() == Some(tag.as_str())).count())
        .unwrap_or(1);
    if same_tag_siblings <= 1 {
        tag
    } else {
        format!("{tag}:nth-child({})", element_index(node))
    }
}

/// Builds a selector that resolves to exactly `node`: a unique id, else a
/// unique `tag.class` chain, else the shortest positional path.
pub fn build_locator(doc: &Document, node: &NodeRef) -> Result<NodeLocator, LocatorError> {
    if !node.is_element() {
        return Err(LocatorError::NotAnElement);
    }
    if !is_attached(node) {
        return Err(LocatorError::Detached);
    }
    let selector = build_selector(doc, node)?;
    Ok(NodeLocator::new(selector, dom_path(node), &node.html()))
}

fn build_selector(doc: &Document, node: &NodeRef) -> Result<String, LocatorError> {
    if let Some(id) = node.attr("id") {
        if css_ident().is_match(&id) && id_is_unique(doc, &id) {
            let sel = format!("#{id}");
            if is_only(doc, &sel, node) {
                return Ok(sel);
            }
        }
    }
    let tag = tag_of(node).unwrap_or_default();
    if let Some(class) = node.attr("class") {
        let classes: Vec<&str> = class.split_whitespace().collect();
        if !classes.is_empty() && classes.iter().all(|c| css_ident().is_match(c)) {
            let sel = format!("{tag}.{}", classes.join("."));
            if is_only(doc, &sel, node) {
                return Ok(sel);
            }
        }
    }
    let mut steps = vec![positional_step(node)];
    let mut cur = node.parent();
    loop {
        let sel = steps.iter().rev().cloned().collect::<Vec<_>>().join(" > ");
        // Positional paths keep at least the parent step for readability.
        let anchored_enough = steps.len() > 1 || !cur.is_some_and(|p| p.is_element());
        if anchored_enough && is_only(doc, &sel, node) {
            return Ok(sel);
        }
        let Some(ancestor) = cur.filter(|a| a.is_element()) else {
            return Err(LocatorError::Unresolvable(sel));
        };
        let anchored = ancestor
            .attr("id")
            .filter(|id| css_ident().is_match(id) && id_is_unique(doc, id))
            .map(|id| format!("#{id}"));
        match anchored {
            Some(anchor) => steps.push(anchor),
            None => steps.push(positional_step(&ancestor)),
        }
        cur = ancestor.parent();
    }
}

/// Text content with whitespace collapsed.
pub fn collapsed_text(node: &NodeRef) -> String {
    node.text().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Text of the node's own text children (not descendants).
pub fn own_text(node: &NodeRef) -> String {
    let mut out = String::new();
    let mut child = node.first_child();
    while let Some(c) = child {
        if c.is_text() {
            out.push_str(&c.text());
        }
        child = c.next_sibling();
    }
    out
}
