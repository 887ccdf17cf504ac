//! Strict, span-preserving markup tokenizer. Unlike the error-recovering
//! parser it reports nesting problems, and it tolerates framework template
//! syntax (`[x]`, `(y)`, `*dir`, `#ref`, `{{ expr }}`).

use std::fmt;
use std::ops::Range;

pub const VOID_ELEMENTS: &[&str] =
    &["area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr"];

const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl Location {
    pub fn of(src: &str, offset: usize) -> Self {
        let before = &src[..offset.min(src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Self { line, column }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} at {location}")]
pub struct MarkupError {
    pub message: String,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attr {
    pub name: String,
    pub value: Option<String>,
    /// Whole `name="value"` text.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Text(Range<usize>),
    Comment(Range<usize>),
    Doctype(Range<usize>),
    StartTag { name: String, attrs: Vec<Attr>, self_closing: bool, span: Range<usize> },
    EndTag { name: String, span: Range<usize> },
}

impl Token {
    pub fn span(&self) -> Range<usize> {
        match self {
            Token::Text(s) | Token::Comment(s) | Token::Doctype(s) => s.clone(),
            Token::StartTag { span, .. } | Token::EndTag { span, .. } => span.clone(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.')
}

impl<'a> Lexer<'a> {
    fn err(&self, message: impl Into<String>, at: usize) -> MarkupError {
        MarkupError { message: message.into(), location: Location::of(self.src, at) }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn text(&mut self) -> Range<usize> {
        let start = self.pos;
        loop {
            let rest = self.rest();
            if rest.is_empty() {
                break;
            }
            if let Some(inner) = rest.strip_prefix("{{") {
                match inner.find("}}") {
                    Some(end) => self.pos += end + 4,
                    None => self.pos = self.src.len(),
                }
                continue;
            }
            if rest.starts_with('<') && self.starts_markup() {
                break;
            }
            self.bump();
        }
        start..self.pos
    }

    fn starts_markup(&self) -> bool {
        let mut chars = self.rest().chars().skip(1);
        match chars.next() {
            Some(c) if c.is_ascii_alphabetic() || c == '!' => true,
            Some('/') => chars.next().is_some_and(|c| c.is_ascii_alphabetic()),
            _ => false,
        }
    }

    fn name(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(is_name_char) {
            self.bump();
        }
        self.src[start..self.pos].to_ascii_lowercase()
    }

    fn attr_name(&mut self) -> String {
        let start = self.pos;
        let mut depth = 0i32;
        while let Some(c) = self.peek() {
            match c {
                '[' | '(' => depth += 1,
                ']' | ')' => depth -= 1,
                c if depth <= 0 && (c.is_whitespace() || c == '=' || c == '>') => break,
                '/' if depth <= 0 && self.rest().starts_with("/>") => break,
                '"' | '\'' | '<' => break,
                _ => {}
            }
            self.bump();
        }
        self.src[start..self.pos].to_string()
    }

    fn tag(&mut self) -> Result<Token, MarkupError> {
        let start = self.pos;
        self.pos += 1;
        let closing = self.peek() == Some('/');
        if closing {
            self.pos += 1;
        }
        let name = self.name();
        if closing {
            self.skip_ws();
            if self.bump() != Some('>') {
                return Err(self.err(format!("malformed end tag </{name}>"), start));
            }
            return Ok(Token::EndTag { name, span: start..self.pos });
        }
        let mut attrs = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(self.err(format!("unterminated <{name}> tag"), start)),
                Some('>') => {
                    self.bump();
                    return Ok(Token::StartTag { name, attrs, self_closing: false, span: start..self.pos });
                }
                Some('/') if self.rest().starts_with("/>") => {
                    self.pos += 2;
                    return Ok(Token::StartTag { name, attrs, self_closing: true, span: start..self.pos });
                }
                Some('<') => return Err(self.err(format!("unterminated <{name}> tag"), start)),
                _ => {}
            }
            let attr_start = self.pos;
            let attr_name = self.attr_name();
            if attr_name.is_empty() {
                return Err(self.err(format!("malformed attribute in <{name}>"), self.pos));
            }
            self.skip_ws();
            let mut value = None;
            if self.peek() == Some('=') {
                self.bump();
                self.skip_ws();
                match self.peek() {
                    Some(q @ ('"' | '\'')) => {
                        let open = self.pos;
                        self.bump();
                        let body_start = self.pos;
                        let Some(len) = self.rest().find(q) else {
                            return Err(self.err(format!("unterminated attribute value in <{name}>"), open));
                        };
                        value = Some(self.src[body_start..body_start + len].to_string());
                        self.pos = body_start + len + 1;
                    }
                    _ => {
                        let vs = self.pos;
                        while self.peek().is_some_and(|c| !c.is_whitespace() && c != '>') {
                            if self.rest().starts_with("/>") {
                                break;
                            }
                            self.bump();
                        }
                        value = Some(self.src[vs..self.pos].to_string());
                    }
                }
            }
            attrs.push(Attr { name: attr_name, value, span: attr_start..self.pos });
        }
    }

    fn raw_text(&mut self, name: &str) -> Result<Range<usize>, MarkupError> {
        let start = self.pos;
        let needle = format!("</{name}");
        let lower = self.rest().to_ascii_lowercase();
        match lower.find(&needle) {
            Some(off) => {
                self.pos += off;
                Ok(start..self.pos)
            }
            None => Err(self.err(format!("unclosed <{name}> raw text element"), start)),
        }
    }

    fn run(mut self) -> Result<Vec<Token>, MarkupError> {
        let mut tokens = Vec::new();
        while self.pos < self.src.len() {
            let rest = self.rest();
            if rest.starts_with("<!--") {
                let start = self.pos;
                let Some(end) = rest.find("-->") else {
                    return Err(self.err("unterminated comment", start));
                };
                self.pos += end + 3;
                tokens.push(Token::Comment(start..self.pos));
            } else if rest.starts_with("<!") {
                let start = self.pos;
                let Some(end) = rest.find('>') else {
                    return Err(self.err("unterminated declaration", start));
                };
                self.pos += end + 1;
                tokens.push(Token::Doctype(start..self.pos));
            } else if rest.starts_with('<') && self.starts_markup() {
                let token = self.tag()?;
                if let Token::StartTag { name, self_closing: false, .. } = &token {
                    if RAW_TEXT.contains(&name.as_str()) {
                        let name = name.clone();
                        tokens.push(token);
                        let body = self.raw_text(&name)?;
                        if !body.is_empty() {
                            tokens.push(Token::Text(body));
                        }
                        continue;
                    }
                }
                tokens.push(token);
            } else {
                tokens.push(Token::Text(self.text()));
            }
        }
        Ok(tokens)
    }
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, MarkupError> {
    Lexer { src, pos: 0 }.run()
}

/// Checks that every non-void element is explicitly closed in order.
pub fn check_balance(src: &str) -> Result<(), MarkupError> {
    let tokens = tokenize(src)?;
    let mut stack: Vec<(String, usize)> = Vec::new();
    for token in tokens {
        match token {
            Token::StartTag { name, self_closing, span, .. } => {
                if !self_closing && !VOID_ELEMENTS.contains(&name.as_str()) {
                    stack.push((name, span.start));
                }
            }
            Token::EndTag { name, span } => {
                if VOID_ELEMENTS.contains(&name.as_str()) {
                    return Err(MarkupError {
                        message: format!("end tag for void element </{name}>"),
                        location: Location::of(src, span.start),
                    });
                }
                match stack.pop() {
                    Some((open, _)) if open == name => {}
                    Some((open, at)) => {
                        return Err(MarkupError {
                            message: format!(
                                "mismatched nesting: </{name}> closes <{open}> opened at {}",
                                Location::of(src, at)
                            ),
                            location: Location::of(src, span.start),
                        })
                    }
                    None => {
                        return Err(MarkupError {
                            message: format!("stray end tag </{name}>"),
                            location: Location::of(src, span.start),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    match stack.pop() {
        Some((open, at)) => Err(MarkupError { message: format!("unclosed <{open}>"), location: Location::of(src, at) }),
        None => Ok(()),
    }
}

/// An element located in raw source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSpan {
    pub tag: String,
    pub start_tag: Range<usize>,
    /// `None` for void, self-closed and implicitly closed elements.
    pub end_tag: Option<Range<usize>>,
    pub parent: Option<usize>,
    pub depth: usize,
}

impl ElementSpan {
    /// Whole element, from `<` of the start tag to `>` of the end tag.
    pub fn outer(&self) -> Range<usize> {
        self.start_tag.start..self.end_tag.as_ref().map_or(self.start_tag.end, |e| e.end)
    }
}

/// Pre-order element list of `src`. Tolerant: stray end tags are ignored
/// and unclosed elements end where their parent does.
pub fn element_tree(src: &str) -> Result<Vec<ElementSpan>, MarkupError> {
    let mut out: Vec<ElementSpan> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for token in tokenize(src)? {
        match token {
            Token::StartTag { name, self_closing, span, .. } => {
                let idx = out.len();
                out.push(ElementSpan {
                    tag: name.clone(),
                    start_tag: span,
                    end_tag: None,
                    parent: stack.last().copied(),
                    depth: stack.len(),
                });
                if !self_closing && !VOID_ELEMENTS.contains(&name.as_str()) {
                    stack.push(idx);
                }
            }
            Token::EndTag { name, span } => {
                if let Some(pos) = stack.iter().rposition(|&i| out[i].tag == name) {
                    let idx = stack[pos];
                    out[idx].end_tag = Some(span);
                    stack.truncate(pos);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}
