//! Operator schema strings: `ns::name[.overload](params) -> returns`.
//!
//! Defaults are kept verbatim; nothing here evaluates them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: String,
    pub type_expr: String,
    pub default: Option<String>,
    pub kwarg_only: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OpSchema {
    pub namespace: String,
    pub base_name: String,
    pub overload: Option<String>,
    pub params: Vec<Param>,
    /// Return items as written, e.g. `Tensor`, `Tensor(a!)`, `Tensor values`.
    pub returns: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unbalanced brackets at byte {offset}")]
    UnbalancedBrackets { offset: usize },
}

fn syntax(offset: usize, message: impl Into<String>) -> SchemaError {
    SchemaError::Syntax { offset, message: message.into() }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte offset of the bracket closing the one opened at `open`.
fn matching_close(text: &str, open: usize) -> Result<usize, SchemaError> {
    let mut stack: Vec<(char, usize)> = Vec::new();
    let mut quote: Option<char> = None;
    for (i, c) in text[open..].char_indices() {
        let at = open + i;
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '(' | '[' => stack.push((c, at)),
            ')' | ']' => {
                let want = if c == ')' { '(' } else { '[' };
                match stack.pop() {
                    Some((o, _)) if o == want => {
                        if stack.is_empty() {
                            return Ok(at);
                        }
                    }
                    _ => return Err(SchemaError::UnbalancedBrackets { offset: at }),
                }
            }
            _ => {}
        }
    }
    Err(SchemaError::UnbalancedBrackets { offset: text.len() })
}

/// Splits `text` (starting at byte `base` of the original) at top-level
/// occurrences of `sep`. Returns (offset, piece) pairs.
fn split_top(text: &str, base: usize, sep: char) -> Result<Vec<(usize, &str)>, SchemaError> {
    let mut out = Vec::new();
    let mut stack: Vec<char> = Vec::new();
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '(' | '[' => stack.push(c),
            ')' | ']' => {
                let want = if c == ')' { '(' } else { '[' };
                if stack.pop() != Some(want) {
                    return Err(SchemaError::UnbalancedBrackets { offset: base + i });
                }
            }
            c if c == sep && stack.is_empty() => {
                out.push((base + start, &text[start..i]));
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    if !stack.is_empty() || quote.is_some() {
        return Err(SchemaError::UnbalancedBrackets { offset: base + text.len() });
    }
    out.push((base + start, &text[start..]));
    Ok(out)
}

fn find_top(text: &str, sep: char) -> Option<usize> {
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    for (i, c) in text.char_indices() {
        if let Some(q) = quote {
            if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c == sep && depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

fn rfind_top_ws(text: &str) -> Option<usize> {
    let mut depth = 0i32;
    let mut last = None;
    for (i, c) in text.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            c if c.is_whitespace() && depth == 0 => last = Some(i),
            _ => {}
        }
    }
    last
}

fn parse_param(offset: usize, item: &str, kwarg_only: bool) -> Result<Param, SchemaError> {
    let (decl, default) = match find_top(item, '=') {
        Some(eq) => {
            let d = item[eq + 1..].trim();
            if d.is_empty() {
                return Err(syntax(offset + eq, "empty default value"));
            }
            (item[..eq].trim(), Some(d.to_string()))
        }
        None => (item.trim(), None),
    };
    let split = rfind_top_ws(decl).ok_or_else(|| syntax(offset, format!("parameter {decl:?} has no name")))?;
    let type_expr = collapse_ws(&decl[..split]);
    let name = decl[split..].trim();
    if type_expr.is_empty() {
        return Err(syntax(offset, "parameter has no type"));
    }
    if !is_ident(name) {
        return Err(syntax(offset, format!("invalid parameter name {name:?}")));
    }
    Ok(Param { name: name.to_string(), type_expr, default, kwarg_only })
}

/// Parses one operator schema string.
pub fn parse_op_schema(schema: &str) -> Result<OpSchema, SchemaError> {
    let lead = schema.len() - schema.trim_start().len();
    let text = schema.trim_end();
    if text[lead.min(text.len())..].is_empty() {
        return Err(syntax(0, "empty schema"));
    }
    let sep =
        text[lead..].find("::").map(|i| lead + i).ok_or_else(|| syntax(lead, "missing namespace separator '::'"))?;
    let namespace = &text[lead..sep];
    if !is_ident(namespace) {
        return Err(syntax(lead, format!("invalid namespace {namespace:?}")));
    }
    let open = text[sep..].find('(').map(|i| sep + i).ok_or_else(|| syntax(text.len(), "missing parameter list"))?;
    let qualified = text[sep + 2..open].trim_end();
    let (base_name, overload) = match qualified.split_once('.') {
        Some((b, o)) => (b, Some(o)),
        None => (qualified, None),
    };
    if !is_ident(base_name) {
        return Err(syntax(sep + 2, format!("invalid operator name {base_name:?}")));
    }
    if let Some(o) = overload {
        if !is_ident(o) {
            return Err(syntax(sep + 2 + base_name.len() + 1, format!("invalid overload name {o:?}")));
        }
    }

    let close = matching_close(text, open)?;
    let inner = &text[open + 1..close];
    let mut params = Vec::new();
    let mut kwarg = false;
    if !inner.trim().is_empty() {
        for (off, item) in split_top(inner, open + 1, ',')? {
            let trimmed = item.trim();
            if trimmed.is_empty() {
                return Err(syntax(off, "empty parameter"));
            }
            if trimmed == "*" {
                if kwarg {
                    return Err(syntax(off, "duplicate '*' marker"));
                }
                kwarg = true;
                continue;
            }
            params.push(parse_param(off, item, kwarg)?);
        }
    }

    let rest = &text[close + 1..];
    let arrow = rest
        .find(|c: char| !c.is_whitespace())
        .map(|i| close + 1 + i)
        .ok_or_else(|| syntax(text.len(), "missing '->' and return type"))?;
    if !text[arrow..].starts_with("->") {
        return Err(syntax(arrow, "expected '->'"));
    }
    let ret_text = text[arrow + 2..].trim_start();
    let ret_off = text.len() - ret_text.len();
    if ret_text.is_empty() {
        return Err(syntax(ret_off, "missing return type"));
    }
    let returns = if ret_text.starts_with('(') {
        let rclose = matching_close(text, ret_off)?;
        if rclose + 1 != text.len() {
            return Err(syntax(rclose + 1, "trailing text after return tuple"));
        }
        let rinner = &text[ret_off + 1..rclose];
        if rinner.trim().is_empty() {
            Vec::new()
        } else {
            let mut out = Vec::new();
            for (off, item) in split_top(rinner, ret_off + 1, ',')? {
                let r = collapse_ws(item);
                if r.is_empty() {
                    return Err(syntax(off, "empty return item"));
                }
                out.push(r);
            }
            out
        }
    } else {
        if let Some(c) = find_top(ret_text, ',') {
            return Err(syntax(ret_off + c, "multiple returns must be parenthesized"));
        }
        split_top(ret_text, ret_off, ',')?;
        vec![collapse_ws(ret_text)]
    };

    Ok(OpSchema {
        namespace: namespace.to_string(),
        base_name: base_name.to_string(),
        overload: overload.map(str::to_string),
        params,
        returns,
    })
}

/// Parses a trace node's schema field; an empty field is schemaless (`None`).
pub fn parse_node_schema(op_schema: &str) -> Result<Option<OpSchema>, SchemaError> {
    if op_schema.trim().is_empty() {
        Ok(None)
    } else {
        parse_op_schema(op_schema).map(Some)
    }
}

impl OpSchema {
    /// `ns::name`
    pub fn qualified_name(&self) -> String {
        format!("{}::{}", self.namespace, self.base_name)
    }

    /// `ns::name.overload` (or `ns::name` when there is no overload).
    pub fn full_name(&self) -> String {
        match &self.overload {
            Some(o) => format!("{}::{}.{}", self.namespace, self.base_name, o),
            None => self.qualified_name(),
        }
    }

    pub fn positional(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| !p.kwarg_only)
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

/// Canonical text: single spaces, `, ` separators, ` -> ` before returns.
pub fn render(schema: &OpSchema) -> String {
    schema.to_string()
}

impl fmt::Display for OpSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.full_name())?;
        let mut first = true;
        let mut star = false;
        for p in &self.params {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            if p.kwarg_only && !star {
                f.write_str("*, ")?;
                star = true;
            }
            write!(f, "{} {}", p.type_expr, p.name)?;
            if let Some(d) = &p.default {
                write!(f, "={d}")?;
            }
        }
        f.write_str(") -> ")?;
        match self.returns.as_slice() {
            [single] => f.write_str(single),
            many => write!(f, "({})", many.join(", ")),
        }
    }
}

impl FromStr for OpSchema {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_op_schema(s)
    }
}

impl Serialize for OpSchema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for OpSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_op_schema(&s).map_err(serde::de::Error::custom)
    }
}
