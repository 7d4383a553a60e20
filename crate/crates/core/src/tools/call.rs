use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A tool name with string arguments, written `tool(key="value", ...)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|(k, v)| format!("{k}={}", quote(v)))
            .collect();
        write!(f, "{}({})", self.tool, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(&'static str),
    Punct(char),
}

pub(crate) fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '_' | '-' | '.'))
            {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            // `300-600` style windows lex as one bare word
            if chars.get(i) == Some(&'-') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                out.push(Tok::Str(chars[start..i].iter().collect()));
                continue;
            }
            out.push(Tok::Num(
                text.parse().map_err(|_| format!("bad number {text:?}"))?,
            ));
        } else if c == '"' || c == '\'' {
            let q = c;
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err("unterminated string".into()),
                    Some(&ch) if ch == q => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('n') => s.push('\n'),
                            Some(&e) => s.push(e),
                            None => return Err("unterminated string".into()),
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Tok::Str(s));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = [">=", "<=", "==", "!="].into_iter().find(|o| *o == two);
            if let Some(op) = op {
                out.push(Tok::Op(op));
                i += 2;
            } else if c == '>' || c == '<' {
                out.push(Tok::Op(if c == '>' { ">" } else { "<" }));
                i += 1;
            } else if "(),=:".contains(c) {
                out.push(Tok::Punct(c));
                i += 1;
            } else {
                return Err(format!("unexpected character {c:?}"));
            }
        }
    }
    Ok(out)
}

pub(crate) fn fmt_num(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

/// Parses `tool(key="value", key2=bare)`; bare words and numbers are taken
/// literally.
pub fn parse_call(text: &str) -> Result<ToolCall, String> {
    let toks = lex(text.trim())?;
    let mut it = toks.into_iter().peekable();
    let tool = match it.next() {
        Some(Tok::Ident(s)) => s,
        _ => return Err(format!("expected a tool name in {text:?}")),
    };
    let mut call = ToolCall::new(tool);
    match it.next() {
        Some(Tok::Punct('(')) => {}
        None => return Ok(call),
        _ => return Err(format!("expected '(' after {}", call.tool)),
    }
    loop {
        match it.next() {
            Some(Tok::Punct(')')) => break,
            Some(Tok::Ident(key)) => {
                if it.next() != Some(Tok::Punct('=')) {
                    return Err(format!("expected '=' after {key}"));
                }
                let value = match it.next() {
                    Some(Tok::Str(s)) | Some(Tok::Ident(s)) => s,
                    Some(Tok::Num(n)) => fmt_num(n),
                    _ => return Err(format!("missing value for {key}")),
                };
                if call.args.insert(key.clone(), value).is_some() {
                    return Err(format!("duplicate argument {key}"));
                }
                match it.next() {
                    Some(Tok::Punct(',')) => {}
                    Some(Tok::Punct(')')) => break,
                    _ => return Err("expected ',' or ')'".into()),
                }
            }
            _ => return Err(format!("malformed argument list in {text:?}")),
        }
    }
    if it.next().is_some() {
        return Err(format!("trailing text after call in {text:?}"));
    }
    Ok(call)
}
