//! SOP programs: a small, loop-free tool-invocation language.
//!
//! ```text
//! program   := statement*            one statement per line, `#` comments
//! statement := "let" NAME "=" call
//!            | call
//!            | "if" predicate ":" body
//!            | "finding" "(" (STRING | NAME) ")"
//! body      := call | finding | "if" predicate ":" body
//! call      := TOOL "(" [NAME "=" value ("," NAME "=" value)*] ")"
//! value     := STRING | NUMBER | NAME          a NAME refers to a bound result
//! predicate := "not" predicate
//!            | "contains" "(" NAME "," STRING ")"
//!            | "flagged" "(" NAME ")"
//!            | "value" "(" NAME ")" OP NUMBER   OP is > >= < <= == !=
//! ```
//!
//! A bound result passed as an argument supplies its first flagged component,
//! or its headline when nothing was flagged. `finding(x)` records the
//! headline of `x`; inside a finding string `{x}` expands to the components
//! `x` flagged (or `none`). `value(x)` is the result's numeric summary,
//! falling back to the number of flagged components.
//!
//! Only observability and analysis tools may be called. Programs run to
//! completion in one invocation; the first failing statement aborts the run
//! and no findings are reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::call::{fmt_num, lex, quote, Tok, ToolCall};
use super::readonly::{run_readonly, ReadEnv};
use super::{Registry, ToolCategory, ToolResult};

pub const MAX_STATEMENTS: usize = 50;

pub const DSL_GRAMMAR: &str = r#"One statement per line inside a ``` fence:
  let NAME = tool(arg="value", ...)   bind a tool result
  tool(arg="value", ...)              call without binding
  if PREDICATE: STATEMENT             no let inside if
  finding("text with {NAME}")         {NAME} expands to components NAME flagged
  finding(NAME)                       record the first line of NAME
Predicates: contains(NAME, "keyword"), flagged(NAME), value(NAME) > 0.5, not PREDICATE
Argument values are strings, numbers, or a bound NAME (its first flagged component).
Only observability and analysis tools may be called; at most 50 statements; no loops."#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ValueRef {
    Lit(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCall {
    pub tool: String,
    pub args: BTreeMap<String, ValueRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Contains { var: String, keyword: String },
    Flagged { var: String },
    Compare { var: String, op: String, value: f64 },
    Not { inner: Box<Predicate> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statement {
    Let {
        name: String,
        call: ProgramCall,
    },
    Call {
        call: ProgramCall,
    },
    If {
        pred: Predicate,
        body: Box<Statement>,
    },
    FindingText {
        text: String,
    },
    FindingVar {
        var: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopProgram {
    pub statements: Vec<Statement>,
}

impl fmt::Display for ProgramCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|(k, v)| match v {
                ValueRef::Lit(s) => format!("{k}={}", quote(s)),
                ValueRef::Var(n) => format!("{k}={n}"),
            })
            .collect();
        write!(f, "{}({})", self.tool, args.join(", "))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Contains { var, keyword } => {
                write!(f, "contains({var}, {})", quote(keyword))
            }
            Predicate::Flagged { var } => write!(f, "flagged({var})"),
            Predicate::Compare { var, op, value } => {
                write!(f, "value({var}) {op} {}", fmt_num(*value))
            }
            Predicate::Not { inner } => write!(f, "not {inner}"),
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Let { name, call } => write!(f, "let {name} = {call}"),
            Statement::Call { call } => write!(f, "{call}"),
            Statement::If { pred, body } => write!(f, "if {pred}: {body}"),
            Statement::FindingText { text } => write!(f, "finding({})", quote(text)),
            Statement::FindingVar { var } => write!(f, "finding({var})"),
        }
    }
}

impl fmt::Display for SopProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expect(&mut self, c: char) -> Result<(), String> {
        match self.next() {
            Some(Tok::Punct(p)) if p == c => Ok(()),
            other => Err(format!("expected '{c}', found {other:?}")),
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(format!("expected a name, found {other:?}")),
        }
    }

    fn call(&mut self, tool: String) -> Result<ProgramCall, String> {
        self.expect('(')?;
        let mut args = BTreeMap::new();
        if self.peek() == Some(&Tok::Punct(')')) {
            self.next();
            return Ok(ProgramCall { tool, args });
        }
        loop {
            let key = self.ident()?;
            self.expect('=')?;
            let v = match self.next() {
                Some(Tok::Str(s)) => ValueRef::Lit(s),
                Some(Tok::Num(n)) => ValueRef::Lit(fmt_num(n)),
                Some(Tok::Ident(n)) => ValueRef::Var(n),
                other => return Err(format!("bad value for {key}: {other:?}")),
            };
            if args.insert(key.clone(), v).is_some() {
                return Err(format!("duplicate argument {key}"));
            }
            match self.next() {
                Some(Tok::Punct(',')) => {}
                Some(Tok::Punct(')')) => break,
                other => return Err(format!("expected ',' or ')', found {other:?}")),
            }
        }
        Ok(ProgramCall { tool, args })
    }

    fn predicate(&mut self) -> Result<Predicate, String> {
        let head = self.ident()?;
        match head.as_str() {
            "not" => Ok(Predicate::Not {
                inner: Box::new(self.predicate()?),
            }),
            "contains" => {
                self.expect('(')?;
                let var = self.ident()?;
                self.expect(',')?;
                let keyword = match self.next() {
                    Some(Tok::Str(s)) => s,
                    other => return Err(format!("contains() needs a string, found {other:?}")),
                };
                self.expect(')')?;
                Ok(Predicate::Contains { var, keyword })
            }
            "flagged" => {
                self.expect('(')?;
                let var = self.ident()?;
                self.expect(')')?;
                Ok(Predicate::Flagged { var })
            }
            "value" => {
                self.expect('(')?;
                let var = self.ident()?;
                self.expect(')')?;
                let op = match self.next() {
                    Some(Tok::Op(o)) => o.to_string(),
                    other => return Err(format!("expected a comparison, found {other:?}")),
                };
                let value = match self.next() {
                    Some(Tok::Num(n)) => n,
                    other => return Err(format!("expected a number, found {other:?}")),
                };
                Ok(Predicate::Compare { var, op, value })
            }
            other => Err(format!("unknown predicate {other}")),
        }
    }

    fn statement(&mut self) -> Result<Statement, String> {
        let head = self.ident()?;
        match head.as_str() {
            "let" => {
                let name = self.ident()?;
                self.expect('=')?;
                let tool = self.ident()?;
                Ok(Statement::Let {
                    name,
                    call: self.call(tool)?,
                })
            }
            "if" => {
                let pred = self.predicate()?;
                self.expect(':')?;
                Ok(Statement::If {
                    pred,
                    body: Box::new(self.statement()?),
                })
            }
            "finding" => {
                self.expect('(')?;
                let s = match self.next() {
                    Some(Tok::Str(text)) => Statement::FindingText { text },
                    Some(Tok::Ident(var)) => Statement::FindingVar { var },
                    other => {
                        return Err(format!("finding() needs a string or name, found {other:?}"))
                    }
                };
                self.expect(')')?;
                Ok(s)
            }
            _ => Ok(Statement::Call {
                call: self.call(head)?,
            }),
        }
    }
}

/// Extracts the first fenced block (or the whole text when unfenced).
fn program_body(text: &str) -> &str {
    if let Some(start) = text.find("```") {
        let rest = &text[start + 3..];
        let rest = rest.split_once('\n').map_or("", |(_, r)| r);
        return rest.find("```").map_or(rest, |end| &rest[..end]);
    }
    text
}

pub fn parse_program(text: &str) -> Result<SopProgram, String> {
    let mut statements = Vec::new();
    for (n, raw) in program_body(text).lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks = lex(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        let mut p = Parser { toks, pos: 0 };
        let s = p.statement().map_err(|e| format!("line {}: {e}", n + 1))?;
        if p.pos != p.toks.len() {
            return Err(format!("line {}: trailing text", n + 1));
        }
        statements.push(s);
    }
    Ok(SopProgram { statements })
}

fn interpolated_vars(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find('{') {
        let after = &rest[i + 1..];
        match after.find('}') {
            Some(j) => {
                let name = &after[..j];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_string());
                }
                rest = &after[j + 1..];
            }
            None => break,
        }
    }
    out
}

fn pred_vars(p: &Predicate) -> Vec<&str> {
    match p {
        Predicate::Contains { var, .. }
        | Predicate::Flagged { var }
        | Predicate::Compare { var, .. } => {
            vec![var.as_str()]
        }
        Predicate::Not { inner } => pred_vars(inner),
    }
}

fn check_call(
    call: &ProgramCall,
    idx: usize,
    bound: &BTreeSet<String>,
    registry: &Registry,
    out: &mut Vec<String>,
) {
    match registry.get(&call.tool) {
        None => out.push(format!("statement {idx}: unknown tool {}", call.tool)),
        Some(spec) => {
            if !matches!(
                spec.category,
                ToolCategory::Observability | ToolCategory::Analysis
            ) {
                out.push(format!(
                    "statement {idx}: tool {} is not allowed in programs",
                    call.tool
                ));
            }
            let plain = ToolCall {
                tool: call.tool.clone(),
                args: call
                    .args
                    .keys()
                    .map(|k| (k.clone(), String::new()))
                    .collect(),
            };
            if let Err(e) = spec.check_args(&plain.args) {
                out.push(format!("statement {idx}: {e}"));
            }
        }
    }
    for v in call.args.values() {
        if let ValueRef::Var(n) = v {
            if !bound.contains(n) {
                out.push(format!("statement {idx}: unbound variable {n}"));
            }
        }
    }
}

fn check_stmt(
    s: &Statement,
    idx: usize,
    nested: bool,
    bound: &BTreeSet<String>,
    registry: &Registry,
    out: &mut Vec<String>,
) {
    match s {
        Statement::Let { call, .. } => {
            if nested {
                out.push(format!("statement {idx}: let is not allowed inside if"));
            }
            check_call(call, idx, bound, registry, out);
        }
        Statement::Call { call } => check_call(call, idx, bound, registry, out),
        Statement::If { pred, body } => {
            for v in pred_vars(pred) {
                if !bound.contains(v) {
                    out.push(format!("statement {idx}: unbound variable {v}"));
                }
            }
            check_stmt(body, idx, true, bound, registry, out);
        }
        Statement::FindingText { text } => {
            for v in interpolated_vars(text) {
                if !bound.contains(&v) {
                    out.push(format!("statement {idx}: unbound variable {v}"));
                }
            }
        }
        Statement::FindingVar { var } => {
            if !bound.contains(var) {
                out.push(format!("statement {idx}: unbound variable {var}"));
            }
        }
    }
}

/// Returns every violation; an empty program is valid.
pub fn validate_program(program: &SopProgram, registry: &Registry) -> Result<(), Vec<String>> {
    let mut out = Vec::new();
    if program.statements.len() > MAX_STATEMENTS {
        out.push(format!(
            "program has {} statements, limit is {MAX_STATEMENTS}",
            program.statements.len()
        ));
    }
    let mut bound = BTreeSet::new();
    for (i, s) in program.statements.iter().enumerate() {
        check_stmt(s, i, false, &bound, registry, &mut out);
        if let Statement::Let { name, .. } = s {
            bound.insert(name.clone());
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub statement: String,
    pub status: StepStatus,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    ToolFailed,
    UnboundVariable,
    UnknownTool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeFault {
    pub index: usize,
    pub kind: FaultKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramRun {
    pub success: bool,
    pub findings: Vec<String>,
    pub trace: Vec<TraceEntry>,
    pub failure: Option<RuntimeFault>,
    /// Components flagged by any executed call.
    pub flagged: Vec<String>,
}

impl ProgramRun {
    /// Findings, or the failure, followed by the statement trace.
    pub fn report(&self) -> String {
        let mut s = match &self.failure {
            Some(f) => format!("run_sop failed at statement {}: {}", f.index, f.detail),
            None if self.findings.is_empty() => {
                format!(
                    "run_sop completed {} statements: no findings",
                    self.trace.len()
                )
            }
            None => {
                let mut s = format!(
                    "run_sop completed {} statements, {} findings:",
                    self.trace.len(),
                    self.findings.len()
                );
                for f in &self.findings {
                    s.push_str(&format!("\n- {f}"));
                }
                s
            }
        };
        s.push_str("\ntrace:");
        for t in &self.trace {
            let status = match t.status {
                StepStatus::Ok => "ok",
                StepStatus::Skipped => "skipped",
                StepStatus::Failed => "FAILED",
            };
            s.push_str(&format!(
                "\n  [{}] {status} {}: {}",
                t.index, t.statement, t.summary
            ));
        }
        s
    }
}

struct Interp<'e, 'a> {
    env: &'e ReadEnv<'a>,
    vars: BTreeMap<String, ToolResult>,
    findings: Vec<String>,
    flagged: Vec<String>,
}

enum Outcome {
    Done(String),
    Skipped,
}

impl Interp<'_, '_> {
    fn var(&self, name: &str) -> Result<&ToolResult, (FaultKind, String)> {
        self.vars.get(name).ok_or_else(|| {
            (
                FaultKind::UnboundVariable,
                format!("unbound variable {name}"),
            )
        })
    }

    fn call(&mut self, c: &ProgramCall) -> Result<ToolResult, (FaultKind, String)> {
        let allowed = self.env.registry.get(&c.tool).is_some_and(|s| {
            matches!(
                s.category,
                ToolCategory::Observability | ToolCategory::Analysis
            )
        });
        if !allowed {
            return Err((FaultKind::UnknownTool, format!("unknown tool {}", c.tool)));
        }
        let mut call = ToolCall::new(&c.tool);
        for (k, v) in &c.args {
            let value = match v {
                ValueRef::Lit(s) => s.clone(),
                ValueRef::Var(n) => {
                    let r = self.var(n)?;
                    r.flagged
                        .first()
                        .cloned()
                        .unwrap_or_else(|| r.headline().to_string())
                }
            };
            call.args.insert(k.clone(), value);
        }
        let r = run_readonly(&call, self.env);
        if !r.success {
            return Err((
                FaultKind::ToolFailed,
                r.error.clone().unwrap_or_else(|| r.observation.clone()),
            ));
        }
        for f in &r.flagged {
            if !self.flagged.contains(f) {
                self.flagged.push(f.clone());
            }
        }
        Ok(r)
    }

    fn pred(&self, p: &Predicate) -> Result<bool, (FaultKind, String)> {
        Ok(match p {
            Predicate::Contains { var, keyword } => self
                .var(var)?
                .observation
                .to_lowercase()
                .contains(&keyword.to_lowercase()),
            Predicate::Flagged { var } => !self.var(var)?.flagged.is_empty(),
            Predicate::Compare { var, op, value } => {
                let r = self.var(var)?;
                let x = r.value.unwrap_or(r.flagged.len() as f64);
                match op.as_str() {
                    ">" => x > *value,
                    ">=" => x >= *value,
                    "<" => x < *value,
                    "<=" => x <= *value,
                    "==" => x == *value,
                    _ => x != *value,
                }
            }
            Predicate::Not { inner } => !self.pred(inner)?,
        })
    }

    fn expand(&self, text: &str) -> Result<String, (FaultKind, String)> {
        let mut out = text.to_string();
        for v in interpolated_vars(text) {
            let r = self.var(&v)?;
            let rep = if r.flagged.is_empty() {
                "none".to_string()
            } else {
                r.flagged.join(", ")
            };
            out = out.replace(&format!("{{{v}}}"), &rep);
        }
        Ok(out)
    }

    fn exec(&mut self, s: &Statement) -> Result<Outcome, (FaultKind, String)> {
        match s {
            Statement::Let { name, call } => {
                let r = self.call(call)?;
                let h = r.headline().to_string();
                self.vars.insert(name.clone(), r);
                Ok(Outcome::Done(h))
            }
            Statement::Call { call } => Ok(Outcome::Done(self.call(call)?.headline().to_string())),
            Statement::If { pred, body } => {
                if self.pred(pred)? {
                    self.exec(body)
                } else {
                    Ok(Outcome::Skipped)
                }
            }
            Statement::FindingText { text } => {
                let f = self.expand(text)?;
                self.findings.push(f.clone());
                Ok(Outcome::Done(f))
            }
            Statement::FindingVar { var } => {
                let f = self.var(var)?.headline().to_string();
                self.findings.push(f.clone());
                Ok(Outcome::Done(f))
            }
        }
    }
}

/// Executes every statement in order. Stops at the first failure, in which
/// case the trace ends with the failing statement and no findings are kept.
pub fn run_program(program: &SopProgram, env: &ReadEnv<'_>) -> ProgramRun {
    let mut it = Interp {
        env,
        vars: BTreeMap::new(),
        findings: Vec::new(),
        flagged: Vec::new(),
    };
    let mut trace = Vec::new();
    for (index, s) in program.statements.iter().enumerate() {
        let statement = s.to_string();
        match it.exec(s) {
            Ok(Outcome::Done(summary)) => trace.push(TraceEntry {
                index,
                statement,
                status: StepStatus::Ok,
                summary,
            }),
            Ok(Outcome::Skipped) => trace.push(TraceEntry {
                index,
                statement,
                status: StepStatus::Skipped,
                summary: "condition false".into(),
            }),
            Err((kind, detail)) => {
                trace.push(TraceEntry {
                    index,
                    statement,
                    status: StepStatus::Failed,
                    summary: detail.clone(),
                });
                return ProgramRun {
                    success: false,
                    findings: Vec::new(),
                    trace,
                    failure: Some(RuntimeFault {
                        index,
                        kind,
                        detail,
                    }),
                    flagged: Vec::new(),
                };
            }
        }
    }
    ProgramRun {
        success: true,
        findings: it.findings,
        trace,
        failure: None,
        flagged: it.flagged,
    }
}
