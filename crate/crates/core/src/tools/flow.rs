//! SOP flow tools and the top-level tool dispatcher.

use serde::{Deserialize, Serialize};

use super::call::ToolCall;
use super::dsl::{
    parse_program, run_program, validate_program, ProgramRun, SopProgram, DSL_GRAMMAR,
};
use super::readonly::{run_readonly, ReadEnv};
use super::speak::speak;
use super::{
    Payload, Registry, ToolCategory, ToolError, ToolResult, GENERATE_SOP, GENERATE_SOP_CODE,
    MATCH_OBSERVATION, MATCH_SOP, RUN_SOP, SPEAK,
};
use crate::kb::{KnowledgeBase, SopDoc};
use crate::llm::{ChatMessage, LlmBackend, LlmError};

pub const SOP_ROLE_TAG: &str = "ROLE: sop.generate";
pub const CODE_ROLE_TAG: &str = "ROLE: code.generate";
const FEW_SHOT: usize = 3;

/// SOP state carried across the steps of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SopContext {
    /// Best matched or most recently generated SOP.
    pub current_sop: Option<String>,
    pub program: Option<SopProgram>,
    pub program_sop: Option<String>,
    /// Why the last program was rejected or failed; shown when regenerating.
    pub last_program_error: Option<String>,
    pub last_run: Option<ProgramRun>,
}

pub struct FlowEnv<'a> {
    pub read: ReadEnv<'a>,
    pub kb: &'a mut KnowledgeBase,
    pub llm: &'a dyn LlmBackend,
    pub top_k: usize,
    pub threshold: f64,
    pub ctx: &'a mut SopContext,
}

pub fn sop_agent_system_prompt() -> String {
    "You write standard operating procedures (SOPs) for diagnosing incidents in a \
     Kubernetes-hosted microservice system. An SOP has a short name and numbered steps; \
     each step names one check and what its result implies. Reply with a line \
     `SOP: <name>` followed by the numbered steps and nothing else."
        .to_string()
}

pub fn code_agent_system_prompt(registry: &Registry) -> String {
    let tools: String = registry
        .tools()
        .iter()
        .filter(|t| {
            matches!(
                t.category,
                ToolCategory::Observability | ToolCategory::Analysis
            )
        })
        .map(|t| format!("- {}: {}\n", t.signature(), t.description))
        .collect();
    format!(
        "You are CodeAgent. You know every tool of the diagnosis system and convert SOPs \
         into programs that run from start to finish in one invocation.\n\nTools callable \
         from programs:\n{tools}\nProgram syntax:\n{DSL_GRAMMAR}\n\nReply with one fenced \
         program block."
    )
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    let mut out: String = out.trim_end_matches('-').chars().take(40).collect();
    if out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        "sop".into()
    } else {
        out
    }
}

/// Parses `SOP: <name>` followed by numbered steps (`1. ...` or `1) ...`).
pub fn parse_generated_sop(reply: &str) -> Result<(String, Vec<String>), String> {
    let mut name = None;
    let mut steps = Vec::new();
    for line in reply.lines().map(str::trim) {
        let lower = line.to_lowercase();
        if name.is_none() && lower.starts_with("sop:") {
            name = Some(line[4..].trim().to_string());
            continue;
        }
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            let rest = &line[digits..];
            if let Some(step) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
                let step = step.trim();
                if !step.is_empty() {
                    steps.push(step.to_string());
                }
            }
        }
    }
    match name {
        Some(n) if !n.is_empty() && !steps.is_empty() => Ok((n, steps)),
        Some(n) if !n.is_empty() => Err("reply has no numbered steps".into()),
        _ => Err("reply has no `SOP: <name>` line".into()),
    }
}

fn render_sop(doc: &SopDoc) -> String {
    let mut s = format!("SOP: {}", doc.name);
    for (i, step) in doc.steps.iter().enumerate() {
        s.push_str(&format!("\n{}. {step}", i + 1));
    }
    s
}

fn match_sop(call: &ToolCall, env: &mut FlowEnv<'_>) -> Result<ToolResult, ToolError> {
    let query = call.get("query").unwrap_or("");
    let hits = env.kb.match_sop(query, env.top_k, env.threshold, env.llm)?;
    env.ctx.current_sop = hits.first().map(|(d, _)| d.id.clone());
    let text = if hits.is_empty() {
        format!("no SOP matched (threshold {:.2})", env.threshold)
    } else {
        let mut s = format!("matched {} SOPs", hits.len());
        for (i, (d, score)) in hits.iter().enumerate() {
            s.push_str(&format!(
                "\n{}. [{}] {} (score {score:.3}, level {})",
                i + 1,
                d.id,
                d.name,
                d.level
            ));
        }
        s
    };
    let best = hits.first().map_or(0.0, |h| h.1);
    Ok(ToolResult::ok(MATCH_SOP, text)
        .with_value(best)
        .with_payload(Payload::SopHits {
            hits: hits.into_iter().map(|(d, s)| (d.id.clone(), s)).collect(),
        }))
}

fn generate_sop(call: &ToolCall, env: &mut FlowEnv<'_>) -> Result<ToolResult, ToolError> {
    let fault_info = call.get("fault_info").unwrap_or("").trim();
    if fault_info.is_empty() {
        return Err(ToolError::BadArg {
            arg: "fault_info".into(),
            detail: "must not be empty".into(),
        });
    }
    let parent = match call.get("parent") {
        Some(p) => Some(
            env.kb
                .get_sop(p)
                .cloned()
                .ok_or_else(|| ToolError::NotFound(format!("unknown SOP {p}")))?,
        ),
        None => None,
    };
    let examples = env.kb.match_sop(fault_info, FEW_SHOT, -1.0, env.llm)?;
    let mut prompt = format!("{SOP_ROLE_TAG}\nFault information: {fault_info}\n");
    if let Some(p) = &parent {
        prompt.push_str(&format!(
            "Refine this SOP into a more specific one:\n{}\n",
            render_sop(p)
        ));
    }
    if !examples.is_empty() {
        prompt.push_str("Existing SOPs for reference:\n");
        for (d, _) in &examples {
            prompt.push_str(&render_sop(d));
            prompt.push_str("\n\n");
        }
    }
    prompt.push_str("Write the SOP now.");
    let reply = env.llm.complete(&[
        ChatMessage::system(sop_agent_system_prompt()),
        ChatMessage::user(prompt),
    ])?;
    let (name, steps) =
        parse_generated_sop(&reply).map_err(|detail| ToolError::GenerationParse {
            detail,
            raw: reply.clone(),
        })?;
    let base = format!("gen-{}", slug(&name));
    let mut id = base.clone();
    let mut n = 2;
    while env.kb.get_sop(&id).is_some() {
        id = format!("{base}-{n}");
        n += 1;
    }
    let doc = SopDoc {
        id: id.clone(),
        name,
        level: parent.as_ref().map_or(0, |p| p.level + 1),
        parent: parent.map(|p| p.id),
        steps,
    };
    env.kb.add_sop(doc.clone())?;
    env.ctx.current_sop = Some(id.clone());
    env.ctx.program = None;
    env.ctx.last_program_error = None;
    let text = format!(
        "generated SOP [{id}] (level {})\n{}",
        doc.level,
        render_sop(&doc)
    );
    Ok(ToolResult::ok(GENERATE_SOP, text).with_payload(Payload::Sop { sop: doc }))
}

/// The CodeAgent: turns an SOP into a validated program. `last_error`
/// explains why the previous attempt was rejected, if any.
pub fn code_agent_generate(
    doc: &SopDoc,
    registry: &Registry,
    llm: &dyn LlmBackend,
    last_error: Option<&str>,
) -> Result<SopProgram, ToolError> {
    let mut prompt = format!(
        "{CODE_ROLE_TAG}\nConvert this SOP [{}] into a program.\n{}\n",
        doc.id,
        render_sop(doc)
    );
    if let Some(e) = last_error {
        prompt.push_str(&format!(
            "The previous program was rejected: {e}\nWrite a corrected program.\n"
        ));
    }
    let reply = llm.complete(&[
        ChatMessage::system(code_agent_system_prompt(registry)),
        ChatMessage::user(prompt),
    ])?;
    let program = match parse_program(&reply) {
        Ok(p) if p.statements.is_empty() => Err("reply contains no program statements".to_string()),
        other => other,
    }
    .map_err(|detail| ToolError::GenerationParse {
        detail,
        raw: reply.clone(),
    })?;
    validate_program(&program, registry).map_err(ToolError::ProgramValidation)?;
    Ok(program)
}

fn generate_sop_code(call: &ToolCall, env: &mut FlowEnv<'_>) -> Result<ToolResult, ToolError> {
    let id = match call.get("sop") {
        Some(s) => s.to_string(),
        None => env.ctx.current_sop.clone().ok_or_else(|| {
            ToolError::Precondition("no SOP selected; call match_sop or generate_sop first".into())
        })?,
    };
    let doc = env
        .kb
        .get_sop(&id)
        .cloned()
        .ok_or_else(|| ToolError::NotFound(format!("unknown SOP {id}")))?;
    let last_error = env.ctx.last_program_error.clone();
    env.ctx.current_sop = Some(id.clone());
    env.ctx.program = None;
    let program = code_agent_generate(&doc, env.read.registry, env.llm, last_error.as_deref())
        .map_err(|e| {
            match &e {
                ToolError::GenerationParse { detail, .. } => {
                    env.ctx.last_program_error = Some(detail.clone())
                }
                ToolError::ProgramValidation(v) => env.ctx.last_program_error = Some(v.join("; ")),
                _ => {}
            }
            e
        })?;
    env.ctx.last_program_error = None;
    env.ctx.program = Some(program.clone());
    env.ctx.program_sop = Some(id.clone());
    let text = format!(
        "program for SOP [{id}] ({} statements)\n{program}",
        program.statements.len()
    );
    Ok(ToolResult::ok(GENERATE_SOP_CODE, text.trim_end())
        .with_value(program.statements.len() as f64)
        .with_payload(Payload::Program { program }))
}

fn run_sop(env: &mut FlowEnv<'_>) -> Result<ToolResult, ToolError> {
    let program = env.ctx.program.clone().ok_or_else(|| {
        ToolError::Precondition("no SOP program; call generate_sop_code first".into())
    })?;
    let run = run_program(&program, &env.read);
    env.ctx.last_run = Some(run.clone());
    let report = run.report();
    if let Some(f) = &run.failure {
        let err = ToolError::ProgramRuntime {
            index: f.index,
            detail: f.detail.clone(),
        };
        env.ctx.last_program_error = Some(err.to_string());
        env.ctx.program = None;
        let mut r = ToolResult::failed(RUN_SOP, &err);
        r.observation = report;
        r.payload = Payload::Run { run };
        return Ok(r);
    }
    let flagged = run.flagged.clone();
    let n = run.findings.len() as f64;
    Ok(ToolResult::ok(RUN_SOP, report)
        .with_flagged(flagged)
        .with_value(n)
        .with_payload(Payload::Run { run }))
}

fn match_observation(call: &ToolCall, env: &mut FlowEnv<'_>) -> Result<ToolResult, ToolError> {
    let text = match call.get("observation") {
        Some(o) if !o.trim().is_empty() => o.to_string(),
        Some(_) => {
            return Err(ToolError::BadArg {
                arg: "observation".into(),
                detail: "must not be empty".into(),
            })
        }
        None => match &env.ctx.last_run {
            Some(run) if run.success && !run.findings.is_empty() => run.findings.join("\n"),
            Some(run) if run.success => "no findings".to_string(),
            _ => {
                return Err(ToolError::Precondition(
                    "no observation given and no successful run_sop to take it from".into(),
                ))
            }
        },
    };
    let hits = env
        .kb
        .match_observation(&text, env.top_k, env.threshold, env.llm)?;
    let out = if hits.is_empty() {
        format!(
            "no similar historical incident (threshold {:.2})",
            env.threshold
        )
    } else {
        let mut s = format!("{} similar historical incidents", hits.len());
        for (i, (inc, score)) in hits.iter().enumerate() {
            s.push_str(&format!(
                "\n{}. [{}] type {} (score {score:.3}): {}",
                i + 1,
                inc.id,
                inc.fault_type,
                inc.manifestation
            ));
        }
        s
    };
    Ok(ToolResult::ok(MATCH_OBSERVATION, out)
        .with_value(hits.len() as f64)
        .with_payload(Payload::IncidentHits {
            hits: hits
                .into_iter()
                .map(|(i, s)| (i.id.clone(), i.fault_type.clone(), s))
                .collect(),
        }))
}

/// Runs any registered tool. Tool failures come back as failed results;
/// only model backend failures are returned as errors.
pub fn execute(call: &ToolCall, env: &mut FlowEnv<'_>) -> Result<ToolResult, LlmError> {
    let spec = match env.read.registry.validate_call(call) {
        Ok(s) => s,
        Err(e) => return Ok(ToolResult::failed(&call.tool, &e)),
    };
    if matches!(
        spec.category,
        ToolCategory::Observability | ToolCategory::Analysis
    ) {
        return Ok(run_readonly(call, &env.read));
    }
    let result = match call.tool.as_str() {
        MATCH_SOP => match_sop(call, env),
        GENERATE_SOP => generate_sop(call, env),
        GENERATE_SOP_CODE => generate_sop_code(call, env),
        RUN_SOP => run_sop(env),
        MATCH_OBSERVATION => match_observation(call, env),
        SPEAK => speak(call),
        other => Err(ToolError::UnknownTool(other.to_string())),
    };
    match result {
        Ok(r) => Ok(r),
        Err(ToolError::Backend(e)) => Err(e),
        Err(e) => Ok(ToolResult::failed(&call.tool, &e)),
    }
}
