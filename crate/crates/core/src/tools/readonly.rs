//! Observability and analysis tools. None of them mutate the data source.

use std::collections::BTreeMap;

use super::call::ToolCall;
use super::detector::{DetectorConfig, MetricVerdict};
use super::{Payload, Registry, ToolCategory, ToolError, ToolResult};
use crate::sandbox::{DataSource, ResourceKind, ResourceRow, SandboxError, SpanStatus, TimeWindow};

const MAX_TRACES_LISTED: usize = 10;
const MAX_LOG_LINES_LISTED: usize = 10;
const RELEVANT_METRICS: usize = 5;
const KUBECTL_SUBSET: &str =
    "get pods|nodes|services|deployments|statefulsets|namespaces, describe pod <id>, logs <pod>";

/// What read-only tools need.
#[derive(Clone, Copy)]
pub struct ReadEnv<'a> {
    pub source: &'a dyn DataSource,
    pub detector: &'a DetectorConfig,
    pub registry: &'a Registry,
}

impl From<SandboxError> for ToolError {
    fn from(e: SandboxError) -> Self {
        match e {
            SandboxError::NotFound { kind, name } => {
                ToolError::NotFound(format!("unknown {kind} {name}"))
            }
            SandboxError::Config(m) => ToolError::Precondition(m),
        }
    }
}

/// Runs an observability or analysis tool. Errors become failed results.
pub fn run_readonly(call: &ToolCall, env: &ReadEnv<'_>) -> ToolResult {
    exec(call, env).unwrap_or_else(|e| ToolResult::failed(&call.tool, &e))
}

fn exec(call: &ToolCall, env: &ReadEnv<'_>) -> Result<ToolResult, ToolError> {
    let spec = env.registry.validate_call(call)?;
    if !matches!(
        spec.category,
        ToolCategory::Observability | ToolCategory::Analysis
    ) {
        return Err(ToolError::Precondition(format!(
            "{} is not a read-only tool",
            call.tool
        )));
    }
    let window = window_arg(call, env)?;
    match call.tool.as_str() {
        "whether_is_abnormal_metric" => abnormal_metric(call, env, window),
        "collect_trace" => collect_trace(env, window),
        "kubectl_logs" => kubectl_logs(call.get("pod"), env, window),
        "pod_analyze" => Ok(analyze(ResourceKind::Pods, env, window)),
        "node_analyze" => Ok(analyze(ResourceKind::Nodes, env, window)),
        "service_analyze" => Ok(analyze(ResourceKind::Services, env, window)),
        "deployment_analyze" => Ok(analyze(ResourceKind::Deployments, env, window)),
        "statefulset_analyze" => Ok(analyze(ResourceKind::StatefulSets, env, window)),
        "run_kubectl_command" => kubectl(call.get("command").unwrap_or(""), env, window),
        "get_all_namespace" => {
            let ns = env.source.namespaces();
            Ok(ToolResult::ok(
                &call.tool,
                format!("{} namespaces: {}", ns.len(), ns.join(", ")),
            )
            .with_value(ns.len() as f64))
        }
        "get_relevant_metric" => relevant_metric(call.get("query").unwrap_or(""), env),
        other => Err(ToolError::UnknownTool(other.to_string())),
    }
}

fn window_arg(call: &ToolCall, env: &ReadEnv<'_>) -> Result<TimeWindow, ToolError> {
    match call.get("window") {
        None => Ok(env.detector.default_window(env.source.episode_window())),
        Some(w) => TimeWindow::parse(w).ok_or_else(|| ToolError::BadArg {
            arg: "window".into(),
            detail: format!("expected start-end seconds, got {w:?}"),
        }),
    }
}

fn verdict(
    env: &ReadEnv<'_>,
    component: &str,
    metric: &str,
    window: TimeWindow,
) -> Result<MetricVerdict, SandboxError> {
    let in_window = env.source.query_metrics(component, metric, window)?;
    let episode = env.source.episode_window();
    let before = env.source.query_metrics(
        component,
        metric,
        TimeWindow::new(episode.start_s, window.start_s),
    )?;
    Ok(env
        .detector
        .judge(component, metric, &in_window.samples, &before.samples))
}

/// First anomalous metric in the default window, scanning components in
/// source order and metrics in catalog order.
pub fn first_anomaly(env: &ReadEnv<'_>) -> Option<MetricVerdict> {
    let window = env.detector.default_window(env.source.episode_window());
    let catalog = env.source.metric_catalog();
    env.source.components().iter().find_map(|c| {
        catalog
            .iter()
            .filter_map(|m| verdict(env, c, m, window).ok())
            .find(|v| v.anomalous)
    })
}

fn abnormal_metric(
    call: &ToolCall,
    env: &ReadEnv<'_>,
    window: TimeWindow,
) -> Result<ToolResult, ToolError> {
    let catalog = env.source.metric_catalog();
    let components = env.source.components();
    let targets: Vec<String> = match call.get("target") {
        Some(t) if components.iter().any(|c| c == t) => vec![t.to_string()],
        Some(t) => return Err(ToolError::NotFound(format!("unknown component {t}"))),
        None => components,
    };
    let metrics: Vec<String> = match call.get("metric") {
        Some(m) if catalog.iter().any(|c| c == m) => vec![m.to_string()],
        Some(m) => {
            return Err(ToolError::NotFound(format!(
                "unknown metric {m}; known metrics: {}",
                catalog.join(", ")
            )))
        }
        None => catalog,
    };
    let explicit = call.get("target").is_some() && call.get("metric").is_some();
    let mut verdicts = Vec::new();
    for t in &targets {
        for m in &metrics {
            match verdict(env, t, m, window) {
                Ok(v) => verdicts.push(v),
                // metric not recorded for this kind of component
                Err(SandboxError::NotFound { .. }) if !explicit => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    if verdicts.is_empty() {
        return Err(ToolError::NotFound(format!(
            "no metric {} recorded for {}",
            call.get("metric").unwrap_or("*"),
            call.get("target").unwrap_or("*")
        )));
    }
    let abnormal: Vec<&MetricVerdict> = verdicts.iter().filter(|v| v.anomalous).collect();
    let mut flagged: Vec<String> = Vec::new();
    for v in &abnormal {
        if !flagged.contains(&v.component) {
            flagged.push(v.component.clone());
        }
    }
    let text = if verdicts.len() == 1 {
        verdicts[0].to_string()
    } else if abnormal.is_empty() {
        format!(
            "all {} checked metrics are normal in window {window}",
            verdicts.len()
        )
    } else {
        let summary: Vec<String> = abnormal
            .iter()
            .map(|v| {
                format!(
                    "{} on {} ({})",
                    v.metric,
                    v.component,
                    v.direction.map(|d| d.to_string()).unwrap_or_default()
                )
            })
            .collect();
        let mut s = format!("abnormal metrics: {}", summary.join(", "));
        for v in &abnormal {
            s.push('\n');
            s.push_str(&v.to_string());
        }
        s
    };
    let value = if verdicts.len() == 1 {
        verdicts[0].extreme.unwrap_or(0.0)
    } else {
        abnormal.len() as f64
    };
    Ok(ToolResult::ok(&call.tool, text)
        .with_flagged(flagged)
        .with_value(value)
        .with_payload(Payload::Verdicts { verdicts }))
}

fn collect_trace(env: &ReadEnv<'_>, window: TimeWindow) -> Result<ToolResult, ToolError> {
    let traces = env.source.query_traces(window);
    let mut by_kind: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut listed = Vec::new();
    let mut error_traces = 0;
    let mut total = 0;
    for t in &traces {
        let errors: Vec<_> = t
            .spans
            .iter()
            .filter(|s| s.status == SpanStatus::Error)
            .collect();
        if errors.is_empty() {
            continue;
        }
        error_traces += 1;
        total += errors.len();
        for s in &errors {
            let msg = s.error_message.clone().unwrap_or_default();
            *by_kind.entry((s.service.clone(), msg)).or_default() += 1;
        }
        if listed.len() < MAX_TRACES_LISTED {
            let spans: Vec<String> = errors
                .iter()
                .map(|s| {
                    format!(
                        "{} error \"{}\" duration {:.1}ms",
                        s.service,
                        s.error_message.as_deref().unwrap_or(""),
                        s.duration_ms
                    )
                })
                .collect();
            listed.push(format!(
                "trace {} ({}) at {}s: {}",
                t.trace_id,
                t.route,
                t.start_s,
                spans.join("; ")
            ));
        }
    }
    if total == 0 {
        return Ok(ToolResult::ok(
            "collect_trace",
            format!(
                "no abnormal spans in window {window} ({} traces inspected)",
                traces.len()
            ),
        )
        .with_value(0.0));
    }
    let summary: Vec<String> = by_kind
        .iter()
        .map(|((svc, msg), n)| format!("{svc} \"{msg}\" x{n}"))
        .collect();
    let mut text = format!(
        "{total} error spans in {error_traces} of {} traces: {}",
        traces.len(),
        summary.join(", ")
    );
    for l in &listed {
        text.push('\n');
        text.push_str(l);
    }
    if error_traces > listed.len() {
        text.push_str(&format!(
            "\n... {} more traces with errors",
            error_traces - listed.len()
        ));
    }
    let mut flagged = Vec::new();
    for (svc, _) in by_kind.keys() {
        for p in env.source.service_pods(svc) {
            if !flagged.contains(&p) {
                flagged.push(p);
            }
        }
    }
    Ok(ToolResult::ok("collect_trace", text)
        .with_flagged(flagged)
        .with_value(total as f64))
}

fn kubectl_logs(
    pod: Option<&str>,
    env: &ReadEnv<'_>,
    window: TimeWindow,
) -> Result<ToolResult, ToolError> {
    let pods = match pod {
        Some(p) => vec![p.to_string()],
        None => env.source.pods(),
    };
    let mut lines = Vec::new();
    for p in &pods {
        lines.extend(env.source.query_logs(p, window)?);
    }
    let abnormal = env.detector.abnormal_logs(&lines);
    let scope = pod.unwrap_or("any pod");
    if abnormal.is_empty() {
        return Ok(ToolResult::ok(
            "kubectl_logs",
            format!("no abnormal logs for {scope} in window {window}"),
        )
        .with_value(0.0));
    }
    // identical messages are folded with a repeat count
    let mut folded: Vec<(String, String, f64, usize)> = Vec::new();
    for l in &abnormal {
        match folded
            .iter_mut()
            .find(|(p, t, _, _)| *p == l.pod && *t == l.text)
        {
            Some(e) => e.3 += 1,
            None => folded.push((l.pod.clone(), l.text.clone(), l.t, 1)),
        }
    }
    let mut flagged: Vec<String> = Vec::new();
    for l in &abnormal {
        if !flagged.contains(&l.pod) {
            flagged.push(l.pod.clone());
        }
    }
    let mut text = format!(
        "{} abnormal log lines from {}",
        abnormal.len(),
        flagged.join(", ")
    );
    for (p, t, first, n) in folded.iter().take(MAX_LOG_LINES_LISTED) {
        text.push_str(&format!("\n[{p} x{n} since {first}s] {t}"));
    }
    Ok(ToolResult::ok("kubectl_logs", text)
        .with_flagged(flagged)
        .with_value(abnormal.len() as f64))
}

fn render_rows(kind: ResourceKind, rows: &[ResourceRow]) -> String {
    let unhealthy: Vec<&str> = rows
        .iter()
        .filter(|r| !r.healthy)
        .map(|r| r.name.as_str())
        .collect();
    let mut text = if unhealthy.is_empty() {
        format!("{} {}: all healthy", rows.len(), kind.as_str())
    } else {
        format!(
            "{} {}: {} unhealthy ({})",
            rows.len(),
            kind.as_str(),
            unhealthy.len(),
            unhealthy.join(", ")
        )
    };
    let w0 = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let w1 = rows
        .iter()
        .map(|r| r.status.len())
        .max()
        .unwrap_or(6)
        .max(6);
    text.push_str(&format!("\n{:w0$}  {:w1$}  DETAILS", "NAME", "STATUS"));
    for r in rows {
        text.push_str(&format!(
            "\n{:w0$}  {:w1$}  {}",
            r.name, r.status, r.details
        ));
    }
    text
}

fn analyze(kind: ResourceKind, env: &ReadEnv<'_>, window: TimeWindow) -> ToolResult {
    let rows = env.source.query_resource_state(kind, window);
    let tool = match kind {
        ResourceKind::Pods => "pod_analyze",
        ResourceKind::Nodes => "node_analyze",
        ResourceKind::Services => "service_analyze",
        ResourceKind::Deployments => "deployment_analyze",
        ResourceKind::StatefulSets => "statefulset_analyze",
    };
    let flagged: Vec<String> = rows
        .iter()
        .filter(|r| !r.healthy)
        .map(|r| r.name.clone())
        .collect();
    ToolResult::ok(tool, render_rows(kind, &rows))
        .with_value(flagged.len() as f64)
        .with_flagged(flagged)
}

fn kubectl(command: &str, env: &ReadEnv<'_>, window: TimeWindow) -> Result<ToolResult, ToolError> {
    let unsupported = || ToolError::Unsupported {
        command: command.to_string(),
        supported: KUBECTL_SUBSET.to_string(),
    };
    let mut words: Vec<&str> = Vec::new();
    let mut it = command.split_whitespace().peekable();
    if it.peek() == Some(&"kubectl") {
        it.next();
    }
    while let Some(w) = it.next() {
        match w {
            "-n" | "--namespace" | "-o" | "--output" => {
                it.next();
            }
            "-A" | "--all-namespaces" => {}
            w if w.starts_with("--namespace=")
                || w.starts_with("-o=")
                || w.starts_with("--output=") => {}
            w => words.push(w),
        }
    }
    if words.is_empty() {
        return Err(ToolError::BadArg {
            arg: "command".into(),
            detail: "empty kubectl command".into(),
        });
    }
    let mut result = match words.as_slice() {
        ["get", "namespaces" | "namespace" | "ns"] => {
            let ns = env.source.namespaces();
            let mut text = format!("{} namespaces", ns.len());
            for n in &ns {
                text.push_str(&format!("\n{n}  Active"));
            }
            ToolResult::ok("run_kubectl_command", text)
        }
        ["get", kind] => {
            let kind: ResourceKind = kind.parse().map_err(|_| unsupported())?;
            analyze(kind, env, window)
        }
        ["describe", "pod" | "pods" | "po", id] => {
            let rows = env.source.query_resource_state(ResourceKind::Pods, window);
            let row = rows
                .iter()
                .find(|r| r.name == *id)
                .ok_or_else(|| ToolError::NotFound(format!("unknown pod {id}")))?;
            let logs = env.source.query_logs(id, window)?;
            let mut text = format!(
                "Name: {}\nStatus: {}\nDetails: {}\nRecent logs:",
                row.name, row.status, row.details
            );
            for l in logs.iter().rev().take(5).rev() {
                text.push_str(&format!("\n  {}s {}", l.t, l.text));
            }
            let flagged = if row.healthy {
                vec![]
            } else {
                vec![row.name.clone()]
            };
            ToolResult::ok("run_kubectl_command", text).with_flagged(flagged)
        }
        ["logs", id] => {
            let logs = env.source.query_logs(id, window)?;
            let mut text = format!("{} log lines from {id}", logs.len());
            for l in logs.iter().rev().take(20).rev() {
                text.push_str(&format!("\n{}s {}", l.t, l.text));
            }
            ToolResult::ok("run_kubectl_command", text)
        }
        _ => return Err(unsupported()),
    };
    result.tool = "run_kubectl_command".into();
    Ok(result)
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Ranks metric names: names containing the whole query first, then by the
/// number of shared tokens, then alphabetically.
pub(crate) fn rank_metrics(query: &str, catalog: &[String]) -> Vec<String> {
    let q = query.trim().to_lowercase();
    let qt = tokens(&q);
    let mut scored: Vec<(bool, usize, &String)> = catalog
        .iter()
        .map(|m| {
            let mt = tokens(m);
            let shared = qt.iter().filter(|t| mt.contains(t)).count();
            (m.to_lowercase().contains(&q), shared, m)
        })
        .filter(|(sub, shared, _)| *sub || *shared > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
    scored
        .into_iter()
        .take(RELEVANT_METRICS)
        .map(|(_, _, m)| m.clone())
        .collect()
}

fn relevant_metric(query: &str, env: &ReadEnv<'_>) -> Result<ToolResult, ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::BadArg {
            arg: "query".into(),
            detail: "query must not be empty".into(),
        });
    }
    let ranked = rank_metrics(query, &env.source.metric_catalog());
    let text = if ranked.is_empty() {
        format!("no metric matches {query:?}")
    } else {
        format!("relevant metrics: {}", ranked.join(", "))
    };
    Ok(ToolResult::ok("get_relevant_metric", text).with_value(ranked.len() as f64))
}
