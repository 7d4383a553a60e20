//! Helpers shared by the integration tests: golden corpus access,
//! independent oracles and random generators.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use proptest::prelude::*;
use serde::Deserialize;

use sopflow::agents::{
    replay_flow_compliance, run_episode, Ablations, ActionCandidate, ActionOutcome, AgentConfig,
    EpisodeEnv, EpisodeOutcome, EpisodeReport, Provenance, RuleId, SelectionMode, StepRecord,
    Transcript, ACTION_TAG, FLOW_PROMPT, JUDGE_TAG, MAIN_ACT_TAG, MAIN_SELECT_TAG,
    MAIN_THOUGHT_TAG, OB_TAG,
};
use sopflow::eval::{run_benchmark, BenchEnv, BenchmarkRun, Corpus, EpisodeRow, EvalConfig};
use sopflow::kb::{builtin, EmbeddingVector, HistoricalIncident, KnowledgeBase, SopDoc};
use sopflow::llm::{LlmBackend, Script, ScriptEntry, ScriptedBackend};
use sopflow::sandbox::{EpisodeScenario, Sandbox};
use sopflow::tools::{
    parse_call, run_readonly, DetectorConfig, Predicate, ProgramCall, ReadEnv, Registry,
    SopProgram, Statement, ValueRef, CODE_ROLE_TAG, MAX_ROOT_CAUSES, SOP_ROLE_TAG,
};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden")
}

/// Manifest whose scripts were authored for `mode`: `default` or an ablation
/// flag name. Modes without their own scripts reuse the default ones.
pub fn golden_manifest(mode: &str) -> PathBuf {
    let name = match mode {
        "sop_knowledge" | "sop_flow" | "action_set" | "judge_agent" => {
            format!("corpus-{mode}.toml")
        }
        _ => "corpus.toml".to_string(),
    };
    golden_dir().join(name)
}

pub fn ablations_for(mode: &str) -> Ablations {
    if mode == "default" {
        Ablations::default()
    } else {
        Ablations::default()
            .without(mode)
            .expect("known ablation flag")
    }
}

/// Runs the golden corpus for `mode` with the bundled knowledge base.
pub fn run_golden(mode: &str, workers: usize) -> BenchmarkRun {
    let corpus = Corpus::load(&golden_manifest(mode)).expect("golden manifest loads");
    let mut cfg = EvalConfig {
        workers,
        ..EvalConfig::default()
    };
    cfg.agent.ablations = ablations_for(mode);
    let registry = Registry::standard();
    let detector = DetectorConfig::default();
    let kb = builtin(64);
    run_benchmark(
        &corpus,
        &cfg,
        BenchEnv {
            registry: &registry,
            detector: &detector,
            kb: &kb,
        },
    )
    .expect("benchmark runs")
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub id: String,
    pub locations: Vec<String>,
    pub types: Vec<String>,
    pub path: Vec<String>,
}

#[derive(Deserialize)]
struct ExpectedFile {
    scenario: Vec<Expected>,
}

pub fn expected_outcomes() -> Vec<Expected> {
    let text = std::fs::read_to_string(golden_dir().join("expected.toml")).expect("expected.toml");
    toml::from_str::<ExpectedFile>(&text)
        .expect("expected.toml parses")
        .scenario
}

// ---- metrics oracle ----

/// Correct and incorrect counts by direct set arithmetic: distinct
/// predictions found in the truth are correct, every other prediction
/// (including repeats) is incorrect.
pub fn recount(predicted: &[String], truth: &BTreeSet<String>) -> (usize, usize) {
    let distinct: BTreeSet<&String> = predicted.iter().collect();
    let correct = distinct.iter().filter(|p| truth.contains(**p)).count();
    (correct, predicted.len() - correct)
}

/// Corpus accuracy recomputed from raw predictions.
pub fn oracle_accuracy(pairs: &[(Vec<String>, BTreeSet<String>)], sigma: f64) -> Option<f64> {
    let (mut c, mut i, mut t) = (0usize, 0usize, 0usize);
    for (pred, truth) in pairs {
        let (pc, pi) = recount(pred, truth);
        c += pc;
        i += pi;
        t += truth.len();
    }
    (t > 0).then(|| (c as f64 - sigma * i as f64) / t as f64)
}

/// Location predictions and truth per episode. Types mirror locations.
pub fn arb_rows() -> impl Strategy<Value = Vec<(Vec<String>, BTreeSet<String>)>> {
    let ids = prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
    let truth = prop::collection::btree_set(ids.clone().prop_map(String::from), 1..4);
    let pred = prop::collection::vec(ids.prop_map(String::from), 0..4);
    prop::collection::vec((pred, truth), 1..12)
}

/// Minimal completed rows carrying the given location predictions.
pub fn rows_from(pairs: &[(Vec<String>, BTreeSet<String>)]) -> Vec<EpisodeRow> {
    use sopflow::eval::{match_items, RowOutcome};
    pairs
        .iter()
        .enumerate()
        .map(|(n, (pred, truth))| {
            let counts = match_items(pred, truth, &BTreeMap::new());
            EpisodeRow {
                scenario: format!("row-{n}"),
                outcome: RowOutcome::Completed,
                predicted_locations: pred.clone(),
                predicted_types: pred.clone(),
                truth_locations: truth.clone(),
                truth_types: truth.clone(),
                location: counts,
                fault_type: counts,
                path_length: Some(1),
                steps: 1,
                error: None,
            }
        })
        .collect()
}

// ---- retrieval oracle ----

pub const VOCAB: [&str; 14] = [
    "cpu",
    "memory",
    "usage",
    "above",
    "threshold",
    "error",
    "rate",
    "pod",
    "node",
    "network",
    "latency",
    "loss",
    "disk",
    "timeout",
];

pub fn arb_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(VOCAB.to_vec()), 1..5).prop_map(|w| w.join(" "))
}

fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// Memoizing wrapper so the oracle does not re-embed every item per query.
pub struct Embedder<'a> {
    backend: &'a dyn LlmBackend,
    memo: std::cell::RefCell<BTreeMap<String, Vec<f64>>>,
}

impl<'a> Embedder<'a> {
    pub fn new(backend: &'a dyn LlmBackend) -> Self {
        Self {
            backend,
            memo: Default::default(),
        }
    }

    fn get(&self, text: &str) -> Vec<f64> {
        self.memo
            .borrow_mut()
            .entry(text.to_string())
            .or_insert_with(|| {
                let v: EmbeddingVector = self.backend.embed(text).unwrap();
                v.values().to_vec()
            })
            .clone()
    }
}

/// Linear scan: score every item, keep those at or above the threshold,
/// order by score then id, take `k`.
pub fn brute_force(
    items: &[(String, String)],
    query: &str,
    k: usize,
    threshold: f64,
    embed: &Embedder<'_>,
) -> Vec<(String, f64)> {
    let q = embed.get(query);
    let mut all: Vec<(String, f64)> = items
        .iter()
        .map(|(id, text)| (id.clone(), plain_cosine(&q, &embed.get(text))))
        .filter(|(_, s)| *s >= threshold)
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Stores whose insertion order differs from id order, with repeated texts
/// so score ties occur.
pub fn arb_store(max: usize) -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec(arb_text(), 0..=max).prop_flat_map(|texts| {
        let n = texts.len();
        Just((0..n).collect::<Vec<_>>())
            .prop_shuffle()
            .prop_map(move |perm| {
                perm.iter()
                    .zip(&texts)
                    .map(|(p, t)| (format!("item-{p:03}"), t.clone()))
                    .collect()
            })
    })
}

pub fn kb_of(items: &[(String, String)]) -> KnowledgeBase {
    let mut kb = KnowledgeBase::new(64);
    for (id, text) in items {
        kb.add_sop(SopDoc::new(id.clone(), text.clone(), vec!["check".into()]))
            .unwrap();
        kb.add_incident(HistoricalIncident {
            id: id.clone(),
            fault_type: "CpuStress".into(),
            manifestation: text.clone(),
        })
        .unwrap();
    }
    kb
}

// ---- SOP program generators ----

pub const VARS: [&str; 3] = ["a", "b", "c"];

/// Tool names a generated program may call, including some the validator
/// must reject.
pub const PROGRAM_TOOLS: [&str; 10] = [
    "whether_is_abnormal_metric",
    "collect_trace",
    "kubectl_logs",
    "pod_analyze",
    "node_analyze",
    "service_analyze",
    "run_kubectl_command",
    "get_relevant_metric",
    "match_sop",
    "frobnicate",
];

fn arb_value() -> impl Strategy<Value = ValueRef> {
    prop_oneof![
        prop::sample::select(vec![
            "cart-0",
            "shipping-0",
            "ghost-0",
            "node-1",
            "cpu_usage",
            "0-600",
            "get pods",
            "cpu"
        ])
        .prop_map(|s| ValueRef::Lit(s.to_string())),
        prop::sample::select(VARS.to_vec()).prop_map(|v| ValueRef::Var(v.to_string())),
    ]
}

fn arb_call() -> impl Strategy<Value = ProgramCall> {
    let arg_names = prop::sample::select(vec![
        "pod", "target", "metric", "window", "command", "query", "bogus",
    ]);
    (
        prop::sample::select(PROGRAM_TOOLS.to_vec()),
        prop::collection::btree_map(arg_names.prop_map(String::from), arb_value(), 0..3),
    )
        .prop_map(|(tool, args)| ProgramCall {
            tool: tool.to_string(),
            args,
        })
}

fn arb_var() -> impl Strategy<Value = String> {
    prop::sample::select(VARS.to_vec()).prop_map(String::from)
}

fn arb_predicate() -> impl Strategy<Value = Predicate> {
    let leaf = prop_oneof![
        arb_var().prop_map(|var| Predicate::Flagged { var }),
        (
            arb_var(),
            prop::sample::select(vec!["error", "throttling", "OOM"])
        )
            .prop_map(|(var, k)| {
                Predicate::Contains {
                    var,
                    keyword: k.to_string(),
                }
            }),
        (
            arb_var(),
            prop::sample::select(vec![">", "<=", "=="]),
            0.0..2.0f64
        )
            .prop_map(|(var, op, value)| {
                Predicate::Compare {
                    var,
                    op: op.to_string(),
                    value,
                }
            }),
    ];
    leaf.prop_recursive(2, 4, 1, |inner| {
        inner.prop_map(|p| Predicate::Not { inner: Box::new(p) })
    })
}

fn arb_statement() -> impl Strategy<Value = Statement> {
    let simple = prop_oneof![
        arb_call().prop_map(|call| Statement::Call { call }),
        Just(Statement::FindingText {
            text: "suspect {a}".to_string()
        }),
        arb_var().prop_map(|var| Statement::FindingVar { var }),
    ];
    prop_oneof![
        3 => (arb_var(), arb_call()).prop_map(|(name, call)| Statement::Let { name, call }),
        2 => simple.clone(),
        2 => (arb_predicate(), simple).prop_map(|(pred, body)| Statement::If {
            pred,
            body: Box::new(body)
        }),
    ]
}

/// Callable tools with their parameters; required ones come first.
const WELLFORMED: &[(&str, &[&str], usize)] = &[
    (
        "whether_is_abnormal_metric",
        &["target", "metric", "window"],
        0,
    ),
    ("collect_trace", &["window"], 0),
    ("kubectl_logs", &["pod", "window"], 0),
    ("pod_analyze", &["window"], 0),
    ("node_analyze", &["window"], 0),
    ("service_analyze", &["window"], 0),
    ("run_kubectl_command", &["command"], 1),
    ("get_relevant_metric", &["query"], 1),
];

fn arb_wellformed_call() -> impl Strategy<Value = ProgramCall> {
    (
        0..WELLFORMED.len(),
        prop::collection::vec((any::<bool>(), arb_value()), 3),
    )
        .prop_map(|(i, picks)| {
            let (tool, params, required) = WELLFORMED[i];
            let args = params
                .iter()
                .zip(picks)
                .enumerate()
                .filter(|(n, (_, (keep, _)))| *n < required || *keep)
                .map(|(_, (name, (_, v)))| (name.to_string(), v))
                .collect();
            ProgramCall {
                tool: tool.to_string(),
                args,
            }
        })
}

/// Programs built from callable tools with known argument names; most pass
/// validation, the rest fail on unbound variables.
pub fn arb_wellformed_program() -> impl Strategy<Value = SopProgram> {
    let simple = prop_oneof![
        arb_wellformed_call().prop_map(|call| Statement::Call { call }),
        arb_var().prop_map(|var| Statement::FindingVar { var }),
    ];
    let stmt = prop_oneof![
        4 => (arb_var(), arb_wellformed_call()).prop_map(|(name, call)| Statement::Let { name, call }),
        1 => simple.clone(),
        2 => (arb_predicate(), simple).prop_map(|(pred, body)| Statement::If {
            pred,
            body: Box::new(body)
        }),
    ];
    // bind every variable up front half of the time
    (any::<bool>(), prop::collection::vec(stmt, 0..10)).prop_map(|(prebind, mut statements)| {
        if prebind {
            let binds = VARS.iter().map(|v| Statement::Let {
                name: v.to_string(),
                call: ProgramCall {
                    tool: "collect_trace".to_string(),
                    args: BTreeMap::new(),
                },
            });
            statements.splice(0..0, binds);
        }
        SopProgram { statements }
    })
}

/// Programs mixing valid and invalid statements.
pub fn arb_program() -> impl Strategy<Value = SopProgram> {
    prop::collection::vec(arb_statement(), 0..10).prop_map(|statements| SopProgram { statements })
}

/// Statements that always succeed on the fixture topology.
pub fn safe_statement(i: usize) -> Statement {
    let tools = [
        "collect_trace",
        "pod_analyze",
        "node_analyze",
        "service_analyze",
    ];
    match i % 3 {
        0 => Statement::Let {
            name: VARS[i % VARS.len()].to_string(),
            call: ProgramCall {
                tool: tools[i % tools.len()].to_string(),
                args: BTreeMap::new(),
            },
        },
        1 => Statement::FindingText {
            text: format!("note {i}"),
        },
        _ => Statement::Call {
            call: ProgramCall {
                tool: "get_relevant_metric".to_string(),
                args: BTreeMap::from([("query".to_string(), ValueRef::Lit("cpu".to_string()))]),
            },
        },
    }
}

/// A call the validator accepts but the sandbox rejects: no such pod.
pub fn failing_statement() -> Statement {
    Statement::Call {
        call: ProgramCall {
            tool: "kubectl_logs".to_string(),
            args: BTreeMap::from([("pod".to_string(), ValueRef::Lit("ghost-0".to_string()))]),
        },
    }
}

// ---- random scripts ----

const ROLE_RESPONSES: &[(&str, &[&str])] = &[
    (MAIN_THOUGHT_TAG, &["check the alert", ""]),
    (
        ACTION_TAG,
        &[
            "1. collect_trace() | errors\n2. pod_analyze() | status",
            "1. Speak(causes=\"cart-0:CpuStress; shipping-0:MemoryStress; payment-0:PodFailure; node-1:NetworkLoss; redis-cart-0:NetworkCorrupt\") | done",
            "1. match_sop(query=\"cpu usage above threshold\")",
            "1. run_sop()\n2. generate_sop_code()\n3. match_observation()",
            "nothing useful",
            "1. whether_is_abnormal_metric(metric=\"cpu_usage\") | x\n2. kubectl_logs(pod=\"ghost-0\") | y\n3. frobnicate() | z",
        ],
    ),
    (MAIN_SELECT_TAG, &["1", "2", "3", "9", "none", "0"]),
    (
        MAIN_ACT_TAG,
        &[
            "collect_trace()",
            "Speak(causes=\"cart-0:CpuStress; a:B; c:D; e:F\")",
            "match_sop(query=\"error rate\")",
            "run_sop()",
            "???",
        ],
    ),
    (OB_TAG, &["type: CpuStress confidence: 0.9", "no idea"]),
    (
        JUDGE_TAG,
        &[
            "NOT FOUND: need more evidence",
            "FOUND: pod=cart-0 type=CpuStress; summary: hot pod",
            "FOUND: pod=a type=CpuStress pod=b type=MemoryStress pod=c type=PodFailure pod=d type=NetworkLoss; summary: many",
            "FOUND: summary: nothing named",
        ],
    ),
    (
        CODE_ROLE_TAG,
        &[
            "```\nlet t = collect_trace()\nif flagged(t): finding(t)\n```",
            "```\nlet x = frobnicate()\n```",
            "```\nkubectl_logs(pod=\"ghost-0\")\n```",
            "no code",
        ],
    ),
    (SOP_ROLE_TAG, &["SOP: generic check\n1. Check traces for errors.\n2. Check pod status.", "???"]),
];

fn role_entries(fallback: bool) -> Vec<impl Strategy<Value = Vec<ScriptEntry>>> {
    ROLE_RESPONSES
        .iter()
        .map(move |(tag, responses)| {
            let tag = tag.to_string();
            let pick = prop::sample::select(responses.to_vec());
            let entries = prop::collection::vec((pick.clone(), any::<bool>()), 0..4);
            (entries, pick).prop_map(move |(v, last)| {
                let mut out: Vec<ScriptEntry> = v
                    .into_iter()
                    .map(|(r, once)| ScriptEntry {
                        match_key: tag.clone(),
                        response: r.to_string(),
                        consume_once: once || fallback,
                    })
                    .collect();
                if fallback {
                    out.push(ScriptEntry::new(tag.clone(), last));
                }
                out
            })
        })
        .collect()
}

/// Scripts with a few randomly chosen responses per role. Half of them leave
/// roles without an answer so episodes can abort; the rest end every role
/// with a persistent fallback, so episodes run until Speak or the budget.
pub fn arb_script() -> impl Strategy<Value = Script> {
    prop_oneof![role_entries(false), role_entries(true)]
        .prop_map(|groups| Script::new(groups.into_iter().flatten().collect()))
}

pub fn arb_ablations() -> impl Strategy<Value = Ablations> {
    // mostly on, so the full machinery is exercised
    prop::collection::vec(prop::bool::weighted(0.7), 6).prop_map(|bits| {
        let mut a = Ablations::default();
        for (name, on) in Ablations::NAMES.iter().zip(bits) {
            a.set(name, on).unwrap();
        }
        a
    })
}

// ---- ablation signatures ----

fn steps(run: &BenchmarkRun) -> Vec<&StepRecord> {
    run.transcripts
        .iter()
        .filter_map(|(_, t)| t.as_ref())
        .flat_map(Transcript::steps)
        .collect()
}

fn has_role(run: &BenchmarkRun, role: &str) -> bool {
    steps(run)
        .iter()
        .any(|s| s.exchanges.iter().any(|e| e.role == role))
}

fn any_candidate(run: &BenchmarkRun, f: impl Fn(&ActionCandidate) -> bool) -> bool {
    steps(run)
        .iter()
        .any(|s| s.action_set.candidates.iter().any(&f))
}

fn flow_rule(c: &ActionCandidate) -> bool {
    matches!(c.rule, Some(r) if r != RuleId::R8)
}

fn flow_prompt_shown(run: &BenchmarkRun) -> bool {
    steps(run).iter().any(|s| {
        s.exchanges.iter().any(|e| {
            e.role == "main.thought" && e.messages.iter().any(|m| m.content.contains(FLOW_PROMPT))
        })
    })
}

fn sop_hits(run: &BenchmarkRun) -> bool {
    steps(run).iter().any(
        |s| matches!(&s.outcome, Some(ActionOutcome::SopMatch { hits, .. }) if !hits.is_empty()),
    )
}

fn expect(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

/// The transcript difference turning `flag` off must produce: present in the
/// default run, absent (or replaced) in the ablated one.
pub fn ablation_difference(
    flag: &str,
    default: &BenchmarkRun,
    ablated: &BenchmarkRun,
) -> Result<(), String> {
    match flag {
        "sop_knowledge" => {
            expect(sop_hits(default), "default run has match_sop hits")?;
            expect(
                !sop_hits(ablated),
                "no match_sop hits without SOP knowledge",
            )?;
            expect(
                any_candidate(default, |c| c.provenance == Provenance::FlowRule),
                "default has flow-rule candidates",
            )?;
            expect(
                !any_candidate(ablated, |c| c.provenance == Provenance::FlowRule),
                "no flow-rule candidates without SOP knowledge",
            )
        }
        "sop_flow" => {
            expect(
                any_candidate(default, flow_rule),
                "default has R1-R7 candidates",
            )?;
            expect(
                !any_candidate(ablated, flow_rule),
                "no R1-R7 candidates without SOP flow",
            )?;
            expect(
                flow_prompt_shown(default),
                "default prompt carries the flow text",
            )?;
            expect(!flow_prompt_shown(ablated), "no flow text without SOP flow")
        }
        "action_set" => {
            let indexed = |r: &BenchmarkRun| {
                steps(r)
                    .iter()
                    .any(|s| matches!(&s.selection, Some(sel) if sel.mode == SelectionMode::Index))
            };
            expect(indexed(default), "default selects from an action set")?;
            expect(
                any_candidate(default, |c| c.provenance == Provenance::ActionAgent),
                "default sets hold proposals",
            )?;
            expect(
                !indexed(ablated),
                "no indexed selection without the action set",
            )?;
            expect(
                steps(ablated).iter().all(|s| {
                    s.action_set
                        .candidates
                        .iter()
                        .all(|c| c.provenance == Provenance::MainAgent)
                }),
                "only direct main-agent actions without the action set",
            )?;
            expect(
                !has_role(ablated, "action.propose"),
                "no proposals without the action set",
            )
        }
        "action_agent" => {
            expect(
                has_role(default, "action.propose"),
                "default consults the action agent",
            )?;
            expect(
                !has_role(ablated, "action.propose"),
                "no action agent exchange",
            )?;
            expect(
                !any_candidate(ablated, |c| c.provenance == Provenance::ActionAgent),
                "no proposed candidates without the action agent",
            )
        }
        "ob_agent" => {
            let hyps = |r: &BenchmarkRun| steps(r).iter().any(|s| s.hypotheses.is_some());
            expect(
                has_role(default, "ob.classify") && hyps(default),
                "default records hypotheses",
            )?;
            expect(
                !has_role(ablated, "ob.classify") && !hyps(ablated),
                "no hypotheses without the ob agent",
            )
        }
        "judge_agent" => {
            let judged = |r: &BenchmarkRun| steps(r).iter().any(|s| s.judge.is_some());
            expect(
                has_role(default, "judge.verdict") && judged(default),
                "default runs the judge",
            )?;
            expect(
                any_candidate(default, |c| c.provenance == Provenance::JudgeRule),
                "default has judge-rule Speak candidates",
            )?;
            expect(
                !has_role(ablated, "judge.verdict") && !judged(ablated),
                "no judge without the judge agent",
            )?;
            expect(
                !any_candidate(ablated, |c| c.provenance == Provenance::JudgeRule),
                "no judge-rule candidates without the judge agent",
            )
        }
        other => Err(format!("unknown flag {other}")),
    }
}

// ---- sandbox probes ----

pub const PROBES: [&str; 8] = [
    "whether_is_abnormal_metric()",
    "collect_trace()",
    "kubectl_logs()",
    "pod_analyze()",
    "node_analyze()",
    "service_analyze()",
    "deployment_analyze()",
    "statefulset_analyze()",
];

/// Components each probe flags over the default window.
pub fn probe(scenario: &EpisodeScenario) -> Vec<(&'static str, BTreeSet<String>)> {
    let sb = Sandbox::new(scenario.clone()).unwrap();
    let detector = DetectorConfig::default();
    let registry = Registry::standard();
    let env = ReadEnv {
        source: &sb,
        detector: &detector,
        registry: &registry,
    };
    PROBES
        .iter()
        .map(|p| {
            let r = run_readonly(&parse_call(p).unwrap(), &env);
            assert!(r.success, "{p} failed: {:?}", r.error);
            (*p, r.flagged.into_iter().collect())
        })
        .collect()
}

// ---- scripted episodes ----

pub fn golden_scenarios() -> &'static [EpisodeScenario] {
    static S: OnceLock<Vec<EpisodeScenario>> = OnceLock::new();
    S.get_or_init(|| {
        let mut paths: Vec<_> = std::fs::read_dir(golden_dir().join("scenarios"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| EpisodeScenario::load(p).unwrap())
            .collect()
    })
}

pub fn kb() -> &'static KnowledgeBase {
    static KB: OnceLock<KnowledgeBase> = OnceLock::new();
    KB.get_or_init(|| builtin(64))
}

pub fn run_scripted(
    scenario: &EpisodeScenario,
    script: Script,
    config: &AgentConfig,
) -> EpisodeReport {
    let registry = Registry::standard();
    let detector = DetectorConfig::default();
    let llm = ScriptedBackend::new(script);
    let env = EpisodeEnv {
        registry: &registry,
        detector: &detector,
        kb: kb(),
        llm: &llm,
        config,
    };
    run_episode(scenario, &env).expect("scenario is valid")
}

/// Investigates forever and never reports.
pub fn looping_script() -> Script {
    Script::new(vec![
        ScriptEntry::new("ROLE: main.thought", "keep looking"),
        ScriptEntry::new("ROLE: action.propose", "1. collect_trace() | look again"),
        ScriptEntry::new("ROLE: main.select", "1"),
        ScriptEntry::new("ROLE: code.generate", "```\nlet t = collect_trace()\n```"),
        ScriptEntry::new("ROLE: ob.classify", "type: CpuStress confidence: 0.5"),
        ScriptEntry::new("ROLE: judge.verdict", "NOT FOUND: keep going"),
    ])
}

/// Step and cause caps every finished episode must respect.
pub fn check_caps(report: &EpisodeReport, max_steps: usize) -> Result<(), TestCaseError> {
    let state = &report.state;
    prop_assert!(state.step_count <= max_steps);
    prop_assert!(state.steps.len() <= max_steps);
    match &report.outcome {
        EpisodeOutcome::Completed => {
            prop_assert_eq!(state.path.last().map(String::as_str), Some("Speak"));
            let d = report.diagnosis().unwrap();
            prop_assert!(d.locations.len() <= MAX_ROOT_CAUSES);
            prop_assert!(d.types.len() <= MAX_ROOT_CAUSES);
        }
        EpisodeOutcome::BudgetExhausted => {
            prop_assert_eq!(state.step_count, max_steps);
            prop_assert!(report.diagnosis().is_none());
        }
        EpisodeOutcome::Aborted { .. } => prop_assert!(report.diagnosis().is_none()),
    }
    prop_assert!(replay_flow_compliance(&report.transcript)
        .unwrap()
        .is_empty());
    Ok(())
}
