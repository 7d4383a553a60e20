//! The MainAgent loop and the per-episode state it records.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::action_set::{
    apply_flow_rules, is_speak, ActionCandidate, ActionOutcome, ActionSet, CodeStatus,
    PreviousAction, RuleState, RunStatus,
};
use super::roles::{
    action_system_prompt, judge_system_prompt, main_system_prompt, ob_system_prompt,
    parse_candidates, parse_direct_action, parse_hypotheses, parse_selection, parse_verdict,
    Hypothesis, JudgeVerdict, ACTION_TAG, JUDGE_TAG, MAIN_ACT_TAG, MAIN_SELECT_TAG,
    MAIN_THOUGHT_TAG, OB_TAG,
};
use super::transcript::{EpisodeFooter, EpisodeHeader, Transcript, TranscriptRecord};
use super::{AgentConfig, AgentError, DiagnosisResult, EpisodeOutcome};
use crate::kb::{EmbeddingVector, KnowledgeBase};
use crate::llm::{retry_once, ChatMessage, LlmBackend, LlmError, WireRecord};
use crate::sandbox::{EpisodeScenario, Sandbox};
use crate::tools::{
    execute, first_anomaly, DetectorConfig, FlowEnv, Payload, ReadEnv, Registry, SopContext,
    ToolCall, ToolResult, GENERATE_SOP, GENERATE_SOP_CODE, MATCH_OBSERVATION, MATCH_SOP, RUN_SOP,
    SPEAK,
};

/// Shared, read-only inputs of an episode.
#[derive(Clone, Copy)]
pub struct EpisodeEnv<'a> {
    pub registry: &'a Registry,
    pub detector: &'a DetectorConfig,
    pub kb: &'a KnowledgeBase,
    pub llm: &'a dyn LlmBackend,
    pub config: &'a AgentConfig,
}

/// One backend completion as the transcript records it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wire: Vec<WireRecord>,
}

/// Wraps the episode backend and logs every completion, including the
/// ones tools make internally.
struct Recorder<'a> {
    inner: &'a dyn LlmBackend,
    log: Mutex<Vec<Exchange>>,
}

impl<'a> Recorder<'a> {
    fn new(inner: &'a dyn LlmBackend) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    fn drain(&self) -> Vec<Exchange> {
        std::mem::take(&mut *self.log.lock().expect("recorder lock"))
    }
}

fn role_of(messages: &[ChatMessage]) -> String {
    messages
        .last()
        .and_then(|m| m.content.lines().next())
        .and_then(|l| l.strip_prefix("ROLE: "))
        .unwrap_or("unknown")
        .trim()
        .to_string()
}

impl LlmBackend for Recorder<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let result = self.inner.complete(messages);
        let wire = self.inner.drain_wire_log();
        self.log.lock().expect("recorder lock").push(Exchange {
            role: role_of(messages),
            messages: messages.to_vec(),
            reply: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
            wire,
        });
        result
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        self.inner.embed(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// 1-based index into the action set.
    Index,
    /// A tool call written out by the MainAgent.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub mode: SelectionMode,
    pub reply: String,
    /// 1-based position of the chosen candidate.
    pub index: Option<usize>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRun {
    /// Tool whose result triggered the judge.
    pub trigger: String,
    pub verdict: JudgeVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 0-based.
    pub index: usize,
    pub thought: String,
    pub action_set: ActionSet,
    pub selection: Option<Selection>,
    pub chosen: Option<ActionCandidate>,
    pub executed: bool,
    pub observation: String,
    pub success: bool,
    pub outcome: Option<ActionOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<Hypothesis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeRun>,
    pub notes: Vec<String>,
    pub exchanges: Vec<Exchange>,
}

impl StepRecord {
    fn new(index: usize, max_size: usize) -> Self {
        Self {
            index,
            thought: String::new(),
            action_set: ActionSet::empty(max_size),
            selection: None,
            chosen: None,
            executed: false,
            observation: String::new(),
            success: false,
            outcome: None,
            hypotheses: None,
            judge: None,
            notes: Vec::new(),
            exchanges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub scenario_id: String,
    pub alert: String,
    pub steps: Vec<StepRecord>,
    pub sop: SopContext,
    pub ob_hypotheses: Vec<Hypothesis>,
    pub judge_verdict: JudgeVerdict,
    pub step_count: usize,
    pub terminated: bool,
    pub diagnosis: Option<DiagnosisResult>,
    pub outcome: Option<EpisodeOutcome>,
    /// Executed actions in order.
    pub path: Vec<String>,
    #[serde(skip)]
    previous: Option<PreviousAction>,
}

impl EpisodeState {
    fn new(scenario_id: &str, alert: String) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            alert,
            steps: Vec::new(),
            sop: SopContext::default(),
            ob_hypotheses: Vec::new(),
            judge_verdict: JudgeVerdict::default(),
            step_count: 0,
            terminated: false,
            diagnosis: None,
            outcome: None,
            path: Vec::new(),
            previous: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub outcome: EpisodeOutcome,
    pub state: EpisodeState,
    pub transcript: Transcript,
}

impl EpisodeReport {
    pub fn diagnosis(&self) -> Option<&DiagnosisResult> {
        self.state.diagnosis.as_ref()
    }
}

/// The incident ticket an episode starts from: the first anomalous metric
/// the detector finds in the default window.
pub fn render_alert(read: &ReadEnv<'_>) -> String {
    match first_anomaly(read) {
        Some(v) => {
            let dir = v
                .direction
                .map(|d| d.to_string())
                .unwrap_or_else(|| "abnormal".into());
            format!("Alert: {} {dir} on {}", v.metric, v.component)
        }
        None => format!(
            "Alert: users report degraded service; no metric anomaly in the last {} s",
            read.detector.default_window_s
        ),
    }
}

/// Runs one episode to completion, budget exhaustion or abort.
pub fn run_episode(
    scenario: &EpisodeScenario,
    env: &EpisodeEnv<'_>,
) -> Result<EpisodeReport, AgentError> {
    env.config.validate()?;
    let sandbox = Sandbox::new(scenario.clone())?;
    let mut kb = env.kb.detached();
    if !env.config.ablations.sop_knowledge {
        kb.clear_sops();
    }
    let recorder = Recorder::new(env.llm);
    let read = ReadEnv {
        source: &sandbox,
        detector: env.detector,
        registry: env.registry,
    };
    let alert = render_alert(&read);
    let header = EpisodeHeader {
        scenario: scenario.id.clone(),
        alert: alert.clone(),
        config: env.config.clone(),
        sops: kb.sops().len(),
        incidents: kb.incidents().len(),
    };
    let mut ep = Episode {
        config: env.config,
        registry: env.registry,
        read,
        kb,
        llm: &recorder,
        state: EpisodeState::new(&scenario.id, alert),
    };
    while !ep.state.terminated && ep.state.step_count < env.config.max_steps {
        ep.step();
    }
    let outcome = ep
        .state
        .outcome
        .clone()
        .unwrap_or(EpisodeOutcome::BudgetExhausted);
    ep.state.outcome = Some(outcome.clone());
    ep.state.terminated = true;
    let state = ep.state;
    let mut records = vec![TranscriptRecord::Episode(header)];
    records.extend(state.steps.iter().cloned().map(TranscriptRecord::Step));
    records.push(TranscriptRecord::End(EpisodeFooter {
        outcome: outcome.clone(),
        steps: state.step_count,
        path: state.path.clone(),
        diagnosis: state.diagnosis.clone(),
    }));
    Ok(EpisodeReport {
        outcome,
        state,
        transcript: Transcript { records },
    })
}

struct Episode<'a> {
    config: &'a AgentConfig,
    registry: &'a Registry,
    read: ReadEnv<'a>,
    kb: KnowledgeBase,
    llm: &'a Recorder<'a>,
    state: EpisodeState,
}

/// Backend call retried once before giving up.
fn ask(
    llm: &dyn LlmBackend,
    system: String,
    user: String,
    notes: &mut Vec<String>,
) -> Result<String, LlmError> {
    let messages = [ChatMessage::system(system), ChatMessage::user(user)];
    retry_once(
        || llm.complete(&messages),
        |e| notes.push(format!("backend error, retrying once: {e}")),
    )
}

fn dedup_push(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

impl Episode<'_> {
    fn step(&mut self) {
        let index = self.state.step_count;
        let mut rec = StepRecord::new(index, self.config.action_set_size);
        let previous = self.state.previous.take();
        let result = self.step_inner(&mut rec, previous.as_ref());
        rec.exchanges = self.llm.drain();
        self.state.step_count += 1;
        self.state.steps.push(rec);
        if let Err(e) = result {
            self.state.outcome = Some(EpisodeOutcome::Aborted {
                reason: format!("step {}: {e}", index + 1),
            });
            self.state.terminated = true;
        }
    }

    fn history(&self) -> String {
        if self.state.steps.is_empty() {
            return "(none)".into();
        }
        self.state
            .steps
            .iter()
            .map(|s| {
                let head = s.observation.lines().next().unwrap_or("");
                match (&s.chosen, s.executed) {
                    (Some(c), true) => format!("{}. {} -> {head}", s.index + 1, c.call),
                    _ => format!("{}. (no action) {head}", s.index + 1),
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn context(&self) -> String {
        let mut s = format!(
            "{}\nStep {} of {}.\nHistory:\n{}\n",
            self.state.alert,
            self.state.step_count + 1,
            self.config.max_steps,
            self.history()
        );
        if let Some(last) = self.state.steps.last() {
            s.push_str(&format!("Last observation:\n{}\n", last.observation));
        }
        if !self.state.ob_hypotheses.is_empty() {
            let h: Vec<String> = self
                .state
                .ob_hypotheses
                .iter()
                .map(|h| match h.confidence.as_str() {
                    "" => h.fault_type.clone(),
                    c => format!("{} ({c})", h.fault_type),
                })
                .collect();
            s.push_str(&format!("Fault type hypotheses: {}\n", h.join(", ")));
        }
        if self.config.ablations.judge_agent {
            if self.state.judge_verdict.found {
                s.push_str(&format!(
                    "Judge: root cause confirmed: {}\n",
                    self.state.judge_verdict.summary
                ));
            } else {
                s.push_str("Judge: root cause not confirmed yet\n");
            }
        }
        s
    }

    fn main_system(&self) -> String {
        main_system_prompt(self.registry, self.config.ablations.flow_prompt())
    }

    fn step_inner(
        &mut self,
        rec: &mut StepRecord,
        previous: Option<&PreviousAction>,
    ) -> Result<(), LlmError> {
        let ablations = self.config.ablations;
        let context = self.context();
        rec.thought = ask(
            self.llm,
            self.main_system(),
            format!("{MAIN_THOUGHT_TAG}\n{context}Think about what to do next."),
            &mut rec.notes,
        )?;

        let mut direct = !ablations.action_set;
        if ablations.action_set {
            let proposals = if ablations.action_agent {
                let reply = ask(
                    self.llm,
                    action_system_prompt(
                        self.registry,
                        ablations.flow_prompt(),
                        self.config.action_set_size,
                    ),
                    format!(
                        "{ACTION_TAG}\n{context}Thought: {}\nPropose up to {} actions.",
                        rec.thought, self.config.action_set_size
                    ),
                    &mut rec.notes,
                )?;
                let (c, notes) =
                    parse_candidates(&reply, self.registry, self.config.action_set_size);
                rec.notes.extend(notes);
                c
            } else {
                Vec::new()
            };
            let rule_state = RuleState {
                step_index: rec.index,
                alert: &self.state.alert,
                previous,
                verdict: &self.state.judge_verdict,
                switches: ablations.rule_switches(),
            };
            let (set, notes) =
                apply_flow_rules(&rule_state, proposals, self.config.action_set_size);
            rec.notes.extend(notes);
            rec.action_set = set;
            if rec.action_set.is_empty() {
                rec.notes
                    .push("empty action set; MainAgent chooses directly".into());
                direct = true;
            }
        }

        let chosen = if direct {
            let reply = ask(
                self.llm,
                self.main_system(),
                format!(
                    "{MAIN_ACT_TAG}\n{context}Thought: {}\nAnswer with exactly one tool call.",
                    rec.thought
                ),
                &mut rec.notes,
            )?;
            match parse_direct_action(&reply, self.registry) {
                Ok(call) => {
                    rec.action_set = ActionSet {
                        candidates: vec![ActionCandidate::direct(call)],
                        max_size: self.config.action_set_size,
                    };
                    rec.selection = Some(Selection {
                        mode: SelectionMode::Direct,
                        reply,
                        index: Some(1),
                        fallback: false,
                    });
                    rec.action_set.candidates[0].clone()
                }
                Err(e) => {
                    rec.selection = Some(Selection {
                        mode: SelectionMode::Direct,
                        reply,
                        index: None,
                        fallback: false,
                    });
                    rec.observation = format!("error: no usable action in reply: {e}");
                    return Ok(());
                }
            }
        } else {
            let reply = ask(
                self.llm,
                self.main_system(),
                format!(
                    "{MAIN_SELECT_TAG}\n{}\nThought: {}\nAction set:\n{}\nAnswer with the number of one action.",
                    self.state.alert,
                    rec.thought,
                    rec.action_set.render()
                ),
                &mut rec.notes,
            )?;
            let picked = parse_selection(&reply).filter(|n| (1..=rec.action_set.len()).contains(n));
            let (index, fallback) = match picked {
                Some(n) => (n - 1, false),
                None => {
                    let i = rec.action_set.fallback_index().expect("set is non-empty");
                    rec.notes.push(format!(
                        "fallback: selection {reply:?} is not a valid index, took {}",
                        i + 1
                    ));
                    (i, true)
                }
            };
            rec.selection = Some(Selection {
                mode: SelectionMode::Index,
                reply,
                index: Some(index + 1),
                fallback,
            });
            rec.action_set.candidates[index].clone()
        };
        rec.chosen = Some(chosen.clone());
        let call = chosen.call;

        if is_speak(&call) && ablations.judge_agent && !self.state.judge_verdict.found {
            rec.observation =
                "Speak rejected: the JudgeAgent has not confirmed a root cause".into();
            return Ok(());
        }

        let result = retry_once(
            || self.execute(&call),
            |e| {
                rec.notes.push(format!(
                    "backend error in {}, retrying once: {e}",
                    call.tool
                ))
            },
        )?;
        let outcome = self.outcome_of(&call, &result);
        rec.executed = true;
        rec.success = result.success;
        rec.observation = result.observation.clone();
        rec.outcome = Some(outcome.clone());
        self.state.path.push(call.tool.clone());
        self.state.previous = Some(PreviousAction {
            call: call.clone(),
            outcome,
        });

        if result.is_terminal() {
            if let Payload::Diagnosis { report } = &result.payload {
                let mut locations = Vec::new();
                let mut types = Vec::new();
                for c in &report.causes {
                    dedup_push(&mut locations, &c.location);
                    dedup_push(&mut types, &c.fault_type);
                }
                self.state.diagnosis = Some(DiagnosisResult {
                    locations,
                    types,
                    explanation: report.explanation.clone(),
                    path: self.state.path.clone(),
                    path_length: self.state.path.len(),
                });
            }
            self.state.terminated = true;
            self.state.outcome = Some(EpisodeOutcome::Completed);
            return Ok(());
        }

        if call.tool == MATCH_OBSERVATION && result.success {
            if ablations.ob_agent {
                let h = self.ob_classify(&call, &result, rec)?;
                self.state.ob_hypotheses = h.clone();
                rec.hypotheses = Some(h);
            }
            if ablations.judge_agent {
                rec.judge = Some(self.judge(MATCH_OBSERVATION, rec)?);
            }
        } else if call.tool == RUN_SOP
            && result.success
            && self.config.judge_after_run_sop
            && ablations.judge_agent
            && result.value.unwrap_or(0.0) > 0.0
        {
            rec.judge = Some(self.judge(RUN_SOP, rec)?);
        }
        Ok(())
    }

    fn execute(&mut self, call: &ToolCall) -> Result<ToolResult, LlmError> {
        let mut env = FlowEnv {
            read: self.read,
            kb: &mut self.kb,
            llm: self.llm,
            top_k: self.config.top_k,
            threshold: self.config.threshold,
            ctx: &mut self.state.sop,
        };
        execute(call, &mut env)
    }

    fn outcome_of(&self, call: &ToolCall, r: &ToolResult) -> ActionOutcome {
        let ctx = &self.state.sop;
        match (call.tool.as_str(), &r.payload) {
            (MATCH_SOP, Payload::SopHits { hits }) if r.success => ActionOutcome::SopMatch {
                query: call.get("query").unwrap_or("").to_string(),
                hits: hits.iter().map(|(id, _)| id.clone()).collect(),
            },
            (GENERATE_SOP, Payload::Sop { sop }) if r.success => ActionOutcome::SopGenerated {
                sop: Some(sop.id.clone()),
            },
            (GENERATE_SOP, _) => ActionOutcome::SopGenerated { sop: None },
            (GENERATE_SOP_CODE, _) if r.success => ActionOutcome::ProgramGenerated {
                sop: ctx.program_sop.clone(),
                status: CodeStatus::Valid,
            },
            (GENERATE_SOP_CODE, Payload::ProgramErrors { .. }) => ActionOutcome::ProgramGenerated {
                sop: ctx.current_sop.clone(),
                status: CodeStatus::Rejected,
            },
            (GENERATE_SOP_CODE, _) => ActionOutcome::ProgramGenerated {
                sop: None,
                status: CodeStatus::Failed,
            },
            (RUN_SOP, Payload::Run { run }) => ActionOutcome::ProgramRun {
                sop: ctx.program_sop.clone(),
                status: if run.success {
                    RunStatus::Succeeded
                } else {
                    RunStatus::RuntimeError
                },
                findings: run.findings.len(),
            },
            (RUN_SOP, _) => ActionOutcome::ProgramRun {
                sop: None,
                status: RunStatus::Failed,
                findings: 0,
            },
            (MATCH_OBSERVATION, Payload::IncidentHits { hits }) if r.success => {
                ActionOutcome::ObservationMatch {
                    incidents: hits.iter().map(|(id, _, _)| id.clone()).collect(),
                }
            }
            (SPEAK, _) => ActionOutcome::Speak {
                accepted: r.is_terminal(),
            },
            _ => ActionOutcome::Other { success: r.success },
        }
    }

    fn ob_classify(
        &mut self,
        call: &ToolCall,
        r: &ToolResult,
        rec: &mut StepRecord,
    ) -> Result<Vec<Hypothesis>, LlmError> {
        let observation = match call.get("observation") {
            Some(o) => o.to_string(),
            None => match &self.state.sop.last_run {
                Some(run) if !run.findings.is_empty() => run.findings.join("\n"),
                _ => "no findings".to_string(),
            },
        };
        let reply = ask(
            self.llm,
            ob_system_prompt(),
            format!(
                "{OB_TAG}\nObservation:\n{observation}\nSimilar historical incidents:\n{}\nList the likely fault types.",
                r.observation
            ),
            &mut rec.notes,
        )?;
        let h = parse_hypotheses(&reply);
        if h.is_empty() {
            rec.notes
                .push(format!("ObAgent reply has no fault types: {reply:?}"));
        }
        Ok(h)
    }

    fn judge(&mut self, trigger: &str, rec: &mut StepRecord) -> Result<JudgeRun, LlmError> {
        let mut evidence = self.context();
        evidence.push_str(&format!(
            "Latest: {} -> {}\n",
            rec.chosen
                .as_ref()
                .map(|c| c.call.to_string())
                .unwrap_or_default(),
            rec.observation
        ));
        if let Some(h) = &rec.hypotheses {
            let names: Vec<&str> = h.iter().map(|h| h.fault_type.as_str()).collect();
            evidence.push_str(&format!("ObAgent hypotheses: {}\n", names.join(", ")));
        }
        let reply = ask(
            self.llm,
            judge_system_prompt(),
            format!(
                "{JUDGE_TAG}\nTrigger: {trigger}\n{evidence}Has the root cause been identified?"
            ),
            &mut rec.notes,
        )?;
        let verdict = parse_verdict(&reply).unwrap_or_else(|e| {
            rec.notes
                .push(format!("unparseable verdict treated as not found: {e}"));
            JudgeVerdict::default()
        });
        self.state.judge_verdict = verdict.clone();
        Ok(JudgeRun {
            trigger: trigger.to_string(),
            verdict,
        })
    }
}
