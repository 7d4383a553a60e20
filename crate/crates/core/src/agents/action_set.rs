//! Action sets and the deterministic flow rules that augment them.
//!
//! Rule-added candidates always sit ahead of model proposals, ordered by
//! rule priority, and are never evicted by truncation. When rules alone
//! exceed the size bound the lowest-priority rules go first.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::roles::JudgeVerdict;
use crate::tools::{
    ToolCall, GENERATE_SOP, GENERATE_SOP_CODE, MATCH_OBSERVATION, MATCH_SOP, RUN_SOP, SPEAK,
};

pub const DEFAULT_ACTION_SET_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ActionAgent,
    FlowRule,
    JudgeRule,
    /// Chosen directly by the MainAgent without a candidate set.
    MainAgent,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::ActionAgent => "action_agent",
            Provenance::FlowRule => "flow_rule",
            Provenance::JudgeRule => "judge_rule",
            Provenance::MainAgent => "main_agent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
}

impl RuleId {
    /// Lower is preferred when the selection falls back.
    pub fn priority(self) -> u8 {
        match self {
            RuleId::R7 => 0,
            RuleId::R5 => 1,
            RuleId::R4 => 2,
            RuleId::R3 | RuleId::R1 => 3,
            RuleId::R6 => 4,
            RuleId::R2 => 5,
            RuleId::R8 => 6,
        }
    }

    pub fn provenance(self) -> Provenance {
        if self == RuleId::R7 {
            Provenance::JudgeRule
        } else {
            Provenance::FlowRule
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub call: ToolCall,
    pub rationale: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleId>,
}

impl ActionCandidate {
    pub fn proposed(call: ToolCall, rationale: impl Into<String>) -> Self {
        Self {
            call,
            rationale: rationale.into(),
            provenance: Provenance::ActionAgent,
            rule: None,
        }
    }

    pub fn from_rule(rule: RuleId, call: ToolCall, rationale: impl Into<String>) -> Self {
        Self {
            call,
            rationale: rationale.into(),
            provenance: rule.provenance(),
            rule: Some(rule),
        }
    }

    pub fn direct(call: ToolCall) -> Self {
        Self {
            call,
            rationale: String::new(),
            provenance: Provenance::MainAgent,
            rule: None,
        }
    }

    pub fn is_rule(&self) -> bool {
        self.rule.is_some()
    }
}

impl fmt::Display for ActionCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.call)?;
        if !self.rationale.is_empty() {
            write!(f, " | {}", self.rationale)?;
        }
        match self.rule {
            Some(r) => write!(f, " [{} {r:?}]", self.provenance),
            None => write!(f, " [{}]", self.provenance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub candidates: Vec<ActionCandidate>,
    pub max_size: usize,
}

impl ActionSet {
    pub fn empty(max_size: usize) -> Self {
        Self {
            candidates: Vec::new(),
            max_size,
        }
    }

    /// Merges rule and agent candidates. Returns the set and a note for
    /// every candidate that was deduplicated or evicted.
    pub fn assemble(
        mut rules: Vec<ActionCandidate>,
        agent: Vec<ActionCandidate>,
        max_size: usize,
    ) -> (Self, Vec<String>) {
        let mut notes = Vec::new();
        rules.sort_by_key(|c| c.rule.map(RuleId::priority).unwrap_or(u8::MAX));
        let mut candidates: Vec<ActionCandidate> = Vec::new();
        for c in rules {
            if candidates.iter().any(|k| k.call == c.call) {
                continue;
            }
            if candidates.len() == max_size {
                notes.push(format!("rule candidate {} dropped: set is full", c.call));
                continue;
            }
            candidates.push(c);
        }
        for c in agent {
            if candidates.iter().any(|k| k.call == c.call) {
                notes.push(format!(
                    "agent candidate {} duplicates a set member",
                    c.call
                ));
                continue;
            }
            if candidates.len() == max_size {
                notes.push(format!("agent candidate {} evicted: set is full", c.call));
                continue;
            }
            candidates.push(c);
        }
        (
            Self {
                candidates,
                max_size,
            },
            notes,
        )
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, call: &ToolCall) -> bool {
        self.candidates.iter().any(|c| &c.call == call)
    }

    /// 0-based index used when the selection reply is unusable: the
    /// highest-priority rule candidate, else the first candidate.
    pub fn fallback_index(&self) -> Option<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.rule.map(|r| (r.priority(), i)))
            .min()
            .map(|(_, i)| i)
            .or(if self.is_empty() { None } else { Some(0) })
    }

    /// Numbered listing shown to the MainAgent.
    pub fn render(&self) -> String {
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// How an executed action turned out, as far as the flow rules care.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionOutcome {
    SopMatch {
        query: String,
        hits: Vec<String>,
    },
    SopGenerated {
        sop: Option<String>,
    },
    ProgramGenerated {
        sop: Option<String>,
        status: CodeStatus,
    },
    ProgramRun {
        sop: Option<String>,
        status: RunStatus,
        findings: usize,
    },
    ObservationMatch {
        incidents: Vec<String>,
    },
    Speak {
        accepted: bool,
    },
    Other {
        success: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeStatus {
    Valid,
    /// Unparseable or failed validation.
    Rejected,
    /// Could not be attempted (no SOP, unknown SOP).
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    RuntimeError,
    /// Could not start (no program).
    Failed,
}

/// The executed action of the preceding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviousAction {
    pub call: ToolCall,
    pub outcome: ActionOutcome,
}

/// Which rule families are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleSwitches {
    /// R1 to R7.
    pub flow: bool,
    /// R8.
    pub entry: bool,
}

/// Everything the flow rules look at.
#[derive(Debug, Clone, Copy)]
pub struct RuleState<'a> {
    pub step_index: usize,
    pub alert: &'a str,
    pub previous: Option<&'a PreviousAction>,
    pub verdict: &'a JudgeVerdict,
    pub switches: RuleSwitches,
}

fn code_for(sop: Option<&String>) -> ToolCall {
    match sop {
        Some(id) => ToolCall::new(GENERATE_SOP_CODE).arg("sop", id.as_str()),
        None => ToolCall::new(GENERATE_SOP_CODE),
    }
}

/// Candidates mandated by R1 to R8 for `state`, in rule order.
pub fn rule_candidates(state: &RuleState<'_>) -> Vec<ActionCandidate> {
    let mut out = Vec::new();
    if state.switches.flow {
        if let Some(prev) = state.previous {
            match (&prev.outcome, prev.call.tool.as_str()) {
                (ActionOutcome::SopMatch { hits, .. }, MATCH_SOP) if !hits.is_empty() => {
                    out.push(ActionCandidate::from_rule(
                        RuleId::R1,
                        code_for(hits.first()),
                        "codify the best matched SOP",
                    ));
                }
                (ActionOutcome::SopMatch { query, .. }, MATCH_SOP) => {
                    out.push(ActionCandidate::from_rule(
                        RuleId::R2,
                        ToolCall::new(GENERATE_SOP).arg("fault_info", query.as_str()),
                        "no SOP matched; write one",
                    ));
                }
                (ActionOutcome::SopGenerated { sop: Some(id) }, GENERATE_SOP) => {
                    out.push(ActionCandidate::from_rule(
                        RuleId::R3,
                        code_for(Some(id)),
                        "codify the generated SOP",
                    ));
                }
                (
                    ActionOutcome::ProgramGenerated {
                        status: CodeStatus::Valid,
                        ..
                    },
                    GENERATE_SOP_CODE,
                ) => {
                    out.push(ActionCandidate::from_rule(
                        RuleId::R4,
                        ToolCall::new(RUN_SOP),
                        "run the program",
                    ));
                }
                (
                    ActionOutcome::ProgramGenerated {
                        sop,
                        status: CodeStatus::Rejected,
                    },
                    GENERATE_SOP_CODE,
                )
                | (
                    ActionOutcome::ProgramRun {
                        sop,
                        status: RunStatus::RuntimeError,
                        ..
                    },
                    RUN_SOP,
                ) => {
                    out.push(ActionCandidate::from_rule(
                        RuleId::R5,
                        code_for(sop.as_ref()),
                        "regenerate the program",
                    ));
                }
                (
                    ActionOutcome::ProgramRun {
                        status: RunStatus::Succeeded,
                        ..
                    },
                    RUN_SOP,
                ) => {
                    out.push(ActionCandidate::from_rule(
                        RuleId::R6,
                        ToolCall::new(MATCH_OBSERVATION),
                        "compare findings with past incidents",
                    ));
                }
                _ => {}
            }
        }
        if state.verdict.found {
            out.push(ActionCandidate::from_rule(
                RuleId::R7,
                state.verdict.speak_call(),
                "the judge confirmed a root cause",
            ));
        }
    }
    if state.switches.entry && state.step_index == 0 {
        out.push(ActionCandidate::from_rule(
            RuleId::R8,
            ToolCall::new(MATCH_SOP).arg("query", state.alert),
            "look up SOPs for the alert",
        ));
    }
    out
}

/// Rule augmentation of validated agent candidates.
pub fn apply_flow_rules(
    state: &RuleState<'_>,
    candidates: Vec<ActionCandidate>,
    max_size: usize,
) -> (ActionSet, Vec<String>) {
    ActionSet::assemble(rule_candidates(state), candidates, max_size)
}

/// Checks one recorded step: every mandated candidate present, the chosen
/// action a member, and the size bound respected.
pub fn check_step(
    state: &RuleState<'_>,
    set: &ActionSet,
    chosen: Option<&ToolCall>,
    max_size: usize,
) -> Vec<String> {
    let mut problems = Vec::new();
    if set.len() > max_size {
        problems.push(format!(
            "action set has {} candidates, bound is {max_size}",
            set.len()
        ));
    }
    let mut mandated = rule_candidates(state);
    mandated.sort_by_key(|c| c.rule.map(RuleId::priority));
    for (i, m) in mandated.iter().enumerate() {
        // only rules that fit under the bound are required
        if i < max_size && !set.contains(&m.call) {
            problems.push(format!(
                "missing {:?} candidate {}",
                m.rule.expect("rule"),
                m.call
            ));
        }
    }
    if let Some(c) = chosen {
        if !set.contains(c) {
            problems.push(format!("chosen action {c} is not in the action set"));
        }
    }
    problems
}

pub(crate) fn is_speak(call: &ToolCall) -> bool {
    call.tool == SPEAK
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: RuleSwitches = RuleSwitches {
        flow: true,
        entry: true,
    };

    fn state<'a>(
        step: usize,
        prev: Option<&'a PreviousAction>,
        verdict: &'a JudgeVerdict,
    ) -> RuleState<'a> {
        RuleState {
            step_index: step,
            alert: "Alert: cpu_usage above threshold on checkout-0",
            previous: prev,
            verdict,
            switches: ALL,
        }
    }

    fn agent(tool: &str) -> ActionCandidate {
        ActionCandidate::proposed(ToolCall::new(tool), "why not")
    }

    #[test]
    fn after_generate_sop_only_codify() {
        let prev = PreviousAction {
            call: ToolCall::new(GENERATE_SOP).arg("fault_info", "x"),
            outcome: ActionOutcome::SopGenerated {
                sop: Some("gen-x".into()),
            },
        };
        let v = JudgeVerdict::default();
        let (set, _) = apply_flow_rules(&state(3, Some(&prev), &v), vec![], 5);
        assert_eq!(set.len(), 1);
        assert_eq!(
            set.candidates[0].call,
            ToolCall::new(GENERATE_SOP_CODE).arg("sop", "gen-x")
        );
        assert_eq!(set.candidates[0].provenance, Provenance::FlowRule);
    }

    #[test]
    fn judge_found_evicts_one_agent_candidate() {
        let v = JudgeVerdict::found_with(&[("checkout-0", "CpuStress")], "cpu saturated");
        let proposals: Vec<_> = [
            "collect_trace",
            "pod_analyze",
            "node_analyze",
            "service_analyze",
            "get_all_namespace",
        ]
        .into_iter()
        .map(agent)
        .collect();
        let (set, notes) = apply_flow_rules(&state(6, None, &v), proposals, 5);
        assert_eq!(set.len(), 5);
        assert_eq!(set.candidates[0].call.tool, SPEAK);
        assert_eq!(set.candidates[0].provenance, Provenance::JudgeRule);
        assert!(!set
            .candidates
            .iter()
            .any(|c| c.call.tool == "get_all_namespace"));
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn fresh_episode_gets_match_sop() {
        let v = JudgeVerdict::default();
        let (set, _) = apply_flow_rules(&state(0, None, &v), vec![], 5);
        assert_eq!(set.candidates[0].call.tool, MATCH_SOP);
        assert_eq!(set.candidates[0].rule, Some(RuleId::R8));
    }

    #[test]
    fn duplicates_keep_the_rule_copy() {
        let v = JudgeVerdict::default();
        let dup = ActionCandidate::proposed(
            ToolCall::new(MATCH_SOP).arg("query", "Alert: cpu_usage above threshold on checkout-0"),
            "same",
        );
        let (set, notes) =
            apply_flow_rules(&state(0, None, &v), vec![dup, agent("collect_trace")], 5);
        assert_eq!(set.len(), 2);
        assert!(set.candidates[0].is_rule());
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn regeneration_after_runtime_error() {
        let prev = PreviousAction {
            call: ToolCall::new(RUN_SOP),
            outcome: ActionOutcome::ProgramRun {
                sop: Some("pod-failure".into()),
                status: RunStatus::RuntimeError,
                findings: 0,
            },
        };
        let v = JudgeVerdict::default();
        let c = rule_candidates(&state(4, Some(&prev), &v));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].rule, Some(RuleId::R5));
    }

    #[test]
    fn fallback_prefers_highest_priority_rule() {
        let v = JudgeVerdict::found_with(&[("a", "CpuStress")], "s");
        let prev = PreviousAction {
            call: ToolCall::new(RUN_SOP),
            outcome: ActionOutcome::ProgramRun {
                sop: None,
                status: RunStatus::Succeeded,
                findings: 1,
            },
        };
        let (set, _) =
            apply_flow_rules(&state(5, Some(&prev), &v), vec![agent("collect_trace")], 5);
        assert_eq!(set.fallback_index(), Some(0));
        assert_eq!(set.candidates[0].rule, Some(RuleId::R7));
        assert_eq!(set.candidates[1].rule, Some(RuleId::R6));
        let only_agent = ActionSet::assemble(vec![], vec![agent("collect_trace")], 5).0;
        assert_eq!(only_agent.fallback_index(), Some(0));
        assert_eq!(ActionSet::empty(5).fallback_index(), None);
    }

    #[test]
    fn rules_beyond_bound_drop_lowest_priority() {
        let v = JudgeVerdict::found_with(&[("a", "CpuStress")], "s");
        let (set, notes) = apply_flow_rules(&state(0, None, &v), vec![], 1);
        assert_eq!(set.len(), 1);
        assert_eq!(set.candidates[0].rule, Some(RuleId::R7));
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn switches_disable_rule_families() {
        let v = JudgeVerdict::found_with(&[("a", "CpuStress")], "s");
        let mut s = state(0, None, &v);
        s.switches = RuleSwitches {
            flow: false,
            entry: true,
        };
        let c = rule_candidates(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].rule, Some(RuleId::R8));
        s.switches = RuleSwitches {
            flow: false,
            entry: false,
        };
        assert!(rule_candidates(&s).is_empty());
    }
}
