//! The multi-agent episode engine.
//!
//! One episode runs the MainAgent loop over a sandboxed scenario: thought,
//! action set (ActionAgent proposals plus flow rules), selection, tool
//! execution, then the ObAgent and JudgeAgent hooks. The CodeAgent lives
//! behind `generate_sop_code`.

mod action_set;
mod episode;
mod roles;
mod transcript;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action_set::{
    apply_flow_rules, check_step, rule_candidates, ActionCandidate, ActionOutcome, ActionSet,
    CodeStatus, PreviousAction, Provenance, RuleId, RuleState, RuleSwitches, RunStatus,
    DEFAULT_ACTION_SET_SIZE,
};
pub use episode::{
    render_alert, run_episode, EpisodeEnv, EpisodeReport, EpisodeState, Exchange, JudgeRun,
    Selection, SelectionMode, StepRecord,
};
pub use roles::{
    action_system_prompt, judge_system_prompt, main_system_prompt, ob_system_prompt,
    parse_call_line, parse_candidates, parse_direct_action, parse_hypotheses, parse_selection,
    parse_verdict, Hypothesis, JudgeVerdict, ACTION_TAG, FLOW_PROMPT, JUDGE_TAG, MAIN_ACT_TAG,
    MAIN_SELECT_TAG, MAIN_THOUGHT_TAG, MAX_HYPOTHESES, OB_TAG,
};
pub use transcript::{replay_flow_compliance, Transcript, TranscriptRecord};

use crate::sandbox::SandboxError;

pub const DEFAULT_MAX_STEPS: usize = 20;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("invalid transcript: {0}")]
    Transcript(String),
}

/// The six ablation switches. `true` means the mechanism is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub sop_knowledge: bool,
    pub sop_flow: bool,
    pub action_set: bool,
    pub action_agent: bool,
    pub ob_agent: bool,
    pub judge_agent: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            sop_knowledge: true,
            sop_flow: true,
            action_set: true,
            action_agent: true,
            ob_agent: true,
            judge_agent: true,
        }
    }
}

impl Ablations {
    pub const NAMES: [&'static str; 6] = [
        "sop_knowledge",
        "sop_flow",
        "action_set",
        "action_agent",
        "ob_agent",
        "judge_agent",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "sop_knowledge" => &mut self.sop_knowledge,
            "sop_flow" => &mut self.sop_flow,
            "action_set" => &mut self.action_set,
            "action_agent" => &mut self.action_agent,
            "ob_agent" => &mut self.ob_agent,
            "judge_agent" => &mut self.judge_agent,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        let mut copy = *self;
        copy.slot(name).map(|b| *b)
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<(), AgentError> {
        let slot = self.slot(name).ok_or_else(|| {
            AgentError::Config(format!(
                "unknown ablation flag {name:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))
        })?;
        *slot = on;
        Ok(())
    }

    /// Copy with one flag turned off.
    pub fn without(mut self, name: &str) -> Result<Self, AgentError> {
        self.set(name, false)?;
        Ok(self)
    }

    /// Flow prompt text is shown only when both SOP knowledge and flow are on.
    pub fn flow_prompt(&self) -> bool {
        self.sop_knowledge && self.sop_flow
    }

    pub fn rule_switches(&self) -> RuleSwitches {
        RuleSwitches {
            flow: self.sop_knowledge && self.sop_flow,
            entry: self.sop_knowledge,
        }
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Self::NAMES
            .iter()
            .map(|n| {
                format!(
                    "{n}={}",
                    if self.get(n) == Some(true) {
                        "on"
                    } else {
                        "off"
                    }
                )
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Parses a comma separated list of flags to turn off.
impl FromStr for Ablations {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut a = Self::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            a.set(name, false)?;
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub action_set_size: usize,
    /// Retrieval depth for match_sop and match_observation.
    pub top_k: usize,
    /// Retrieval similarity threshold.
    pub threshold: f64,
    /// Also consult the JudgeAgent after a successful run_sop with findings.
    pub judge_after_run_sop: bool,
    pub ablations: Ablations,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            action_set_size: DEFAULT_ACTION_SET_SIZE,
            top_k: 3,
            threshold: 0.3,
            judge_after_run_sop: false,
            ablations: Ablations::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_steps == 0 {
            return Err(AgentError::Config("max_steps must be positive".into()));
        }
        if self.action_set_size == 0 {
            return Err(AgentError::Config(
                "action_set_size must be positive".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(AgentError::Config("top_k must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(AgentError::Config(format!(
                "threshold must lie in [-1, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Completed,
    BudgetExhausted,
    Aborted { reason: String },
}

impl EpisodeOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            EpisodeOutcome::Completed => "completed",
            EpisodeOutcome::BudgetExhausted => "budget_exhausted",
            EpisodeOutcome::Aborted { .. } => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    pub locations: Vec<String>,
    /// Canonical fault type names, or free text.
    pub types: Vec<String>,
    pub explanation: String,
    pub path: Vec<String>,
    pub path_length: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_parse_and_display() {
        let a: Ablations = "sop_flow, judge_agent".parse().unwrap();
        assert!(!a.sop_flow && !a.judge_agent && a.action_set);
        assert_eq!(
            a.to_string(),
            "sop_knowledge=on sop_flow=off action_set=on action_agent=on ob_agent=on judge_agent=off"
        );
        assert!("bogus".parse::<Ablations>().is_err());
    }

    #[test]
    fn knowledge_off_disables_every_rule() {
        let a = Ablations::default().without("sop_knowledge").unwrap();
        assert_eq!(
            a.rule_switches(),
            RuleSwitches {
                flow: false,
                entry: false
            }
        );
        let f = Ablations::default().without("sop_flow").unwrap();
        assert_eq!(
            f.rule_switches(),
            RuleSwitches {
                flow: false,
                entry: true
            }
        );
        assert!(!a.flow_prompt() && !f.flow_prompt());
    }

    #[test]
    fn config_defaults_validate() {
        let c = AgentConfig::default();
        assert_eq!((c.max_steps, c.action_set_size), (20, 5));
        c.validate().unwrap();
        assert!(AgentConfig { max_steps: 0, ..c }.validate().is_err());
    }
}
