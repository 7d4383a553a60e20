//! JSONL transcripts: one header line, one line per step, one footer line.
//!
//! Transcripts carry no timestamps, so a scripted run serializes to the
//! same bytes every time.

use serde::{Deserialize, Serialize};

use super::action_set::{check_step, is_speak, PreviousAction, RuleState};
use super::episode::StepRecord;
use super::roles::JudgeVerdict;
use super::{AgentConfig, AgentError, DiagnosisResult, EpisodeOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub scenario: String,
    pub alert: String,
    pub config: AgentConfig,
    /// Knowledge base size when the episode started.
    pub sops: usize,
    pub incidents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFooter {
    pub outcome: EpisodeOutcome,
    pub steps: usize,
    pub path: Vec<String>,
    pub diagnosis: Option<DiagnosisResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Episode(EpisodeHeader),
    Step(StepRecord),
    End(EpisodeFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("transcript serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, AgentError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| AgentError::Transcript(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let t = Self { records };
        if t.header().is_none() {
            return Err(AgentError::Transcript("missing episode header".into()));
        }
        Ok(t)
    }

    pub fn header(&self) -> Option<&EpisodeHeader> {
        match self.records.first() {
            Some(TranscriptRecord::Episode(h)) => Some(h),
            _ => None,
        }
    }

    pub fn footer(&self) -> Option<&EpisodeFooter> {
        match self.records.last() {
            Some(TranscriptRecord::End(f)) => Some(f),
            _ => None,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            TranscriptRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    /// Human-readable rendering: thought, action set, choice and
    /// observation of every step.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(h) = self.header() {
            out.push_str(&format!(
                "scenario {}\n{}\nablations: {}\n",
                h.scenario, h.alert, h.config.ablations
            ));
        }
        for s in self.steps() {
            out.push_str(&format!(
                "\n== step {} ==\nthought: {}\n",
                s.index + 1,
                s.thought.trim()
            ));
            if !s.action_set.is_empty() {
                out.push_str("action set:\n");
                for (i, c) in s.action_set.candidates.iter().enumerate() {
                    out.push_str(&format!("  {}. {c}\n", i + 1));
                }
            }
            if let Some(sel) = &s.selection {
                out.push_str(&format!(
                    "selection: {:?}{}\n",
                    sel.reply.trim(),
                    if sel.fallback { " (fallback)" } else { "" }
                ));
            }
            match (&s.chosen, s.executed) {
                (Some(c), true) => out.push_str(&format!("action: {}\n", c.call)),
                (Some(c), false) => out.push_str(&format!("action: {} (not executed)\n", c.call)),
                _ => {}
            }
            out.push_str(&format!("observation:\n{}\n", s.observation));
            if let Some(h) = &s.hypotheses {
                let names: Vec<&str> = h.iter().map(|h| h.fault_type.as_str()).collect();
                out.push_str(&format!("ob hypotheses: {}\n", names.join(", ")));
            }
            if let Some(j) = &s.judge {
                out.push_str(&format!(
                    "judge ({}): {} {}\n",
                    j.trigger,
                    if j.verdict.found {
                        "FOUND"
                    } else {
                        "NOT FOUND"
                    },
                    j.verdict.summary
                ));
            }
            for n in &s.notes {
                out.push_str(&format!("note: {n}\n"));
            }
        }
        if let Some(f) = self.footer() {
            out.push_str(&format!(
                "\noutcome: {} after {} steps\n",
                f.outcome.label(),
                f.steps
            ));
            if let Some(d) = &f.diagnosis {
                out.push_str(&format!(
                    "locations: {}\ntypes: {}\npath: {}\n",
                    d.locations.join(", "),
                    d.types.join(", "),
                    d.path.join(" -> ")
                ));
            }
        }
        out
    }
}

/// Replays the flow rules over a transcript. Returns one message per
/// violation of rule presence, set membership, the size bound, or Speak
/// gating.
pub fn replay_flow_compliance(t: &Transcript) -> Result<Vec<String>, AgentError> {
    let header = t
        .header()
        .ok_or_else(|| AgentError::Transcript("missing episode header".into()))?;
    let cfg = &header.config;
    let mut problems = Vec::new();
    let mut verdict = JudgeVerdict::default();
    let mut previous: Option<PreviousAction> = None;
    for s in t.steps() {
        let chosen = s.chosen.as_ref().map(|c| &c.call);
        if cfg.ablations.action_set && s.selection.is_some() {
            let state = RuleState {
                step_index: s.index,
                alert: &header.alert,
                previous: previous.as_ref(),
                verdict: &verdict,
                switches: cfg.ablations.rule_switches(),
            };
            for p in check_step(&state, &s.action_set, chosen, cfg.action_set_size) {
                problems.push(format!("step {}: {p}", s.index + 1));
            }
        } else if let Some(c) = chosen {
            if !s.action_set.contains(c) {
                problems.push(format!(
                    "step {}: chosen action {c} is not in the action set",
                    s.index + 1
                ));
            }
        }
        if s.executed && chosen.is_some_and(is_speak) && cfg.ablations.judge_agent && !verdict.found
        {
            problems.push(format!(
                "step {}: Speak executed without a confirmed verdict",
                s.index + 1
            ));
        }
        previous = match (s.executed, chosen, &s.outcome) {
            (true, Some(c), Some(o)) => Some(PreviousAction {
                call: c.clone(),
                outcome: o.clone(),
            }),
            _ => None,
        };
        if let Some(j) = &s.judge {
            verdict = j.verdict.clone();
        }
    }
    Ok(problems)
}
