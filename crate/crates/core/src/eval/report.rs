//! Per-episode rows and the benchmark report.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::{
    average_path_length, location_accuracy_with, match_items, type_accuracy_with, Counts,
};
use super::{EvalConfig, EvalError};
use crate::agents::{EpisodeOutcome, EpisodeReport};
use crate::sandbox::EpisodeScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    Completed,
    BudgetExhausted,
    Aborted,
}

impl RowOutcome {
    pub fn label(self) -> &'static str {
        match self {
            RowOutcome::Completed => "completed",
            RowOutcome::BudgetExhausted => "budget_exhausted",
            RowOutcome::Aborted => "aborted",
        }
    }
}

impl From<&EpisodeOutcome> for RowOutcome {
    fn from(o: &EpisodeOutcome) -> Self {
        match o {
            EpisodeOutcome::Completed => RowOutcome::Completed,
            EpisodeOutcome::BudgetExhausted => RowOutcome::BudgetExhausted,
            EpisodeOutcome::Aborted { .. } => RowOutcome::Aborted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scenario: String,
    pub outcome: RowOutcome,
    pub predicted_locations: Vec<String>,
    pub predicted_types: Vec<String>,
    pub truth_locations: BTreeSet<String>,
    pub truth_types: BTreeSet<String>,
    pub location: Counts,
    pub fault_type: Counts,
    /// Executed actions; present only for completed episodes.
    pub path_length: Option<usize>,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeRow {
    /// Scores an episode. Predictions beyond `max_causes` are ignored;
    /// exhausted and aborted episodes predict nothing.
    pub fn score(scenario: &EpisodeScenario, report: &EpisodeReport, max_causes: usize) -> Self {
        let outcome = RowOutcome::from(&report.outcome);
        let (mut locs, mut types, path_length) = match (outcome, report.diagnosis()) {
            (RowOutcome::Completed, Some(d)) => {
                (d.locations.clone(), d.types.clone(), Some(d.path_length))
            }
            _ => (Vec::new(), Vec::new(), None),
        };
        locs.truncate(max_causes);
        types.truncate(max_causes);
        let error = match &report.outcome {
            EpisodeOutcome::Aborted { reason } => Some(reason.clone()),
            _ => None,
        };
        Self::from_predictions(
            scenario,
            outcome,
            locs,
            types,
            path_length,
            report.state.step_count,
            error,
        )
    }

    pub fn from_predictions(
        scenario: &EpisodeScenario,
        outcome: RowOutcome,
        predicted_locations: Vec<String>,
        predicted_types: Vec<String>,
        path_length: Option<usize>,
        steps: usize,
        error: Option<String>,
    ) -> Self {
        let truth_types: BTreeSet<String> = scenario
            .ground_truth
            .types
            .iter()
            .map(|t| t.name().to_string())
            .collect();
        let location = match_items(
            &predicted_locations,
            &scenario.ground_truth.locations,
            &scenario.location_aliases,
        );
        let fault_type = match_items(&predicted_types, &truth_types, &Default::default());
        Self {
            scenario: scenario.id.clone(),
            outcome,
            predicted_locations,
            predicted_types,
            truth_locations: scenario.ground_truth.locations.clone(),
            truth_types,
            location,
            fault_type,
            path_length,
            steps,
            error,
        }
    }

    /// Row for a scenario that could not be run at all.
    pub fn aborted(scenario: &EpisodeScenario, error: String) -> Self {
        Self::from_predictions(
            scenario,
            RowOutcome::Aborted,
            Vec::new(),
            Vec::new(),
            None,
            0,
            Some(error),
        )
    }
}

/// Corpus-level numbers. `None` serializes as null and marks an undefined
/// metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub la: Option<f64>,
    pub ta: Option<f64>,
    pub average: Option<f64>,
    pub apl: Option<f64>,
    pub episodes: usize,
    pub completed: usize,
    pub budget_exhausted: usize,
    pub aborted: usize,
}

impl Aggregates {
    pub fn compute(rows: &[EpisodeRow], config: &EvalConfig) -> Self {
        let la = location_accuracy_with(rows, config.sigma, config.aggregation).ok();
        let ta = type_accuracy_with(rows, config.sigma, config.aggregation).ok();
        let count = |o: RowOutcome| rows.iter().filter(|r| r.outcome == o).count();
        Self {
            la,
            ta,
            average: la.zip(ta).map(|(l, t)| (l + t) / 2.0),
            apl: average_path_length(rows),
            episodes: rows.len(),
            completed: count(RowOutcome::Completed),
            budget_exhausted: count(RowOutcome::BudgetExhausted),
            aborted: count(RowOutcome::Aborted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: EvalConfig,
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Aggregates,
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}"))
}

impl BenchmarkReport {
    pub fn new(config: EvalConfig, rows: Vec<EpisodeRow>) -> Self {
        let aggregates = Aggregates::compute(&rows, &config);
        Self {
            config,
            rows,
            aggregates,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses a report and checks that its aggregates follow from its rows.
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let r: Self = serde_json::from_str(text)
            .map_err(|e| EvalError::Report(format!("invalid report: {e}")))?;
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), EvalError> {
        let again = Aggregates::compute(&self.rows, &self.config);
        if again != self.aggregates {
            return Err(EvalError::Report(format!(
                "aggregates do not match rows: stored {:?}, recomputed {:?}",
                self.aggregates, again
            )));
        }
        for r in &self.rows {
            if r.predicted_locations.len() > self.config.max_root_causes
                || r.predicted_types.len() > self.config.max_root_causes
            {
                return Err(EvalError::Report(format!(
                    "row {} exceeds {} predictions",
                    r.scenario, self.config.max_root_causes
                )));
            }
        }
        Ok(())
    }

    pub fn any_aborted(&self) -> bool {
        self.aggregates.aborted > 0
    }

    pub fn summary_line(&self) -> String {
        let a = &self.aggregates;
        format!(
            "LA={} TA={} Avg={} APL={} episodes={} completed={} exhausted={} aborted={}",
            fmt_metric(a.la),
            fmt_metric(a.ta),
            fmt_metric(a.average),
            fmt_metric(a.apl),
            a.episodes,
            a.completed,
            a.budget_exhausted,
            a.aborted
        )
    }

    /// Fixed-width table of rows followed by the summary line.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<28} {:<16} {:>5} {:>5} {:<30} {}\n",
            "scenario", "outcome", "steps", "path", "locations", "types"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:<16} {:>5} {:>5} {:<30} {}\n",
                r.scenario,
                r.outcome.label(),
                r.steps,
                r.path_length.map_or("-".to_string(), |n| n.to_string()),
                r.predicted_locations.join(","),
                r.predicted_types.join(",")
            ));
        }
        out.push_str(&format!("ablations: {}\n", self.config.agent.ablations));
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}
