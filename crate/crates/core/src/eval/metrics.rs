//! Location and type accuracy with an incorrect-prediction penalty, and
//! average path length over completed episodes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const DEFAULT_SIGMA: f64 = 0.1;

/// Correct and incorrect predictions against `total` ground-truth items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub incorrect: usize,
    pub total: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.incorrect += o.incorrect;
        self.total += o.total;
    }
}

/// `(correct - sigma * incorrect) / total`. May be negative.
pub fn accuracy(c: Counts, sigma: f64) -> Result<f64, EvalError> {
    if c.total == 0 {
        return Err(EvalError::UndefinedMetric("no ground-truth items".into()));
    }
    Ok((c.correct as f64 - sigma * c.incorrect as f64) / c.total as f64)
}

/// Matches predictions to ground truth. Each truth item is claimed by at
/// most one prediction; aliases map an accepted alternative id to its
/// canonical id. Repeated predictions of an already matched item count as
/// incorrect.
pub fn match_items(
    predicted: &[String],
    truth: &BTreeSet<String>,
    aliases: &BTreeMap<String, String>,
) -> Counts {
    let mut claimed = BTreeSet::new();
    let mut c = Counts {
        total: truth.len(),
        ..Counts::default()
    };
    for p in predicted {
        let canon = aliases.get(p).unwrap_or(p);
        if truth.contains(canon) && claimed.insert(canon.clone()) {
            c.correct += 1;
        } else {
            c.incorrect += 1;
        }
    }
    c
}

/// How per-episode counts are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum counts over the corpus, then divide once.
    #[default]
    Corpus,
    /// Mean of per-episode accuracies.
    EpisodeMean,
}

fn aggregate<'a>(
    counts: impl Iterator<Item = &'a Counts>,
    sigma: f64,
    mode: Aggregation,
) -> Result<f64, EvalError> {
    match mode {
        Aggregation::Corpus => {
            let mut sum = Counts::default();
            counts.for_each(|c| sum += *c);
            accuracy(sum, sigma)
        }
        Aggregation::EpisodeMean => {
            let per: Vec<f64> = counts
                .filter(|c| c.total > 0)
                .map(|c| accuracy(*c, sigma))
                .collect::<Result<_, _>>()?;
            if per.is_empty() {
                return Err(EvalError::UndefinedMetric(
                    "no episode has ground truth".into(),
                ));
            }
            Ok(per.iter().sum::<f64>() / per.len() as f64)
        }
    }
}

pub fn location_accuracy(rows: &[super::EpisodeRow], sigma: f64) -> Result<f64, EvalError> {
    location_accuracy_with(rows, sigma, Aggregation::Corpus)
}

pub fn type_accuracy(rows: &[super::EpisodeRow], sigma: f64) -> Result<f64, EvalError> {
    type_accuracy_with(rows, sigma, Aggregation::Corpus)
}

pub fn location_accuracy_with(
    rows: &[super::EpisodeRow],
    sigma: f64,
    mode: Aggregation,
) -> Result<f64, EvalError> {
    aggregate(rows.iter().map(|r| &r.location), sigma, mode)
}

pub fn type_accuracy_with(
    rows: &[super::EpisodeRow],
    sigma: f64,
    mode: Aggregation,
) -> Result<f64, EvalError> {
    aggregate(rows.iter().map(|r| &r.fault_type), sigma, mode)
}

/// Mean path length over completed episodes; `None` when there are none.
pub fn average_path_length(rows: &[super::EpisodeRow]) -> Option<f64> {
    let lengths: Vec<usize> = rows
        .iter()
        .filter(|r| r.outcome == super::RowOutcome::Completed)
        .filter_map(|r| r.path_length)
        .collect();
    if lengths.is_empty() {
        None
    } else {
        Some(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
    }
}
