use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sandbox::{LogLine, TimeWindow};

const DEFAULTS: &str = include_str!("../../config/detector.toml");

/// Rule-based anomaly detection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub k_sigma: f64,
    pub min_baseline_samples: usize,
    pub relative_floor: f64,
    pub absolute_floor: f64,
    pub default_window_s: f64,
    pub log_keywords: Vec<String>,
    pub static_thresholds: BTreeMap<String, f64>,
}

// Same shape without field defaults, so reading the shipped file does not
// recurse into `Default`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Shipped {
    k_sigma: f64,
    min_baseline_samples: usize,
    relative_floor: f64,
    absolute_floor: f64,
    default_window_s: f64,
    log_keywords: Vec<String>,
    static_thresholds: BTreeMap<String, f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let s: Shipped = toml::from_str(DEFAULTS).expect("shipped detector defaults parse");
        Self {
            k_sigma: s.k_sigma,
            min_baseline_samples: s.min_baseline_samples,
            relative_floor: s.relative_floor,
            absolute_floor: s.absolute_floor,
            default_window_s: s.default_window_s,
            log_keywords: s.log_keywords,
            static_thresholds: s.static_thresholds,
        }
    }
}

impl DetectorConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let c: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.k_sigma > 0.0) {
            return Err("k_sigma must be > 0".into());
        }
        if self.min_baseline_samples < 2 {
            return Err("min_baseline_samples must be >= 2".into());
        }
        if !(self.default_window_s > 0.0) {
            return Err("default_window_s must be > 0".into());
        }
        Ok(())
    }

    /// The last `default_window_s` seconds of `episode`.
    pub fn default_window(&self, episode: TimeWindow) -> TimeWindow {
        TimeWindow::new(
            (episode.end_s - self.default_window_s).max(episode.start_s),
            episode.end_s,
        )
    }

    pub fn is_abnormal_log(&self, line: &str) -> bool {
        let lower = line.to_lowercase();
        self.log_keywords
            .iter()
            .any(|k| lower.contains(&k.to_lowercase()))
    }

    pub fn abnormal_logs<'a>(&self, logs: &'a [LogLine]) -> Vec<&'a LogLine> {
        logs.iter()
            .filter(|l| self.is_abnormal_log(&l.text))
            .collect()
    }

    /// Judges the samples of `window` against a static threshold or, failing
    /// that, against `baseline` (the samples preceding the window).
    pub fn judge(
        &self,
        component: &str,
        metric: &str,
        window: &[(f64, f64)],
        baseline: &[(f64, f64)],
    ) -> MetricVerdict {
        let mut v = MetricVerdict {
            component: component.into(),
            metric: metric.into(),
            anomalous: false,
            direction: None,
            rule: Rule::None,
            flagged_samples: 0,
            total_samples: window.len(),
            extreme: None,
        };
        if window.is_empty() {
            return v;
        }
        if let Some(&threshold) = self.static_thresholds.get(metric) {
            v.rule = Rule::Static { threshold };
            let above: Vec<f64> = window
                .iter()
                .map(|s| s.1)
                .filter(|x| *x > threshold)
                .collect();
            v.flagged_samples = above.len();
            v.anomalous = !above.is_empty();
            v.extreme = window.iter().map(|s| s.1).reduce(f64::max);
            if v.anomalous {
                v.direction = Some(Direction::AboveThreshold);
            }
            return v;
        }
        if baseline.len() < self.min_baseline_samples {
            v.rule = Rule::InsufficientBaseline;
            return v;
        }
        let n = baseline.len() as f64;
        let mean = baseline.iter().map(|s| s.1).sum::<f64>() / n;
        let var = baseline.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sigma = var
            .sqrt()
            .max(self.relative_floor * mean.abs())
            .max(self.absolute_floor);
        let limit = self.k_sigma * sigma;
        let (mut above, mut below) = (0, 0);
        let mut worst: Option<f64> = None;
        for &(_, x) in window {
            let d = x - mean;
            if d.abs() > limit {
                if d > 0.0 {
                    above += 1;
                } else {
                    below += 1;
                }
            }
            if worst.is_none_or(|w| d.abs() > (w - mean).abs()) {
                worst = Some(x);
            }
        }
        v.rule = Rule::KSigma {
            mean,
            sigma,
            k: self.k_sigma,
        };
        v.flagged_samples = above + below;
        v.anomalous = v.flagged_samples > 0;
        v.extreme = worst;
        if v.anomalous {
            v.direction = Some(if above >= below {
                Direction::AboveBaseline
            } else {
                Direction::BelowBaseline
            });
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AboveThreshold,
    AboveBaseline,
    BelowBaseline,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AboveThreshold => "above threshold",
            Direction::AboveBaseline => "above baseline",
            Direction::BelowBaseline => "below baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    None,
    Static { threshold: f64 },
    KSigma { mean: f64, sigma: f64, k: f64 },
    InsufficientBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    pub component: String,
    pub metric: String,
    pub anomalous: bool,
    pub direction: Option<Direction>,
    pub rule: Rule,
    pub flagged_samples: usize,
    pub total_samples: usize,
    /// Sample furthest from normal.
    pub extreme: Option<f64>,
}

impl fmt::Display for MetricVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = format!("metric {} on {}", self.metric, self.component);
        let x = self.extreme.unwrap_or(f64::NAN);
        match (&self.rule, self.direction) {
            (Rule::None, _) => write!(f, "{head}: no samples in window"),
            (Rule::InsufficientBaseline, _) => {
                write!(f, "{head} is normal (insufficient baseline to compare)")
            }
            (Rule::Static { threshold }, Some(d)) => write!(
                f,
                "{head} is abnormal: {}/{} samples {d} {threshold:.2} (peak {x:.3})",
                self.flagged_samples, self.total_samples
            ),
            (Rule::Static { threshold }, None) => {
                write!(f, "{head} is normal (peak {x:.3}, threshold {threshold:.2})")
            }
            (Rule::KSigma { mean, sigma, k }, Some(d)) => write!(
                f,
                "{head} is abnormal: {}/{} samples {d} {mean:.3}±{:.3} (extreme {x:.3}, deviation {:+.3})",
                self.flagged_samples,
                self.total_samples,
                k * sigma,
                x - mean
            ),
            (Rule::KSigma { mean, sigma, k }, None) => write!(
                f,
                "{head} is normal (within {mean:.3}±{:.3})",
                k * sigma
            ),
        }
    }
}
