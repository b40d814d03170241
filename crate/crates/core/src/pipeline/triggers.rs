//! Retraining triggers: the monthly schedule gated on dataset growth, and
//! degradation of clinician-reported accuracy.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{FeedbackRecord, PipelineError, PipelineState, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub schedule_period_days: u32,
    pub growth_threshold: f64,
    pub degradation_threshold: f64,
    pub feedback_window: usize,
    /// Count feedback for every model version, not just the one in production.
    pub count_all_versions: bool,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self { schedule_period_days: 30, growth_threshold: 0.10, degradation_threshold: 0.90, feedback_window: 100, count_all_versions: false }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [("growth_threshold", self.growth_threshold), ("degradation_threshold", self.degradation_threshold)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(PipelineError::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.feedback_window < 10 {
            return Err(PipelineError::InvalidConfig(format!("feedback_window must be at least 10, got {}", self.feedback_window)));
        }
        Ok(())
    }

    pub fn period(&self) -> Duration {
        Duration::days(self.schedule_period_days as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Schedule,
    Degradation,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub fired: BTreeSet<Trigger>,
    pub rolling_accuracy: Option<f64>,
    pub window_fill: usize,
    /// Relative growth since the last training run; `None` before the first run.
    pub growth: Option<f64>,
    pub period_elapsed: bool,
}

impl TriggerDecision {
    pub fn fires(&self) -> bool {
        !self.fired.is_empty()
    }

    pub fn has(&self, t: Trigger) -> bool {
        self.fired.contains(&t)
    }
}

/// Fraction of `correct` verdicts among the last `window` records, or `None`
/// while fewer than `window` exist.
pub fn rolling_accuracy(feedback: &[FeedbackRecord], window: usize) -> Option<f64> {
    if window == 0 || feedback.len() < window {
        return None;
    }
    let recent = &feedback[feedback.len() - window..];
    let correct = recent.iter().filter(|r| r.verdict == Verdict::Correct).count();
    Some(correct as f64 / window as f64)
}

/// `current >= (1 + g) * base`, tolerant of the rounding in `1 + g`.
fn grown_enough(current: usize, base: usize, g: f64) -> bool {
    let need = (1.0 + g) * base as f64;
    current as f64 >= need - 1e-9 * need.max(1.0)
}

/// Evaluates both triggers. `feedback` is the already-filtered window source,
/// oldest first (see [`super::FeedbackStore::window_records`]).
///
/// The schedule fires when at least the configured period has passed since
/// the last training run (inclusive) and the dataset has grown by at least
/// the growth threshold (inclusive). A state that has never trained counts as
/// elapsed and fires once any data exists. Degradation fires when the window
/// is full and rolling accuracy is strictly below the threshold.
pub fn check_triggers(state: &PipelineState, now: DateTime<Utc>, feedback: &[FeedbackRecord], cfg: &TriggerConfig) -> TriggerDecision {
    let mut fired = BTreeSet::new();
    let period_elapsed = state.last_train_time.is_none_or(|t| now - t >= cfg.period());
    let growth = state.last_train_time.map(|_| {
        if state.dataset_size_at_last_train == 0 {
            f64::INFINITY
        } else {
            state.current_dataset_size as f64 / state.dataset_size_at_last_train as f64 - 1.0
        }
    });
    let grown = match state.last_train_time {
        None => state.current_dataset_size > 0,
        Some(_) => grown_enough(state.current_dataset_size, state.dataset_size_at_last_train, cfg.growth_threshold),
    };
    if period_elapsed && grown {
        fired.insert(Trigger::Schedule);
    }
    let acc = rolling_accuracy(feedback, cfg.feedback_window);
    if acc.is_some_and(|a| a < cfg.degradation_threshold) {
        fired.insert(Trigger::Degradation);
    }
    TriggerDecision { fired, rolling_accuracy: acc, window_fill: feedback.len().min(cfg.feedback_window), growth, period_elapsed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        "2026-01-01T00:00:00Z".parse().unwrap()
    }

    fn state(base: usize, current: usize) -> PipelineState {
        PipelineState { last_train_time: Some(t0()), dataset_size_at_last_train: base, current_dataset_size: current, ..Default::default() }
    }

    pub(crate) fn verdicts(correct: usize, total: usize) -> Vec<FeedbackRecord> {
        (0..total)
            .map(|i| FeedbackRecord {
                request_id: format!("r{i}"),
                model_version: 1,
                verdict: if i < total - correct { Verdict::Incorrect } else { Verdict::Correct },
                true_label: (i < total - correct).then_some(Label::Malignant),
                submitted_at: t0(),
            })
            .collect()
    }

    #[test]
    fn schedule_examples() {
        let cfg = TriggerConfig::default();
        let later = t0() + Duration::days(31);
        assert!(!check_triggers(&state(1000, 1090), later, &[], &cfg).fires());
        assert!(check_triggers(&state(1000, 1100), later, &[], &cfg).has(Trigger::Schedule));
        assert!(check_triggers(&state(100, 110), later, &[], &cfg).has(Trigger::Schedule));
        // exactly 30 days is inclusive
        assert!(check_triggers(&state(100, 110), t0() + Duration::days(30), &[], &cfg).has(Trigger::Schedule));
        assert!(!check_triggers(&state(100, 110), t0() + Duration::days(30) - Duration::seconds(1), &[], &cfg).fires());
    }

    #[test]
    fn never_trained_fires_with_data() {
        let s = PipelineState { current_dataset_size: 10, ..Default::default() };
        assert!(check_triggers(&s, t0(), &[], &TriggerConfig::default()).has(Trigger::Schedule));
        assert!(!check_triggers(&PipelineState::default(), t0(), &[], &TriggerConfig::default()).fires());
    }

    #[test]
    fn rolling_examples() {
        assert_eq!(rolling_accuracy(&verdicts(100, 100), 100), Some(1.0));
        assert_eq!(rolling_accuracy(&verdicts(50, 50), 100), None);
        assert_eq!(rolling_accuracy(&verdicts(60, 100), 100), Some(0.6));
        // only the most recent window counts; the early incorrect ones fall out
        assert_eq!(rolling_accuracy(&verdicts(100, 120), 100), Some(1.0));
    }

    #[test]
    fn degradation_examples() {
        let cfg = TriggerConfig::default();
        let s = state(100, 100);
        assert!(check_triggers(&s, t0(), &verdicts(89, 100), &cfg).has(Trigger::Degradation));
        assert!(!check_triggers(&s, t0(), &verdicts(90, 100), &cfg).fires());
        assert!(!check_triggers(&s, t0(), &verdicts(0, 99), &cfg).fires());
    }

    #[test]
    fn config_validation() {
        assert!(TriggerConfig::default().validate().is_ok());
        assert!(TriggerConfig { feedback_window: 9, ..Default::default() }.validate().is_err());
        assert!(TriggerConfig { growth_threshold: 0.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn schedule_monotone_in_growth(base in 1usize..10_000, a in 0usize..5_000, b in 0usize..5_000, days in 0i64..90) {
            let (lo, hi) = (a.min(b), a.max(b));
            let now = t0() + Duration::days(days);
            let cfg = TriggerConfig::default();
            if check_triggers(&state(base, base + lo), now, &[], &cfg).fires() {
                prop_assert!(check_triggers(&state(base, base + hi), now, &[], &cfg).fires());
            }
        }
    }
}
