//! The acceptance gate: a candidate is kept only when its preservation rate
//! meets or exceeds `tau_pr`, its hallucination rate is at or below
//! `tau_hr`, and every required label-defining entity survived the rewrite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::QualityScore;
use crate::weak_expert::EntitySet;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("invalid gate configuration: {detail}")]
    Config { detail: String },
}

/// What to emit for a note whose every attempt failed the gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Copy the original text through, flagged `fallback = true`, keeping
    /// the augmented dataset the same size as the input.
    #[default]
    CopyOriginal,
    /// Emit nothing for the note.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub tau_pr: f64,
    pub tau_hr: f64,
    pub max_attempts: u32,
    #[serde(default, skip_serializing_if = "EntitySet::is_empty")]
    pub required_entities: EntitySet,
    #[serde(default)]
    pub fallback: FallbackPolicy,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau_pr: 0.9,
            tau_hr: 0.1,
            max_attempts: 3,
            required_entities: EntitySet::new(),
            fallback: FallbackPolicy::CopyOriginal,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateError> {
        if !(0.0..=1.0).contains(&self.tau_pr) {
            return Err(GateError::Config {
                detail: format!("tau_pr must be in [0, 1], got {}", self.tau_pr),
            });
        }
        if !self.tau_hr.is_finite() || self.tau_hr < 0.0 {
            return Err(GateError::Config {
                detail: format!("tau_hr must be finite and >= 0, got {}", self.tau_hr),
            });
        }
        if self.max_attempts == 0 {
            return Err(GateError::Config {
                detail: "max_attempts must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    PrBelowThreshold,
    HrAboveThreshold,
    MissingRequiredEntity,
}

/// Outcome of the gate; `accepted` holds exactly when `reasons` is empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

/// Applies the gate to a computed score.
pub fn decide(score: &QualityScore, config: &GateConfig) -> GateDecision {
    decide_parts(score.pr, score.hr, &score.e_aug, config)
}

/// Gate rule on raw parts; used directly when replaying logged decisions.
/// Both thresholds are inclusive: pr equal to `tau_pr` passes, hr equal to
/// `tau_hr` passes.
pub fn decide_parts(pr: f64, hr: f64, e_aug: &EntitySet, config: &GateConfig) -> GateDecision {
    let mut reasons = Vec::new();
    if pr < config.tau_pr {
        reasons.push(RejectReason::PrBelowThreshold);
    }
    if hr > config.tau_hr {
        reasons.push(RejectReason::HrAboveThreshold);
    }
    if !check_required(e_aug, &config.required_entities) {
        reasons.push(RejectReason::MissingRequiredEntity);
    }
    GateDecision {
        accepted: reasons.is_empty(),
        reasons,
    }
}

/// True iff every required entity is present in the augmented set.
pub fn check_required(e_aug: &EntitySet, required: &EntitySet) -> bool {
    required.is_subset(e_aug)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::score_sets;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> EntitySet {
        EntitySet::from_surfaces(items.iter().copied())
    }

    fn config(tau_pr: f64, tau_hr: f64) -> GateConfig {
        GateConfig {
            tau_pr,
            tau_hr,
            ..GateConfig::default()
        }
    }

    #[test]
    fn both_thresholds_met_is_accepted() {
        let decision = decide_parts(0.95, 0.02, &set(&[]), &config(0.9, 0.05));
        assert!(decision.accepted);
        assert!(decision.reasons.is_empty());
    }

    #[test]
    fn low_pr_is_rejected_with_reason() {
        let decision = decide_parts(0.8, 0.0, &set(&[]), &config(0.9, 0.1));
        assert!(!decision.accepted);
        assert_eq!(decision.reasons, vec![RejectReason::PrBelowThreshold]);
    }

    #[test]
    fn missing_required_entity_is_rejected() {
        let mut cfg = config(0.5, 1.0);
        cfg.required_entities = set(&["sepsis"]);
        let decision = decide_parts(1.0, 0.0, &set(&["fever"]), &cfg);
        assert!(!decision.accepted);
        assert_eq!(decision.reasons, vec![RejectReason::MissingRequiredEntity]);
    }

    #[test]
    fn boundary_values_pass_inclusive_thresholds() {
        let cfg = config(0.9, 0.1);
        assert!(decide_parts(0.9, 0.0, &set(&[]), &cfg).accepted);
        assert!(decide_parts(1.0, 0.1, &set(&[]), &cfg).accepted);
        assert!(!decide_parts(0.9 - 1e-12, 0.0, &set(&[]), &cfg).accepted);
        assert!(!decide_parts(1.0, 0.1 + 1e-12, &set(&[]), &cfg).accepted);
    }

    #[test]
    fn all_failing_conditions_are_listed() {
        let mut cfg = config(0.9, 0.1);
        cfg.required_entities = set(&["sepsis"]);
        let decision = decide_parts(0.1, 0.9, &set(&[]), &cfg);
        assert_eq!(
            decision.reasons,
            vec![
                RejectReason::PrBelowThreshold,
                RejectReason::HrAboveThreshold,
                RejectReason::MissingRequiredEntity
            ]
        );
    }

    #[test]
    fn check_required_examples() {
        assert!(check_required(&set(&["anything"]), &set(&[])));
        assert!(check_required(&set(&["a", "b"]), &set(&["a"])));
        assert!(!check_required(&set(&["a"]), &set(&["a", "c"])));
    }

    #[test]
    fn decide_matches_decide_parts() {
        let score = score_sets(set(&["a", "b"]), set(&["a", "c"]));
        let cfg = config(0.4, 0.6);
        assert_eq!(
            decide(&score, &cfg),
            decide_parts(score.pr, score.hr, &score.e_aug, &cfg)
        );
    }

    proptest! {
        #[test]
        fn loosening_thresholds_never_flips_accept_to_reject(
            pr in 0.0f64..=1.0,
            hr in 0.0f64..=2.0,
            tau_pr in 0.0f64..=1.0,
            tau_hr in 0.0f64..=2.0,
            slack_pr in 0.0f64..=1.0,
            slack_hr in 0.0f64..=1.0,
        ) {
            let e_aug = EntitySet::new();
            let strict = config(tau_pr, tau_hr);
            let loose = config((tau_pr - slack_pr).max(0.0), tau_hr + slack_hr);
            if decide_parts(pr, hr, &e_aug, &strict).accepted {
                prop_assert!(decide_parts(pr, hr, &e_aug, &loose).accepted);
            }
        }
    }
}
