//! Online engagement metrics over A/B interaction logs.
//!
//! ChatUV counts distinct users, ChatPV counts raw events, and the
//! growth gap compares treatment to control. Observation-window
//! filtering happens before these functions; they fold whatever stream
//! they are given.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a logged chat interaction was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MessageSent,
    Reply,
    /// Catch-all: the upstream log taxonomy is open-ended.
    OtherChatInteraction,
}

/// Which experiment arm served the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentArm {
    Treatment,
    Control,
}

/// One chat interaction from the event log. Logs may arrive unordered;
/// nothing here assumes timestamp monotonicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub event_kind: EventKind,
    pub experiment_arm: ExperimentArm,
}

#[derive(Debug, Error)]
pub enum EngagementError {
    #[error("growth gap undefined: control value must be positive, got {0}")]
    NonPositiveControl(f64),

    #[error("log contains no {0:?} events")]
    MissingArm(ExperimentArm),
}

/// Distinct users with at least one event.
pub fn chat_uv(events: &[InteractionEvent]) -> usize {
    events.iter().map(|e| e.user_id.as_str()).collect::<HashSet<_>>().len()
}

/// Total event count, not deduplicated.
pub fn chat_pv(events: &[InteractionEvent]) -> usize {
    events.len()
}

/// Relative change of the treatment value over the control value:
/// (A − B) / B.
pub fn growth_gap(treatment: f64, control: f64) -> Result<f64, EngagementError> {
    if control <= 0.0 {
        return Err(EngagementError::NonPositiveControl(control));
    }
    Ok((treatment - control) / control)
}

/// Growth gaps of both metrics between the two arms of one log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub treatment_uv: usize,
    pub treatment_pv: usize,
    pub control_uv: usize,
    pub control_pv: usize,
    pub uv_growth_gap: f64,
    pub pv_growth_gap: f64,
}

/// Split a log by arm and compare. Both arms must be present; a
/// one-armed log has no baseline to compare against.
pub fn arm_report(events: &[InteractionEvent]) -> Result<ArmReport, EngagementError> {
    let (treatment, control): (Vec<_>, Vec<_>) = events
        .iter()
        .cloned()
        .partition(|e| e.experiment_arm == ExperimentArm::Treatment);
    if treatment.is_empty() {
        return Err(EngagementError::MissingArm(ExperimentArm::Treatment));
    }
    if control.is_empty() {
        return Err(EngagementError::MissingArm(ExperimentArm::Control));
    }
    let treatment_uv = chat_uv(&treatment);
    let treatment_pv = chat_pv(&treatment);
    let control_uv = chat_uv(&control);
    let control_pv = chat_pv(&control);
    Ok(ArmReport {
        treatment_uv,
        treatment_pv,
        control_uv,
        control_pv,
        uv_growth_gap: growth_gap(treatment_uv as f64, control_uv as f64)?,
        pv_growth_gap: growth_gap(treatment_pv as f64, control_pv as f64)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn event(user: &str, arm: ExperimentArm) -> InteractionEvent {
        InteractionEvent {
            user_id: user.to_owned(),
            timestamp: 1_700_000_000_000,
            event_kind: EventKind::MessageSent,
            experiment_arm: arm,
        }
    }

    #[test]
    fn uv_deduplicates_and_pv_does_not() {
        let events = vec![
            event("u1", ExperimentArm::Treatment),
            event("u1", ExperimentArm::Treatment),
            event("u2", ExperimentArm::Treatment),
        ];
        assert_eq!(chat_uv(&events), 2);
        assert_eq!(chat_pv(&events), 3);
        assert_eq!(chat_uv(&[]), 0);
        assert_eq!(chat_pv(&[]), 0);

        let one_user: Vec<InteractionEvent> =
            (0..1000).map(|_| event("u1", ExperimentArm::Control)).collect();
        assert_eq!(chat_uv(&one_user), 1);
    }

    #[test]
    fn growth_gap_matches_hand_values() {
        assert_eq!(growth_gap(10681.0, 10000.0).unwrap(), 0.0681);
        assert_eq!(growth_gap(1234.0, 1234.0).unwrap(), 0.0);
        assert_eq!(growth_gap(900.0, 1000.0).unwrap(), -0.10);
        assert!(matches!(growth_gap(5.0, 0.0), Err(EngagementError::NonPositiveControl(_))));
    }

    #[test]
    fn arm_report_compares_both_arms() {
        let events = vec![
            event("t1", ExperimentArm::Treatment),
            event("t1", ExperimentArm::Treatment),
            event("t2", ExperimentArm::Treatment),
            event("c1", ExperimentArm::Control),
            event("c2", ExperimentArm::Control),
        ];
        let report = arm_report(&events).unwrap();
        assert_eq!(report.treatment_uv, 2);
        assert_eq!(report.treatment_pv, 3);
        assert_eq!(report.control_uv, 2);
        assert_eq!(report.control_pv, 2);
        assert_eq!(report.uv_growth_gap, 0.0);
        assert_eq!(report.pv_growth_gap, 0.5);
    }

    #[test]
    fn identical_arms_have_zero_gaps() {
        let events = vec![
            event("a", ExperimentArm::Treatment),
            event("b", ExperimentArm::Treatment),
            event("c", ExperimentArm::Control),
            event("d", ExperimentArm::Control),
        ];
        let report = arm_report(&events).unwrap();
        assert_eq!(report.uv_growth_gap, 0.0);
        assert_eq!(report.pv_growth_gap, 0.0);
    }

    #[test]
    fn one_armed_logs_are_rejected() {
        let treatment_only = vec![event("a", ExperimentArm::Treatment)];
        assert!(matches!(
            arm_report(&treatment_only),
            Err(EngagementError::MissingArm(ExperimentArm::Control))
        ));
        let control_only = vec![event("a", ExperimentArm::Control)];
        assert!(matches!(
            arm_report(&control_only),
            Err(EngagementError::MissingArm(ExperimentArm::Treatment))
        ));
        assert!(arm_report(&[]).is_err());
    }

    proptest! {
        #[test]
        fn uv_never_exceeds_pv(
            users in proptest::collection::vec("u[0-9]{1,3}", 0..200)
        ) {
            let events: Vec<InteractionEvent> =
                users.iter().map(|u| event(u, ExperimentArm::Treatment)).collect();
            prop_assert!(chat_uv(&events) <= chat_pv(&events));
        }

        #[test]
        fn uv_is_order_invariant_and_duplication_idempotent(
            users in proptest::collection::vec("u[0-9]{1,2}", 1..50),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let events: Vec<InteractionEvent> =
                users.iter().map(|u| event(u, ExperimentArm::Control)).collect();
            let mut shuffled = events.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(chat_uv(&events), chat_uv(&shuffled));

            let mut duplicated = events.clone();
            duplicated.push(events[0].clone());
            prop_assert_eq!(chat_uv(&duplicated), chat_uv(&events));
        }

        #[test]
        fn growth_gap_is_increasing_in_treatment(
            a in 0.0f64..10_000.0,
            delta in 0.001f64..1_000.0,
            b in 1.0f64..10_000.0,
        ) {
            prop_assert!(growth_gap(a + delta, b).unwrap() > growth_gap(a, b).unwrap());
        }
    }
}
