//! Simulated compute backend.
//!
//! Steps do no real work; they only cost simulated time according to the
//! linear cost model. Each member of an executed step gains a single token
//! (for a prefill member, that is its first output token).

use crate::config::CostModel;
use crate::types::{Cu, RequestId};
use thiserror::Error;

/// One schedulable unit of work.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepPlan {
    /// Batched prefill; `padded_tokens` is the bucket-padded token sum the
    /// step is charged for.
    Prefill { members: Vec<RequestId>, padded_tokens: usize },
    /// One decode iteration over the whole running batch; `total_context` is
    /// the summed context length of the members.
    Decode { members: Vec<RequestId>, total_context: usize },
}

impl StepPlan {
    pub fn members(&self) -> &[RequestId] {
        match self {
            StepPlan::Prefill { members, .. } | StepPlan::Decode { members, .. } => members,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StepPlan::Prefill { .. } => "prefill",
            StepPlan::Decode { .. } => "decode",
        }
    }
}

/// Result of executing a plan: when it finished and who got a token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub finish_time: Cu,
    /// Members that emitted one token, in plan order.
    pub emitted: Vec<RequestId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("expected a {expected} plan")]
    WrongKind { expected: &'static str },
    #[error("step plan has no members")]
    EmptyPlan,
    #[error("prefill plan charges zero padded tokens")]
    ZeroPaddedTokens,
}

/// `c_prefill_per_token * padded_tokens`.
pub fn prefill_step_cost(plan: &StepPlan, cm: &CostModel) -> Result<Cu, BackendError> {
    match plan {
        StepPlan::Prefill { members, padded_tokens } => {
            if members.is_empty() {
                return Err(BackendError::EmptyPlan);
            }
            if *padded_tokens == 0 {
                return Err(BackendError::ZeroPaddedTokens);
            }
            Ok(cm.c_prefill_per_token * *padded_tokens as u64)
        }
        StepPlan::Decode { .. } => Err(BackendError::WrongKind { expected: "prefill" }),
    }
}

/// `c_decode_fixed + c_decode_per_seq * members + c_decode_per_ctx * total_context`.
pub fn decode_step_cost(plan: &StepPlan, cm: &CostModel) -> Result<Cu, BackendError> {
    match plan {
        StepPlan::Decode { members, total_context } => {
            if members.is_empty() {
                return Err(BackendError::EmptyPlan);
            }
            Ok(cm.c_decode_fixed
                + cm.c_decode_per_seq * members.len() as u64
                + cm.c_decode_per_ctx * *total_context as u64)
        }
        StepPlan::Prefill { .. } => Err(BackendError::WrongKind { expected: "decode" }),
    }
}

pub fn step_cost(plan: &StepPlan, cm: &CostModel) -> Result<Cu, BackendError> {
    match plan {
        StepPlan::Prefill { .. } => prefill_step_cost(plan, cm),
        StepPlan::Decode { .. } => decode_step_cost(plan, cm),
    }
}

/// Runs the plan starting at `now`. The clock always advances by at least
/// 1 cu so a finish time can never collide with its start time, even under a
/// degenerate zero-cost model.
pub fn execute(plan: &StepPlan, cm: &CostModel, now: Cu) -> Result<StepOutcome, BackendError> {
    let cost = step_cost(plan, cm)?;
    Ok(StepOutcome { finish_time: now + cost.max(1), emitted: plan.members().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prefill_cost_is_linear_in_padded_tokens() {
        let cm = CostModel::default();
        let plan = StepPlan::Prefill { members: vec![0, 1], padded_tokens: 256 };
        assert_eq!(prefill_step_cost(&plan, &cm).unwrap(), 256);
    }

    #[test]
    fn decode_cost_matches_the_contract() {
        let cm = CostModel::default();
        let two = StepPlan::Decode { members: vec![0, 1], total_context: 210 };
        assert_eq!(decode_step_cost(&two, &cm).unwrap(), 52);
        let one = StepPlan::Decode { members: vec![0], total_context: 105 };
        assert_eq!(decode_step_cost(&one, &cm).unwrap(), 51);
    }

    #[test]
    fn per_context_coefficient_contributes() {
        let cm = CostModel { c_decode_per_ctx: 1, ..CostModel::default() };
        let plan = StepPlan::Decode { members: vec![0, 1], total_context: 254 };
        // 50 + 2*1 + 254*1
        assert_eq!(decode_step_cost(&plan, &cm).unwrap(), 306);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let cm = CostModel::default();
        let prefill = StepPlan::Prefill { members: vec![0], padded_tokens: 128 };
        let decode = StepPlan::Decode { members: vec![0], total_context: 10 };
        assert_eq!(
            prefill_step_cost(&decode, &cm).unwrap_err(),
            BackendError::WrongKind { expected: "prefill" }
        );
        assert_eq!(
            decode_step_cost(&prefill, &cm).unwrap_err(),
            BackendError::WrongKind { expected: "decode" }
        );
    }

    #[test]
    fn empty_plans_are_rejected() {
        let cm = CostModel::default();
        let p = StepPlan::Prefill { members: vec![], padded_tokens: 128 };
        assert_eq!(prefill_step_cost(&p, &cm).unwrap_err(), BackendError::EmptyPlan);
        let d = StepPlan::Decode { members: vec![], total_context: 0 };
        assert_eq!(decode_step_cost(&d, &cm).unwrap_err(), BackendError::EmptyPlan);
        let z = StepPlan::Prefill { members: vec![0], padded_tokens: 0 };
        assert_eq!(prefill_step_cost(&z, &cm).unwrap_err(), BackendError::ZeroPaddedTokens);
    }

    #[test]
    fn execute_advances_the_clock_and_emits_one_token_per_member() {
        let cm = CostModel::default();
        let plan = StepPlan::Decode { members: vec![3, 1, 2], total_context: 30 };
        let out = execute(&plan, &cm, 1000).unwrap();
        assert_eq!(out.finish_time, 1053);
        assert_eq!(out.emitted, vec![3, 1, 2]);
    }

    #[test]
    fn execute_never_stalls_even_with_zero_cost() {
        let cm = CostModel {
            c_prefill_per_token: 0,
            c_decode_fixed: 1,
            c_decode_per_seq: 0,
            c_decode_per_ctx: 0,
        };
        let plan = StepPlan::Prefill { members: vec![0], padded_tokens: 128 };
        let out = execute(&plan, &cm, 500).unwrap();
        assert_eq!(out.finish_time, 501);
    }

    proptest! {
        /// Linearity: cost of a merged prefill equals the sum of parts (the
        /// fixed-free prefill law the scheduler relies on).
        #[test]
        fn prefill_cost_is_additive(a in 1usize..10_000, b in 1usize..10_000, c in 0u64..50) {
            let cm = CostModel { c_prefill_per_token: c, ..CostModel::default() };
            let pa = StepPlan::Prefill { members: vec![0], padded_tokens: a };
            let pb = StepPlan::Prefill { members: vec![1], padded_tokens: b };
            let pab = StepPlan::Prefill { members: vec![0, 1], padded_tokens: a + b };
            prop_assert_eq!(
                prefill_step_cost(&pab, &cm).unwrap(),
                prefill_step_cost(&pa, &cm).unwrap() + prefill_step_cost(&pb, &cm).unwrap()
            );
        }

        /// Decode cost grows monotonically with batch size and context.
        #[test]
        fn decode_cost_is_monotone(
            n in 1usize..64, extra in 1usize..8, ctx in 0usize..4096, dctx in 1usize..512,
        ) {
            let cm = CostModel { c_decode_per_ctx: 2, ..CostModel::default() };
            let base = StepPlan::Decode { members: (0..n as u64).collect(), total_context: ctx };
            let wider = StepPlan::Decode { members: (0..(n + extra) as u64).collect(), total_context: ctx };
            let deeper = StepPlan::Decode { members: (0..n as u64).collect(), total_context: ctx + dctx };
            let c0 = decode_step_cost(&base, &cm).unwrap();
            prop_assert!(decode_step_cost(&wider, &cm).unwrap() > c0);
            prop_assert!(decode_step_cost(&deeper, &cm).unwrap() > c0);
        }

        /// finish_time always lands strictly after `now`.
        #[test]
        fn finish_time_is_strictly_later(now in 0u64..1_000_000, padded in 1usize..8192) {
            let cm = CostModel { c_prefill_per_token: 0, ..CostModel::default() };
            let plan = StepPlan::Prefill { members: vec![0], padded_tokens: padded };
            prop_assert!(execute(&plan, &cm, now).unwrap().finish_time > now);
        }
    }
}
