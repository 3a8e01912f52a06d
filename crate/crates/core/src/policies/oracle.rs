//! Exhaustive enumeration of per-period action sequences.

use alloc::vec;
use alloc::vec::Vec;

use super::prospective::{delta_at_rate, ProspectiveState};
use crate::error::{Error, Result};
use crate::inference::RateResponse;
use crate::model::{reward_triple, CostParams, Decision, GTable, Transaction};

/// Enumeration is limited to 3^8 sequences.
pub const MAX_BRUTE_FORCE: usize = 8;

/// A per-period objective over whole action sequences.
pub trait BatchObjective {
    fn value(&self, batch: &[Transaction], actions: &[Decision]) -> Result<f64>;
}

/// Sum of expected rewards under one g-table (the Naive and Myopic objective).
#[derive(Debug, Clone, Copy)]
pub struct GreedyObjective<'a> {
    pub table: &'a GTable,
    pub costs: &'a CostParams,
}

impl BatchObjective for GreedyObjective<'_> {
    fn value(&self, batch: &[Transaction], actions: &[Decision]) -> Result<f64> {
        let mut v = 0.0;
        for (w, &a) in batch.iter().zip(actions) {
            v += reward_triple(w, self.table, self.costs)?.get(a);
        }
        Ok(v)
    }
}

/// Expected rewards under the current table plus the weighted reference
/// future profit at the period's end-of-batch chargeback-rate estimate.
///
/// The weight defaults to `λ / reference_size`, the per-transaction scaling
/// under which the real-time heuristic's per-step choice is a greedy step on
/// this objective.
#[derive(Debug, Clone, Copy)]
pub struct ProspectiveObjective<'a> {
    pub current: &'a GTable,
    pub future: &'a RateResponse,
    pub reference: &'a [Transaction],
    pub future_weight: f64,
    pub fallback_rate: f64,
    pub costs: &'a CostParams,
}

impl<'a> ProspectiveObjective<'a> {
    /// Objective matching a freshly started prospective state.
    pub fn for_state(state: &'a ProspectiveState, costs: &'a CostParams) -> Self {
        Self {
            current: state.current(),
            future: state.future(),
            reference: state.reference(),
            future_weight: state.lambda() / state.reference_size() as f64,
            fallback_rate: state.fallback_rate(),
            costs,
        }
    }

    /// Chargeback-rate estimate after deciding the whole batch.
    pub fn batch_rate(&self, batch: &[Transaction], actions: &[Decision]) -> Result<f64> {
        let mut mass = 0.0;
        let mut n = 0u32;
        for (w, &a) in batch.iter().zip(actions) {
            let c = self.current.cell(w.score)?;
            match a {
                Decision::Approve => mass += c.auth_fraud,
                Decision::Review => mass += c.review_fraud,
                Decision::Reject => continue,
            }
            n += 1;
        }
        Ok(if n == 0 { self.fallback_rate } else { mass / f64::from(n) })
    }
}

impl BatchObjective for ProspectiveObjective<'_> {
    fn value(&self, batch: &[Transaction], actions: &[Decision]) -> Result<f64> {
        let immediate = GreedyObjective { table: self.current, costs: self.costs }.value(batch, actions)?;
        let rate = self.batch_rate(batch, actions)?;
        Ok(immediate + self.future_weight * delta_at_rate(self.reference, self.future, rate, self.costs))
    }
}

/// Exact maximiser over all 3^N sequences.
///
/// Sequences are visited with Reject ≺ Review ≺ Approve at every position
/// (first position most significant) and only a strictly better value
/// replaces the incumbent, so among tied optima the most conservative
/// sequence wins, matching the greedy tie-break.
pub fn brute_force_policy(batch: &[Transaction], objective: &impl BatchObjective) -> Result<(Vec<Decision>, f64)> {
    const ORDER: [Decision; 3] = [Decision::Reject, Decision::Review, Decision::Approve];
    let n = batch.len();
    if n > MAX_BRUTE_FORCE {
        return Err(Error::BatchTooLarge { size: n, limit: MAX_BRUTE_FORCE });
    }
    let total = 3usize.pow(n as u32);
    let mut actions = vec![Decision::Reject; n];
    let mut best: Option<(Vec<Decision>, f64)> = None;
    for code in 0..total {
        let mut rest = code;
        for pos in (0..n).rev() {
            actions[pos] = ORDER[rest % 3];
            rest /= 3;
        }
        let v = objective.value(batch, &actions)?;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((actions.clone(), v));
        }
    }
    Ok(best.expect("at least the empty sequence"))
}
