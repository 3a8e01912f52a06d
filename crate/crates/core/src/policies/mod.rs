//! Decision policies and their validation oracles.
//!
//! Naive and Myopic control share one greedy rule (per-transaction argmax of
//! the expected-reward triple) and differ only in where the g-table comes
//! from: mature estimates for Naive, current-environment inference for
//! Myopic. Prospective control adds a discounted reference future profit
//! that depends on the running chargeback-rate estimate.

mod mdp;
mod oracle;
mod prospective;

pub use mdp::{fraud_toy_mdp, value_iteration, ToyMdp, ToySpec, ValueIteration, TOY_ACTIONS};
pub use oracle::{brute_force_policy, BatchObjective, GreedyObjective, ProspectiveObjective, MAX_BRUTE_FORCE};
pub use prospective::{
    delta_at_rate, delta_reference, prospective_rewards, rgh_decide, rho_tau, ProspectiveRewards, ProspectiveState,
};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::{reward_triple, CostParams, Decision, GTable, RewardTriple, Transaction};

/// Static score thresholds: approve below `low`, reject above `high`, review between.
pub fn baseline_decide(w: &Transaction, low: u32, high: u32) -> Result<Decision> {
    if low > high {
        return Err(config_err("baseline thresholds need low <= high"));
    }
    Ok(if w.score < low {
        Decision::Approve
    } else if w.score > high {
        Decision::Reject
    } else {
        Decision::Review
    })
}

pub fn naive_decide(w: &Transaction, g_mature: &GTable, costs: &CostParams) -> Result<Decision> {
    Ok(reward_triple(w, g_mature, costs)?.best())
}

pub fn myopic_decide(w: &Transaction, g_current: &GTable, costs: &CostParams) -> Result<Decision> {
    Ok(reward_triple(w, g_current, costs)?.best())
}

/// Greedy decisions for a batch; the value is the sum of chosen rewards in order.
pub fn greedy_batch(batch: &[Transaction], g: &GTable, costs: &CostParams) -> Result<(Vec<Decision>, f64)> {
    let mut value = 0.0;
    let mut actions = Vec::with_capacity(batch.len());
    for w in batch {
        let t = reward_triple(w, g, costs)?;
        let d = t.best();
        value += t.get(d);
        actions.push(d);
    }
    Ok((actions, value))
}

/// Prospective values that justified a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProspectiveTrace {
    pub values: [f64; 3],
    pub deltas: [f64; 3],
}

/// One row of the decision log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecisionRecord {
    pub transaction_id: u64,
    pub decision: Decision,
    pub rewards: RewardTriple,
    pub prospective: Option<ProspectiveTrace>,
}

impl PolicyDecisionRecord {
    /// The values the decision maximised.
    pub fn deciding_values(&self) -> [f64; 3] {
        self.prospective.map_or(self.rewards.as_array(), |p| p.values)
    }
}
