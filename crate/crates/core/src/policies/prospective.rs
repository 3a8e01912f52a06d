//! Prospective control with the real-time greedy heuristic (RGH).
//!
//! Within a period the state keeps a running estimate of the period's
//! chargeback rate,
//!
//! ```text
//! ρ̂ = (Σ ĝ_auth_fraud(s_j)·[a_j = app] + Σ ĝ_review_fraud(s_j)·[a_j = rev]) / #{a_j ≠ rej}
//! ```
//!
//! and for each candidate action on the next transaction asks the
//! future-environment model what the g-table `l` periods ahead looks like at
//! the resulting rate. The reference future profit Δ is the best achievable
//! expected profit of a bootstrapped reference sample under that table;
//! per transaction it enters as `(λ / reference_size) · Δ`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::inference::RateResponse;
use crate::model::{argmax_decision, cell_rewards, reward_triple, CostParams, Decision, GTable, RewardTriple, Transaction};

/// Per-period running state of one prospective decision stream.
#[derive(Debug, Clone)]
pub struct ProspectiveState {
    current: GTable,
    future: RateResponse,
    rate_free: bool,
    reference: Vec<Transaction>,
    lambda: f64,
    fallback_rate: f64,
    fraud_mass: f64,
    submitted: u32,
    history: Vec<(u32, Decision)>,
    /// Δ at the current running rate.
    cached_delta: Option<f64>,
}

impl ProspectiveState {
    /// Starts a period. Without a fitted future model the future table is
    /// the current one, which makes Δ independent of the action.
    pub fn new(
        current: GTable,
        future: Option<RateResponse>,
        reference: Vec<Transaction>,
        lambda: f64,
        fallback_rate: f64,
    ) -> Result<Self> {
        if reference.is_empty() {
            return Err(config_err("prospective control needs a non-empty reference sample"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(config_err("future discount must lie in [0, 1]"));
        }
        let future = future.unwrap_or_else(|| RateResponse::constant(&current));
        if future.max_score() != current.max_score() {
            return Err(config_err("future model support differs from current table"));
        }
        if let Some(w) = reference.iter().find(|w| w.score > current.max_score()) {
            return Err(crate::error::Error::ScoreOutOfRange { score: w.score, max_score: current.max_score() });
        }
        let rate_free = future.is_rate_free();
        Ok(Self {
            current,
            future,
            rate_free,
            reference,
            lambda,
            fallback_rate,
            fraud_mass: 0.0,
            submitted: 0,
            history: Vec::new(),
            cached_delta: None,
        })
    }

    pub fn current(&self) -> &GTable {
        &self.current
    }

    pub fn future(&self) -> &RateResponse {
        &self.future
    }

    pub fn reference(&self) -> &[Transaction] {
        &self.reference
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn fallback_rate(&self) -> f64 {
        self.fallback_rate
    }

    pub fn reference_size(&self) -> usize {
        self.reference.len()
    }

    pub fn history(&self) -> &[(u32, Decision)] {
        &self.history
    }

    /// Running sums `(fraud mass, non-rejected count)`.
    pub fn running_sums(&self) -> (f64, u32) {
        (self.fraud_mass, self.submitted)
    }

    /// The same sums rebuilt from the decision history.
    pub fn recompute_sums(&self) -> (f64, u32) {
        let mut mass = 0.0;
        let mut n = 0;
        for &(s, d) in &self.history {
            mass += fraud_contribution(&self.current, s, d);
            if d != Decision::Reject {
                n += 1;
            }
        }
        (mass, n)
    }

    /// Current chargeback-rate estimate, or the fallback before any submission.
    pub fn rate(&self) -> f64 {
        if self.submitted == 0 {
            self.fallback_rate
        } else {
            self.fraud_mass / f64::from(self.submitted)
        }
    }

    fn commit(&mut self, w: &Transaction, d: Decision, delta_after: f64) {
        self.fraud_mass += fraud_contribution(&self.current, w.score, d);
        if d != Decision::Reject {
            self.submitted += 1;
        }
        self.history.push((w.score, d));
        self.cached_delta = Some(delta_after);
    }
}

fn fraud_contribution(g: &GTable, score: u32, d: Decision) -> f64 {
    let c = &g.cells()[score as usize];
    match d {
        Decision::Approve => c.auth_fraud,
        Decision::Review => c.review_fraud,
        Decision::Reject => 0.0,
    }
}

/// Rate estimate if action `a` is taken on `w_next`.
pub fn rho_tau(state: &ProspectiveState, w_next: &Transaction, a: Decision) -> Result<f64> {
    state.current.cell(w_next.score)?;
    let n = state.submitted + u32::from(a != Decision::Reject);
    if n == 0 {
        return Ok(state.fallback_rate);
    }
    Ok((state.fraud_mass + fraud_contribution(&state.current, w_next.score, a)) / f64::from(n))
}

/// Σ over the reference sample of the best expected reward under `g_future`.
pub fn delta_reference(reference: &[Transaction], g_future: &GTable, costs: &CostParams) -> Result<f64> {
    if reference.is_empty() {
        return Err(config_err("reference sample is empty"));
    }
    let mut total = 0.0;
    for w in reference {
        total += reward_triple(w, g_future, costs)?.max();
    }
    Ok(total)
}

/// [`delta_reference`] against the future table at `rate`, without
/// materialising the table.
pub fn delta_at_rate(reference: &[Transaction], future: &RateResponse, rate: f64, costs: &CostParams) -> f64 {
    reference
        .iter()
        .map(|w| cell_rewards(&future.cell(w.score, rate), w.margin, w.cost, costs.review_cost).max())
        .sum()
}

/// Everything the heuristic looked at for one transaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProspectiveRewards {
    pub immediate: RewardTriple,
    pub rates: [f64; 3],
    pub deltas: [f64; 3],
    pub values: [f64; 3],
}

pub fn prospective_rewards(state: &ProspectiveState, w: &Transaction, costs: &CostParams) -> Result<ProspectiveRewards> {
    let immediate = reward_triple(w, &state.current, costs)?;
    let mut rates = [0.0; 3];
    let mut deltas = [0.0; 3];
    let shared = if state.rate_free { state.cached_delta } else { None };
    for a in Decision::ALL {
        let i = a.index();
        rates[i] = rho_tau(state, w, a)?;
        deltas[i] = match (a, shared, state.cached_delta) {
            (_, Some(d), _) => d,
            (Decision::Reject, _, Some(d)) => d,
            _ => delta_at_rate(&state.reference, &state.future, rates[i], costs),
        };
    }
    let weight = state.lambda / state.reference.len() as f64;
    let im = immediate.as_array();
    let values = [im[0] + weight * deltas[0], im[1] + weight * deltas[1], im[2] + weight * deltas[2]];
    Ok(ProspectiveRewards { immediate, rates, deltas, values })
}

/// Decides `w` by the largest prospective reward and folds the decision
/// into the running rate estimate.
pub fn rgh_decide(state: &mut ProspectiveState, w: &Transaction, costs: &CostParams) -> Result<(Decision, ProspectiveRewards)> {
    let r = prospective_rewards(state, w, costs)?;
    let d = argmax_decision(r.values);
    state.commit(w, d, r.deltas[d.index()]);
    Ok((d, r))
}
