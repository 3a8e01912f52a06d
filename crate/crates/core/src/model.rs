//! Shared domain types and the expected-reward calculus.
//!
//! A transaction is summarised by its integer risk score `s`, its margin `m`
//! and its cost `c` (goods plus chargeback fees). Everything downstream of
//! the engine (bank authorisation, manual review, fraud status) is described
//! by five conditional probabilities given `s`, held in a [`GTable`]:
//!
//! | field           | event given `s`                               |
//! |-----------------|-----------------------------------------------|
//! | `auth_legit`    | bank authorises and the transaction is legit  |
//! | `auth_fraud`    | bank authorises and the transaction is fraud  |
//! | `review_legit`  | bank authorises, MR approves, legit           |
//! | `review_fraud`  | bank authorises, MR approves, fraud           |
//! | `auth`          | bank authorises                               |

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Default upper bound of the risk-score support.
pub const DEFAULT_MAX_SCORE: u32 = 1000;

/// Absolute tolerance for probability and currency comparisons.
pub const TOLERANCE: f64 = 1e-9;

/// One purchase request as seen by the decision engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub score: u32,
    pub margin: f64,
    pub cost: f64,
    pub period: u32,
    pub arrival_index: u32,
}

impl Transaction {
    pub fn new(id: u64, score: u32, margin: f64, cost: f64, period: u32, arrival_index: u32) -> Result<Self> {
        if !(cost >= 0.0) || !cost.is_finite() {
            return Err(config_err("transaction cost must be finite and non-negative"));
        }
        if !margin.is_finite() {
            return Err(config_err("transaction margin must be finite"));
        }
        Ok(Self { id, score, margin, cost, period, arrival_index })
    }

    /// Stable id derived from the period and arrival position.
    pub fn make_id(period: u32, arrival_index: u32) -> u64 {
        (u64::from(period) << 32) | u64::from(arrival_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Review,
    Reject,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::Approve, Decision::Review, Decision::Reject];

    pub fn index(self) -> usize {
        match self {
            Decision::Approve => 0,
            Decision::Review => 1,
            Decision::Reject => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Review => "review",
            Decision::Reject => "reject",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Picks the action with the largest value.
///
/// Ties go Reject ≻ Review ≻ Approve: an action only displaces a more
/// conservative one when it is strictly better.
pub fn argmax_decision(values: [f64; 3]) -> Decision {
    let mut best = Decision::Reject;
    let mut best_value = values[Decision::Reject.index()];
    for d in [Decision::Review, Decision::Approve] {
        let v = values[d.index()];
        if v > best_value {
            best = d;
            best_value = v;
        }
    }
    best
}

/// The five event probabilities at a single score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GCell {
    pub auth_legit: f64,
    pub auth_fraud: f64,
    pub review_legit: f64,
    pub review_fraud: f64,
    pub auth: f64,
}

impl GCell {
    pub const LEN: usize = 5;

    pub fn from_array(v: [f64; 5]) -> Self {
        Self { auth_legit: v[0], auth_fraud: v[1], review_legit: v[2], review_fraud: v[3], auth: v[4] }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.auth_legit, self.auth_fraud, self.review_legit, self.review_fraud, self.auth]
    }

    /// Clamps into [0, 1] and restores the subset laws.
    ///
    /// review_legit ≤ auth_legit, review_fraud ≤ auth_fraud, then the review
    /// pair is rescaled under `auth` and the approve pair under 1.
    pub fn project_coherent(self) -> Self {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        let mut g = GCell::from_array(self.to_array().map(c));
        let approve_mass = g.auth_legit + g.auth_fraud;
        if approve_mass > 1.0 {
            g.auth_legit /= approve_mass;
            g.auth_fraud /= approve_mass;
        }
        g.review_legit = g.review_legit.min(g.auth_legit);
        g.review_fraud = g.review_fraud.min(g.auth_fraud);
        let review_mass = g.review_legit + g.review_fraud;
        if review_mass > g.auth {
            let k = if review_mass > 0.0 { g.auth / review_mass } else { 0.0 };
            g.review_legit *= k;
            g.review_fraud *= k;
        }
        g
    }
}

/// Event probabilities over the whole score support for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTable {
    pub period: u32,
    cells: Vec<GCell>,
}

impl GTable {
    pub fn zeros(max_score: u32, period: u32) -> Self {
        Self { period, cells: vec![GCell::default(); max_score as usize + 1] }
    }

    pub fn constant(max_score: u32, period: u32, cell: GCell) -> Self {
        Self { period, cells: vec![cell; max_score as usize + 1] }
    }

    pub fn from_cells(period: u32, cells: Vec<GCell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(config_err("g-table needs at least one score"));
        }
        Ok(Self { period, cells })
    }

    pub fn max_score(&self) -> u32 {
        (self.cells.len() - 1) as u32
    }

    pub fn cells(&self) -> &[GCell] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [GCell] {
        &mut self.cells
    }

    pub fn cell(&self, score: u32) -> Result<&GCell> {
        self.cells
            .get(score as usize)
            .ok_or(Error::ScoreOutOfRange { score, max_score: self.max_score() })
    }

    pub fn set(&mut self, score: u32, cell: GCell) -> Result<()> {
        let max_score = self.max_score();
        let slot = self.cells.get_mut(score as usize).ok_or(Error::ScoreOutOfRange { score, max_score })?;
        *slot = cell;
        Ok(())
    }

    pub fn project_coherent(&mut self) {
        for c in &mut self.cells {
            *c = c.project_coherent();
        }
    }
}

/// Cost and horizon parameters shared by every policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    /// Labour cost of one manual review.
    pub review_cost: f64,
    /// Periods until every chargeback of a period has occurred.
    pub maturity_horizon: u32,
    /// Lag of the partially mature chargeback rate the bank and MR react to.
    pub partial_lag: u32,
    /// Weight of the reference future profit in prospective rewards.
    pub future_discount: f64,
    /// Discount of the perfect-information Bellman model.
    pub bellman_discount: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { review_cost: 5.0, maturity_horizon: 12, partial_lag: 2, future_discount: 0.12, bellman_discount: 0.9 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.review_cost >= 0.0) || !self.review_cost.is_finite() {
            return Err(config_err("review_cost must be finite and >= 0"));
        }
        if !(0 < self.partial_lag && self.partial_lag < self.maturity_horizon) {
            return Err(config_err("need 0 < partial_lag < maturity_horizon"));
        }
        if !(0.0..=1.0).contains(&self.future_discount) {
            return Err(config_err("future_discount must lie in [0, 1]"));
        }
        if !(self.bellman_discount > 0.0 && self.bellman_discount < 1.0) {
            return Err(config_err("bellman_discount must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Expected profit of each action for one transaction. `reject` is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTriple {
    pub approve: f64,
    pub review: f64,
    pub reject: f64,
}

impl RewardTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.approve, self.review, self.reject]
    }

    pub fn get(&self, d: Decision) -> f64 {
        self.as_array()[d.index()]
    }

    pub fn best(&self) -> Decision {
        argmax_decision(self.as_array())
    }

    pub fn max(&self) -> f64 {
        self.get(self.best())
    }
}

/// Reward triple from a single cell, skipping the score lookup.
#[inline]
pub fn cell_rewards(g: &GCell, margin: f64, cost: f64, review_cost: f64) -> RewardTriple {
    RewardTriple {
        approve: g.auth_legit * margin - g.auth_fraud * cost,
        review: g.review_legit * margin - g.review_fraud * cost - g.auth * review_cost,
        reject: 0.0,
    }
}

pub fn expected_reward(w: &Transaction, g: &GTable, costs: &CostParams, a: Decision) -> Result<f64> {
    Ok(reward_triple(w, g, costs)?.get(a))
}

pub fn reward_triple(w: &Transaction, g: &GTable, costs: &CostParams) -> Result<RewardTriple> {
    let cell = g.cell(w.score)?;
    Ok(cell_rewards(cell, w.margin, w.cost, costs.review_cost))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GRule {
    /// Every probability lies in [0, 1].
    UnitRange,
    /// review_legit ≤ auth_legit.
    ReviewLegitSubset,
    /// review_fraud ≤ auth_fraud.
    ReviewFraudSubset,
    /// review_legit + review_fraud ≤ auth.
    ReviewUnderAuth,
    /// auth_legit + auth_fraud ≤ 1.
    ApproveMass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GViolation {
    pub score: u32,
    pub rule: GRule,
    pub cell: GCell,
}

/// Lists every broken table invariant. An empty result means the table is coherent.
pub fn validate_gtable(g: &GTable) -> Vec<GViolation> {
    let mut out = Vec::new();
    for (s, cell) in g.cells.iter().enumerate() {
        let score = s as u32;
        let mut push = |rule| out.push(GViolation { score, rule, cell: *cell });
        if cell.to_array().iter().any(|&p| !(-TOLERANCE..=1.0 + TOLERANCE).contains(&p)) {
            push(GRule::UnitRange);
        }
        if cell.review_legit > cell.auth_legit + TOLERANCE {
            push(GRule::ReviewLegitSubset);
        }
        if cell.review_fraud > cell.auth_fraud + TOLERANCE {
            push(GRule::ReviewFraudSubset);
        }
        if cell.review_legit + cell.review_fraud > cell.auth + TOLERANCE {
            push(GRule::ReviewUnderAuth);
        }
        if cell.auth_legit + cell.auth_fraud > 1.0 + TOLERANCE {
            push(GRule::ApproveMass);
        }
    }
    out
}
