//! Perfect-information control at desk scale: an explicit finite MDP and
//! value iteration on its Bellman equation
//! `u(S) = max_a { r(S, a) + α Σ_S' Q_{S,S'}(a) u(S') }`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_rewards, Decision, GCell};
use crate::sim::{EnvModel, FeedbackInputs};

/// Finite MDP with `rewards[state][action]` and `transitions[action][state][next]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMdp {
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
}

impl ToyMdp {
    pub fn states(&self) -> usize {
        self.rewards.len()
    }

    pub fn actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.states(), self.actions());
        if n == 0 || k == 0 {
            return Err(Error::Model("MDP needs at least one state and one action".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Model("discount must lie in (0, 1)".into()));
        }
        for (s, row) in self.rewards.iter().enumerate() {
            if row.len() != k || row.iter().any(|r| !r.is_finite()) {
                return Err(Error::Model(format!("reward row {s} must hold {k} finite values")));
            }
        }
        for (a, q) in self.transitions.iter().enumerate() {
            if q.len() != n {
                return Err(Error::Model(format!("transition matrix {a} must have {n} rows")));
            }
            for (s, row) in q.iter().enumerate() {
                if row.len() != n || row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Model(format!("Q({a}) row {s} is not a probability vector")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Model(format!("Q({a}) row {s} sums to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// One Bellman backup: returns the new values and a greedy policy.
    ///
    /// Ties keep the lowest action index.
    pub fn backup(&self, u: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let n = self.states();
        let mut next = vec![0.0; n];
        let mut policy = vec![0; n];
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..self.actions() {
                let future: f64 = self.transitions[a][s].iter().zip(u).map(|(p, v)| p * v).sum();
                let q = self.rewards[s][a] + self.discount * future;
                if q > best {
                    best = q;
                    policy[s] = a;
                }
            }
            next[s] = best;
        }
        (next, policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
    /// Sup-norm change of every sweep.
    pub residuals: Vec<f64>,
}

const MAX_SWEEPS: usize = 1_000_000;

/// Iterates Bellman backups from `init` (zeros when `None`) until the
/// returned values are within `tol` of the fixed point in sup norm, i.e.
/// until `α/(1−α)·‖u_k − u_{k−1}‖ < tol`.
pub fn value_iteration(mdp: &ToyMdp, tol: f64, init: Option<&[f64]>) -> Result<ValueIteration> {
    mdp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Model("tolerance must be positive".into()));
    }
    let mut u = match init {
        Some(v) if v.len() == mdp.states() => v.to_vec(),
        Some(_) => return Err(Error::Model("initial value vector has the wrong length".into())),
        None => vec![0.0; mdp.states()],
    };
    let a = mdp.discount;
    let stop = tol * (1.0 - a) / a;
    let mut residuals = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let (next, policy) = mdp.backup(&u);
        let diff = next.iter().zip(&u).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
        residuals.push(diff);
        u = next;
        if diff < stop {
            return Ok(ValueIteration { values: u, policy, iterations: sweep, residuals });
        }
    }
    Err(Error::Model("value iteration did not converge".into()))
}

/// Coarse fraud-control world: a single transaction per period whose score
/// is one of a few reduced scores, with the bank's tightness quantised to a
/// few levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// Reduced score grid.
    pub scores: Vec<u32>,
    /// Arrival weight of each reduced score.
    pub score_weights: Vec<f64>,
    /// Partially mature chargeback rate represented by each tightness level.
    pub level_rates: Vec<f64>,
    pub margin: f64,
    pub cost: f64,
    pub review_cost: f64,
    pub discount: f64,
    /// Probability of tightening per unit of expected chargeback
    /// probability the action submits.
    pub tighten_gain: f64,
}

impl ToySpec {
    pub fn desk_default(discount: f64) -> Self {
        Self {
            scores: vec![700, 900],
            score_weights: vec![0.7, 0.3],
            level_rates: vec![0.0, 0.004, 0.008],
            margin: 20.0,
            cost: 125.0,
            review_cost: 5.0,
            discount,
            tighten_gain: 4.0,
        }
    }
}

/// Action order of [`fraud_toy_mdp`]: conservative first, so the
/// lowest-index tie-break of value iteration matches the engine's.
pub const TOY_ACTIONS: [Decision; 3] = [Decision::Reject, Decision::Review, Decision::Approve];

/// State `level · |scores| + score_index`.
pub fn fraud_toy_mdp(model: &EnvModel, spec: &ToySpec) -> Result<(ToyMdp, Vec<Vec<GCell>>)> {
    let (ns, nq) = (spec.scores.len(), spec.level_rates.len());
    if ns == 0 || nq == 0 || spec.score_weights.len() != ns {
        return Err(Error::Model("toy spec needs matching, non-empty score and level grids".into()));
    }
    let wsum: f64 = spec.score_weights.iter().sum();
    if !(wsum > 0.0) || spec.score_weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Model("score weights must be non-negative with positive mass".into()));
    }
    let share = model.config().review.initial_fraud_share;
    let cells: Vec<Vec<GCell>> = spec
        .level_rates
        .iter()
        .map(|&rate| {
            let table = model.gtable_for(&FeedbackInputs { partial_rate: rate, review_fraud_share: share }, 0);
            spec.scores.iter().map(|&s| table.cells()[s as usize]).collect()
        })
        .collect();
    let n = ns * nq;
    let mut rewards = vec![vec![0.0; TOY_ACTIONS.len()]; n];
    let mut transitions = vec![vec![vec![0.0; n]; n]; TOY_ACTIONS.len()];
    for q in 0..nq {
        for i in 0..ns {
            let s = q * ns + i;
            let c = &cells[q][i];
            let triple = cell_rewards(c, spec.margin, spec.cost, spec.review_cost);
            for (a, d) in TOY_ACTIONS.iter().enumerate() {
                rewards[s][a] = triple.get(*d);
                let fraud = match d {
                    Decision::Approve => c.auth_fraud,
                    Decision::Review => c.review_fraud,
                    Decision::Reject => 0.0,
                };
                let up = (spec.tighten_gain * fraud).clamp(0.0, 1.0);
                let (hi, lo) = ((q + 1).min(nq - 1), q.saturating_sub(1));
                for (j, w) in spec.score_weights.iter().enumerate() {
                    let w = w / wsum;
                    transitions[a][s][hi * ns + j] += up * w;
                    transitions[a][s][lo * ns + j] += (1.0 - up) * w;
                }
            }
        }
    }
    let mdp = ToyMdp { rewards, transitions, discount: spec.discount };
    mdp.validate()?;
    Ok((mdp, cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::argmax_decision;
    use crate::sim::EnvConfig;

    #[test]
    fn single_state_geometric_series() {
        let mdp = ToyMdp { rewards: vec![vec![3.0]], transitions: vec![vec![vec![1.0]]], discount: 0.9 };
        let vi = value_iteration(&mdp, 1e-12, None).unwrap();
        assert!((vi.values[0] - 30.0).abs() < 1e-9);
    }

    // Exact value of a fixed stationary policy: (I - αP_π) u = r_π.
    fn policy_value(mdp: &ToyMdp, policy: &[usize]) -> Vec<f64> {
        let n = mdp.states();
        let a = nalgebra::DMatrix::from_fn(n, n, |s, t| {
            let id = if s == t { 1.0 } else { 0.0 };
            id - mdp.discount * mdp.transitions[policy[s]][s][t]
        });
        let r = nalgebra::DVector::from_fn(n, |s, _| mdp.rewards[s][policy[s]]);
        a.lu().solve(&r).unwrap().iter().copied().collect()
    }

    fn two_state() -> ToyMdp {
        ToyMdp {
            rewards: vec![vec![1.0, 2.0], vec![0.0, -1.0]],
            transitions: vec![
                vec![vec![0.9, 0.1], vec![0.8, 0.2]],
                vec![vec![0.2, 0.8], vec![0.1, 0.9]],
            ],
            discount: 0.8,
        }
    }

    #[test]
    fn two_state_matches_best_policy_by_linear_solve() {
        let mdp = two_state();
        let vi = value_iteration(&mdp, 1e-12, None).unwrap();
        let mut best = vec![f64::NEG_INFINITY; 2];
        for p0 in 0..2 {
            for p1 in 0..2 {
                let u = policy_value(&mdp, &[p0, p1]);
                for s in 0..2 {
                    best[s] = best[s].max(u[s]);
                }
            }
        }
        for s in 0..2 {
            assert!((vi.values[s] - best[s]).abs() < 1e-9, "state {s}: {} vs {}", vi.values[s], best[s]);
        }
        let exact = policy_value(&mdp, &vi.policy);
        assert!(exact.iter().zip(&best).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn residuals_contract_and_inits_agree() {
        let mdp = two_state();
        let tol = 1e-10;
        let a = value_iteration(&mdp, tol, None).unwrap();
        let b = value_iteration(&mdp, tol, Some(&[100.0, -50.0])).unwrap();
        for w in a.residuals.windows(2) {
            assert!(w[1] <= mdp.discount * w[0] + 1e-12);
        }
        let gap = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap <= 2.0 * tol);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn bad_rows_are_model_errors() {
        let mdp = ToyMdp { rewards: vec![vec![1.0]], transitions: vec![vec![vec![0.9]]], discount: 0.9 };
        assert!(matches!(value_iteration(&mdp, 1e-9, None), Err(Error::Model(_))));
        let mdp = ToyMdp { rewards: vec![vec![1.0]], transitions: vec![vec![vec![1.0]]], discount: 1.0 };
        assert!(value_iteration(&mdp, 1e-9, None).is_err());
    }

    #[test]
    fn fraud_toy_is_stochastic_and_small() {
        let model = EnvModel::new(EnvConfig::default()).unwrap();
        let (mdp, _) = fraud_toy_mdp(&model, &ToySpec::desk_default(0.9)).unwrap();
        assert_eq!((mdp.states(), mdp.actions()), (6, 3));
        mdp.validate().unwrap();
    }

    #[test]
    fn nearly_undiscounted_future_reduces_to_greedy() {
        let model = EnvModel::new(EnvConfig::default()).unwrap();
        let spec = ToySpec::desk_default(1e-6);
        let (mdp, cells) = fraud_toy_mdp(&model, &spec).unwrap();
        let vi = value_iteration(&mdp, 1e-12, None).unwrap();
        for (q, row) in cells.iter().enumerate() {
            for (i, c) in row.iter().enumerate() {
                let greedy = argmax_decision(cell_rewards(c, spec.margin, spec.cost, spec.review_cost).as_array());
                assert_eq!(TOY_ACTIONS[vi.policy[q * spec.scores.len() + i]], greedy);
            }
        }
    }
}
