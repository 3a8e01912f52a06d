//! Property suites run by `oracle-check` and the acceptance target.

use fraudctl_core::harness::{run_replication, ExperimentPlan, PolicySpec};
use fraudctl_core::model::{
    argmax_decision, reward_triple, CostParams, Decision, GCell, GTable, Transaction,
};
use fraudctl_core::policies::{
    brute_force_policy, fraud_toy_mdp, greedy_batch, rgh_decide, value_iteration, GreedyObjective, ProspectiveState,
    ToyMdp, ToySpec,
};
use fraudctl_core::inference::{AffineCell, RateResponse};
use fraudctl_core::sim::{EnvConfig, EnvModel};
use fraudctl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::OracleConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Score support of the random instances.
pub const MAX_SCORE: u32 = 30;

/// A coherent cell; with probability `zero` every event has probability 0,
/// which makes all three rewards tie.
pub fn random_cell(rng: &mut ChaCha8Rng, zero: f64) -> GCell {
    if rng.random::<f64>() < zero {
        return GCell::default();
    }
    let auth = rng.random::<f64>();
    let fraud = rng.random::<f64>() * auth;
    let legit = auth - fraud;
    GCell {
        auth_legit: legit,
        auth_fraud: fraud,
        review_legit: legit * rng.random::<f64>(),
        review_fraud: fraud * rng.random::<f64>(),
        auth,
    }
}

pub fn random_table(rng: &mut ChaCha8Rng, zero: f64) -> GTable {
    GTable::from_cells(0, (0..=MAX_SCORE).map(|_| random_cell(rng, zero)).collect()).expect("non-empty")
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Transaction> {
    (0..n)
        .map(|j| {
            let margin = rng.random_range(1.0..80.0);
            let cost = margin * rng.random_range(1.0..8.0) + rng.random_range(0.0..30.0);
            Transaction::new(j as u64, rng.random_range(0..=MAX_SCORE), margin, cost, 0, j as u32).expect("valid")
        })
        .collect()
}

pub fn random_future(rng: &mut ChaCha8Rng, steep: f64) -> RateResponse {
    let cells = (0..=MAX_SCORE)
        .map(|_| AffineCell {
            base: random_cell(rng, 0.0).to_array(),
            slope: std::array::from_fn(|_| rng.random_range(-steep..steep)),
        })
        .collect();
    RateResponse::from_cells(0, cells, None).expect("non-empty")
}

fn random_costs(rng: &mut ChaCha8Rng) -> CostParams {
    CostParams { review_cost: rng.random_range(0.0..10.0), ..CostParams::default() }
}

/// Greedy with the tie-break reversed (Approve first).
fn approve_first_greedy(batch: &[Transaction], g: &GTable, costs: &CostParams) -> Result<(Vec<Decision>, f64)> {
    let mut value = 0.0;
    let mut actions = Vec::with_capacity(batch.len());
    for w in batch {
        let t = reward_triple(w, g, costs)?;
        let mut best = Decision::Approve;
        for d in [Decision::Review, Decision::Reject] {
            if t.get(d) > t.get(best) {
                best = d;
            }
        }
        value += t.get(best);
        actions.push(best);
    }
    Ok((actions, value))
}

fn fmt_actions(a: &[Decision]) -> String {
    a.iter().map(|d| &d.as_str()[..2]).collect::<Vec<_>>().join(",")
}

/// Greedy decisions against enumeration of every action sequence, under a
/// mature-table (Naive) and a current-table (Myopic) objective per batch.
pub fn greedy_optimality(cfg: &OracleConfig) -> Result<CheckOutcome> {
    let name = "greedy-equals-enumeration";
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut compared = 0;
    for i in 0..cfg.batches {
        let n = i % (cfg.max_batch + 1);
        let batch = random_batch(&mut rng, n);
        let costs = random_costs(&mut rng);
        for objective in ["naive", "myopic"] {
            let g = random_table(&mut rng, 0.1);
            let (ga, gv) = if cfg.inject_tie_break_fault {
                approve_first_greedy(&batch, &g, &costs)?
            } else {
                greedy_batch(&batch, &g, &costs)?
            };
            let (ba, bv) = brute_force_policy(&batch, &GreedyObjective { table: &g, costs: &costs })?;
            compared += 1;
            if ga != ba || gv != bv {
                let detail = format!(
                    "batch {i} (seed {}, N={n}, {objective} objective): greedy [{}] = {gv}, enumeration [{}] = {bv}",
                    cfg.seed,
                    fmt_actions(&ga),
                    fmt_actions(&ba)
                );
                return Ok(CheckOutcome::new(name, false, detail));
            }
        }
    }
    Ok(CheckOutcome::new(name, true, format!("{compared} batch objectives, N <= {}, exact", cfg.max_batch)))
}

fn random_mdp(rng: &mut ChaCha8Rng) -> ToyMdp {
    let states = rng.random_range(2..=18);
    let actions = rng.random_range(1..=3);
    let rewards = (0..states).map(|_| (0..actions).map(|_| rng.random_range(-50.0..50.0)).collect()).collect();
    let transitions = (0..actions)
        .map(|_| {
            (0..states)
                .map(|_| {
                    let raw: Vec<f64> = (0..states).map(|_| rng.random::<f64>().powi(3)).collect();
                    let total: f64 = raw.iter().sum();
                    raw.into_iter().map(|p| p / total).collect()
                })
                .collect()
        })
        .collect();
    ToyMdp { rewards, transitions, discount: rng.random_range(0.5..0.95) }
}

/// Largest ratio of successive sweep changes, over sweeps whose change is
/// large enough for rounding not to matter.
fn contraction_factor(residuals: &[f64]) -> f64 {
    residuals.windows(2).filter(|w| w[0] > 1e-6).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

/// Value iteration on toy MDPs from two starting points: same fixed point,
/// contraction by at most the discount.
pub fn bellman_fixed_point(cfg: &OracleConfig, env: &EnvConfig, costs: &CostParams) -> Result<CheckOutcome> {
    let name = "value-iteration-fixed-point";
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let model = EnvModel::new(env.clone())?;
    let mut mdps = vec![("fraud toy".to_string(), fraud_toy_mdp(&model, &ToySpec::desk_default(costs.bellman_discount))?.0)];
    for i in 0..cfg.toy_mdps {
        mdps.push((format!("random toy {i}"), random_mdp(&mut rng)));
    }
    let (mut worst_gap, mut worst_excess) = (0.0f64, f64::NEG_INFINITY);
    for (label, mdp) in &mdps {
        let start: Vec<f64> = (0..mdp.states()).map(|_| rng.random_range(-100.0..100.0)).collect();
        let a = value_iteration(mdp, cfg.tolerance, None)?;
        let b = value_iteration(mdp, cfg.tolerance, Some(&start))?;
        let gap = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let excess = contraction_factor(&a.residuals).max(contraction_factor(&b.residuals)) - mdp.discount;
        worst_gap = worst_gap.max(gap);
        worst_excess = worst_excess.max(excess);
        if gap > 2.0 * cfg.tolerance || excess > 1e-6 {
            let detail = format!(
                "{label} ({} states, {} actions, discount {}): gap {gap:.3e}, contraction excess {excess:.3e}",
                mdp.states(),
                mdp.actions(),
                mdp.discount
            );
            return Ok(CheckOutcome::new(name, false, detail));
        }
    }
    let detail = format!(
        "{} MDPs, max gap {worst_gap:.3e} <= {:.0e}, max contraction excess {worst_excess:.3e}",
        mdps.len(),
        2.0 * cfg.tolerance
    );
    Ok(CheckOutcome::new(name, true, detail))
}

/// λ = 0 keeps RGH on the Myopic argmax, transaction by transaction.
pub fn zero_discount_instances(cfg: &OracleConfig) -> Result<CheckOutcome> {
    let name = "zero-discount-rgh-is-myopic";
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c);
    for i in 0..cfg.instances {
        let current = random_table(&mut rng, 0.1);
        let future = random_future(&mut rng, 50.0);
        let reference = random_batch(&mut rng, 5);
        let costs = random_costs(&mut rng);
        let batch = random_batch(&mut rng, 20);
        let (myopic, _) = greedy_batch(&batch, &current, &costs)?;
        let mut state = ProspectiveState::new(current, Some(future), reference, 0.0, 0.01)?;
        for (j, (w, &m)) in batch.iter().zip(&myopic).enumerate() {
            let (d, _) = rgh_decide(&mut state, w, &costs)?;
            if d != m {
                let detail = format!("instance {i}, transaction {j}: rgh {d:?}, myopic {m:?}");
                return Ok(CheckOutcome::new(name, false, detail));
            }
        }
    }
    Ok(CheckOutcome::new(name, true, format!("{} instances x 20 transactions", cfg.instances)))
}

/// Shifting all three prospective values, or scaling margin, cost and review
/// cost together by a power of two, leaves every decision alone.
pub fn argmax_invariance(cfg: &OracleConfig) -> Result<CheckOutcome> {
    let name = "argmax-invariance";
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa59);
    for i in 0..cfg.instances {
        let g = random_table(&mut rng, 0.1);
        let costs = random_costs(&mut rng);
        let future = random_future(&mut rng, 20.0);
        let reference = random_batch(&mut rng, 4);
        let mut state = ProspectiveState::new(g.clone(), Some(future), reference, 0.5, 0.01)?;
        for w in random_batch(&mut rng, 10) {
            let (d, r) = rgh_decide(&mut state, &w, &costs)?;
            let shift = rng.random_range(-100.0..100.0);
            if argmax_decision(r.values.map(|v| v + shift)) != d {
                return Ok(CheckOutcome::new(name, false, format!("instance {i}: shift {shift} moved the decision")));
            }
            let base = reward_triple(&w, &g, &costs)?.best();
            for k in [0.25, 0.5, 2.0, 8.0] {
                let scaled = Transaction { margin: w.margin * k, cost: w.cost * k, ..w };
                let c = CostParams { review_cost: costs.review_cost * k, ..costs };
                if reward_triple(&scaled, &g, &c)?.best() != base {
                    return Ok(CheckOutcome::new(name, false, format!("instance {i}: scale {k} moved the decision")));
                }
            }
        }
    }
    Ok(CheckOutcome::new(name, true, format!("{} instances x 10 transactions", cfg.instances)))
}

/// Decision streams of the degenerate pairs in one closed-loop run:
/// Prospective at λ = 0 against Myopic, Myopic with identity inference
/// against Naive.
pub fn degenerate_streams(plan: &ExperimentPlan, seed: u64) -> Result<CheckOutcome> {
    let name = "degenerate-policy-streams";
    let plan = ExperimentPlan {
        policies: vec![
            PolicySpec::Myopic { identity_cei: false },
            PolicySpec::Prospective { lambda: Some(0.0) },
            PolicySpec::Naive,
            PolicySpec::Myopic { identity_cei: true },
        ],
        keep_logs: true,
        seeds: vec![seed],
        ..plan.clone()
    };
    let rep = run_replication(&plan, seed)?;
    let runs = &rep.runs;
    for (a, b) in [(0, 1), (2, 3)] {
        let (x, y) = (&runs[a].log, &runs[b].log);
        let differ = x.len() != y.len()
            || x.iter().zip(y).any(|(p, q)| {
                p.record.transaction_id != q.record.transaction_id || p.record.decision != q.record.decision
            });
        if differ {
            let detail = format!("{} and {} decision streams differ (seed {seed})", runs[a].label, runs[b].label);
            return Ok(CheckOutcome::new(name, false, detail));
        }
    }
    let n = runs[0].log.len();
    Ok(CheckOutcome::new(name, true, format!("seed {seed}: {n} transactions per stream, both pairs identical")))
}

pub fn oracle_suite(cfg: &OracleConfig, plan: &ExperimentPlan) -> Result<Vec<CheckOutcome>> {
    let small = ExperimentPlan { periods: plan.periods.min(4), ..plan.clone() };
    let seed = plan.seeds.first().copied().unwrap_or(cfg.seed);
    Ok(vec![
        greedy_optimality(cfg)?,
        bellman_fixed_point(cfg, &plan.env, &plan.costs)?,
        zero_discount_instances(cfg)?,
        argmax_invariance(cfg)?,
        degenerate_streams(&small, seed)?,
    ])
}
