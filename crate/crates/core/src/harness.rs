//! Closed-loop evaluation protocol.
//!
//! A replication warms the market up under jittered static thresholds (the
//! jitter moves the chargeback rate around so the inference models have
//! something to learn from), then hands an identical copy of the warmed-up
//! world to every policy in the plan. Each copy runs the test window with its
//! own feedback loop; transactions are shared and per-transaction draws are
//! keyed on the transaction id, so two policies deciding the same way under
//! the same feedback state see the same outcome.
//!
//! Every period a dynamic policy retrains on what has matured: g-tables over a
//! short window of mature periods for the trajectory, the newest of them for
//! Naive control, the current-environment model for Myopic control and the
//! future-environment model for Prospective control.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::estimation::{estimate_from_evidence, GTrajectory, PeriodReport};
use crate::inference::{fit_cei, fit_fei, RegressorConfig};
use crate::model::{reward_triple, CostParams, Decision, GTable, RewardTriple, Transaction};
use crate::policies::{baseline_decide, rgh_decide, PolicyDecisionRecord, ProspectiveState, ProspectiveTrace};
use crate::sim::{keyed_rng, keyed_uniform, EnvConfig, EnvModel, OutcomeRecord, Stream, WorldState};

/// Largest share of traffic whose rejections may be flipped.
pub const MAX_FLIP_FRACTION: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub low: u32,
    pub high: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Static thresholds; missing values come from the plan's `baseline`.
    Baseline {
        #[serde(default)]
        low: Option<u32>,
        #[serde(default)]
        high: Option<u32>,
    },
    Naive,
    Myopic {
        /// Use the mature table as the current-environment estimate.
        #[serde(default)]
        identity_cei: bool,
    },
    Prospective {
        /// Defaults to `costs.future_discount`.
        #[serde(default)]
        lambda: Option<f64>,
    },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Baseline { .. } => "baseline".into(),
            PolicySpec::Naive => "naive".into(),
            PolicySpec::Myopic { identity_cei: false } => "myopic".into(),
            PolicySpec::Myopic { identity_cei: true } => "myopic-identity".into(),
            PolicySpec::Prospective { .. } => "prospective".into(),
        }
    }

    pub fn is_baseline(&self) -> bool {
        matches!(self, PolicySpec::Baseline { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub env: EnvConfig,
    pub costs: CostParams,
    pub policies: Vec<PolicySpec>,
    /// Test-window length.
    pub periods: u32,
    pub warmup: u32,
    pub baseline: Thresholds,
    /// Half-width of the uniform threshold jitter during warm-up.
    pub warmup_jitter: u32,
    pub flip_fraction: f64,
    pub seeds: Vec<u64>,
    pub folds: u32,
    pub lambda_grid: Vec<f64>,
    pub regressor: RegressorConfig,
    pub reference_size: usize,
    /// Width of the score bins pooled by the estimator.
    pub score_bin: u32,
    /// Consecutive mature periods pooled into every estimated table.
    pub mature_window: u32,
    /// Keep per-transaction decision logs of the test window.
    pub keep_logs: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            costs: CostParams::default(),
            policies: vec![
                PolicySpec::Baseline { low: None, high: None },
                PolicySpec::Naive,
                PolicySpec::Myopic { identity_cei: false },
                PolicySpec::Prospective { lambda: None },
            ],
            periods: 14,
            warmup: 48,
            baseline: Thresholds { low: 600, high: 950 },
            warmup_jitter: 40,
            flip_fraction: 0.02,
            seeds: (1..=30).collect(),
            folds: 4,
            lambda_grid: vec![0.0, 0.06, 0.12, 0.24],
            regressor: RegressorConfig::default(),
            reference_size: 200,
            score_bin: 10,
            mature_window: 2,
            keep_logs: false,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(config_err(format!("lambda {lambda} must lie in [0, 1]")))
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        self.env.validate()?;
        self.env.check_against(&self.costs)?;
        self.regressor.validate()?;
        if !(self.flip_fraction > 0.0 && self.flip_fraction <= MAX_FLIP_FRACTION) {
            return Err(config_err(format!("flip_fraction must lie in (0, {MAX_FLIP_FRACTION}]")));
        }
        if self.warmup < self.costs.maturity_horizon {
            return Err(config_err("warmup must cover at least the maturity horizon"));
        }
        if self.periods == 0 {
            return Err(config_err("periods must be positive"));
        }
        if self.policies.is_empty() {
            return Err(config_err("plan lists no policies"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("plan lists no seeds"));
        }
        if self.reference_size == 0 || self.score_bin == 0 || self.mature_window == 0 {
            return Err(config_err("reference_size, score_bin and mature_window must be positive"));
        }
        let max = self.env.max_score;
        let check_thresholds = |low: u32, high: u32| {
            if low > high || high > max {
                Err(config_err(format!("thresholds need low <= high <= {max}, got {low}..{high}")))
            } else {
                Ok(())
            }
        };
        check_thresholds(self.baseline.low, self.baseline.high)?;
        for p in &self.policies {
            match *p {
                PolicySpec::Baseline { low, high } => {
                    check_thresholds(low.unwrap_or(self.baseline.low), high.unwrap_or(self.baseline.high))?
                }
                PolicySpec::Prospective { lambda: Some(l) } => check_lambda(l)?,
                _ => {}
            }
        }
        if self.lambda_grid.is_empty() {
            return Err(config_err("lambda_grid is empty"));
        }
        for &l in &self.lambda_grid {
            check_lambda(l)?;
        }
        if self.folds == 0 {
            return Err(config_err("folds must be positive"));
        }
        Ok(())
    }

    fn model_for(&self, seed: u64) -> Result<EnvModel> {
        EnvModel::new(EnvConfig { seed, ..self.env.clone() })
    }

    fn thresholds_of(&self, spec: &PolicySpec) -> Thresholds {
        match *spec {
            PolicySpec::Baseline { low, high } => {
                Thresholds { low: low.unwrap_or(self.baseline.low), high: high.unwrap_or(self.baseline.high) }
            }
            _ => self.baseline,
        }
    }

    fn lambda_of(&self, spec: &PolicySpec) -> Option<f64> {
        match *spec {
            PolicySpec::Prospective { lambda } => Some(lambda.unwrap_or(self.costs.future_discount)),
            _ => None,
        }
    }
}

/// Training outcomes for a period: rejected transactions inside the flip
/// sample are resolved as if approved, everything else gets `None`.
///
/// The sample is `keyed_uniform(seed, id, Flip) < fraction`, so it is the
/// same set of transactions under every policy.
pub fn flip_sample(
    model: &EnvModel,
    world: &WorldState,
    batch: &[Transaction],
    decisions: &[Decision],
    fraction: f64,
) -> Result<Vec<Option<OutcomeRecord>>> {
    if !(0.0..=MAX_FLIP_FRACTION).contains(&fraction) {
        return Err(config_err(format!("flip fraction {fraction} exceeds {MAX_FLIP_FRACTION}")));
    }
    if batch.len() != decisions.len() {
        return Err(config_err("one decision per transaction is required"));
    }
    Ok(batch
        .iter()
        .zip(decisions)
        .map(|(w, &d)| {
            let sampled = keyed_uniform(model.seed(), w.id, Stream::Flip) < fraction;
            (sampled && d == Decision::Reject).then(|| world.resolve(model, w, Decision::Approve))
        })
        .collect())
}

/// How one period's transactions are decided.
#[derive(Debug, Clone)]
enum Rule {
    Thresholds(Thresholds),
    Greedy(GTable),
    Prospective(ProspectiveState),
}

impl Rule {
    fn table(&self) -> Option<&GTable> {
        match self {
            Rule::Thresholds(_) => None,
            Rule::Greedy(g) => Some(g),
            Rule::Prospective(s) => Some(s.current()),
        }
    }

    fn decide(&mut self, w: &Transaction, costs: &CostParams) -> Result<PolicyDecisionRecord> {
        let (decision, rewards, prospective) = match self {
            Rule::Thresholds(t) => {
                let zero = RewardTriple { approve: 0.0, review: 0.0, reject: 0.0 };
                (baseline_decide(w, t.low, t.high)?, zero, None)
            }
            Rule::Greedy(g) => {
                let r = reward_triple(w, g, costs)?;
                (r.best(), r, None)
            }
            Rule::Prospective(state) => {
                let (d, r) = rgh_decide(state, w, costs)?;
                (d, r.immediate, Some(ProspectiveTrace { values: r.values, deltas: r.deltas }))
            }
        };
        Ok(PolicyDecisionRecord { transaction_id: w.id, decision, rewards, prospective })
    }
}

/// One logged test-window decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub policy: usize,
    pub period: u32,
    pub record: PolicyDecisionRecord,
    pub outcome: OutcomeRecord,
    pub flipped: bool,
}

/// Decides and books one whole period, then closes it.
fn play_period(
    world: &mut WorldState,
    model: &EnvModel,
    plan: &ExperimentPlan,
    rule: &mut Rule,
    mut log: Option<(usize, &mut Vec<DecisionLogEntry>)>,
) -> Result<()> {
    let batch = world.gen_period(model);
    let mut records = Vec::with_capacity(batch.len());
    for w in &batch {
        records.push(rule.decide(w, &plan.costs)?);
    }
    let decisions: Vec<Decision> = records.iter().map(|r| r.decision).collect();
    let flips = flip_sample(model, world, &batch, &decisions, plan.flip_fraction)?;
    for ((w, rec), flip) in batch.iter().zip(&records).zip(&flips) {
        let outcome = world.resolve(model, w, rec.decision);
        world.record(w, rec.decision, &outcome, flip.as_ref());
        if let Some((policy, log)) = log.as_mut() {
            log.push(DecisionLogEntry {
                policy: *policy,
                period: w.period,
                record: *rec,
                outcome,
                flipped: flip.is_some(),
            });
        }
    }
    world.advance_period();
    Ok(())
}

/// Retraining state of one decision stream.
#[derive(Debug, Clone, Default)]
struct Learner {
    traj: GTrajectory,
    /// Newest period whose labels any fitted model used.
    trained_through: Option<u32>,
}

/// What a policy used in one period, kept for diagnostics and audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodAudit {
    pub period: u32,
    /// Newest label period behind the models queried this period.
    pub trained_through: Option<u32>,
    /// Mean absolute error of the table used against the true table over
    /// `auth_legit` and `auth_fraud`.
    pub table_error: Option<f64>,
    pub current_model: bool,
    pub future_model: bool,
}

impl Learner {
    fn newest_mature(world: &WorldState) -> Option<u32> {
        world.period().checked_sub(world.horizon() + 1)
    }

    /// Estimates trajectory tables for every newly matured period; table `q`
    /// pools periods `q−mature_window+1 ..= q`.
    fn catch_up(&mut self, world: &WorldState, plan: &ExperimentPlan) -> Result<()> {
        let Some(newest) = Self::newest_mature(world) else { return Ok(()) };
        let next = self.traj.last_period().map_or(0, |q| q + 1);
        for q in next..=newest {
            let first = (q + 1).saturating_sub(plan.mature_window);
            let ev = world.evidence(first, q, world.period())?.pooled(plan.score_bin);
            let g = estimate_from_evidence(&ev, self.traj.tables().last())?;
            self.traj.push(g)?;
        }
        Ok(())
    }

    fn note(&mut self, through: Option<u32>) {
        self.trained_through = self.trained_through.max(through);
    }

    /// The newest trajectory table: the Naive estimate.
    fn mature_table(&mut self, newest: u32) -> Result<GTable> {
        self.note(Some(newest));
        self.traj.get(newest).cloned().ok_or(Error::NotEnoughHistory { needed: 1, available: 0 })
    }

    fn rule(
        &mut self,
        spec: &PolicySpec,
        world: &WorldState,
        model: &EnvModel,
        plan: &ExperimentPlan,
    ) -> Result<(Rule, PeriodAudit)> {
        self.catch_up(world, plan)?;
        self.trained_through = None;
        let p = world.period();
        let mut audit =
            PeriodAudit { period: p, trained_through: None, table_error: None, current_model: false, future_model: false };
        let newest = match (spec, Self::newest_mature(world)) {
            (PolicySpec::Baseline { .. }, _) | (_, None) => {
                return Ok((Rule::Thresholds(plan.thresholds_of(spec)), audit));
            }
            (_, Some(n)) => n,
        };
        let mature = self.mature_table(newest)?;
        let current = match spec {
            PolicySpec::Naive | PolicySpec::Myopic { identity_cei: true } => mature,
            _ => {
                let signals: Vec<(u32, f64)> =
                    world.books().iter().map(|b| (b.period, b.feedback.partial_rate)).collect();
                match fit_cei(plan.regressor, &self.traj, &signals, &plan.costs) {
                    Ok(cei) => {
                        self.note(cei.trained_through);
                        audit.current_model = true;
                        cei.rate_response(&self.traj)?.table(world.feedback().partial_rate)
                    }
                    Err(Error::NotEnoughHistory { .. }) => mature,
                    Err(e) => return Err(e),
                }
            }
        };
        let rule = match plan.lambda_of(spec) {
            None => Rule::Greedy(current),
            Some(lambda) => {
                let lag = plan.costs.partial_lag;
                let signals: Vec<(u32, f64)> = (lag..=newest)
                    .filter_map(|q| world.book(q - lag)?.mature_chargeback_rate().map(|r| (q, r)))
                    .collect();
                let future = match fit_fei(plan.regressor, &self.traj, &signals, &plan.costs) {
                    Ok(fei) => {
                        self.note(fei.trained_through);
                        audit.future_model = true;
                        Some(fei.rate_response(&self.traj)?)
                    }
                    Err(Error::NotEnoughHistory { .. }) => None,
                    Err(e) => return Err(e),
                };
                let fallback = world
                    .book(newest)
                    .and_then(|b| b.mature_chargeback_rate())
                    .unwrap_or(plan.env.bank.reference_rate);
                let reference = reference_sample(model, newest, p, plan.reference_size)?;
                Rule::Prospective(ProspectiveState::new(current, future, reference, lambda, fallback)?)
            }
        };
        if let Some(t) = self.trained_through {
            if !world.is_mature(t, p) {
                return Err(Error::Model(format!("period {p} queried a model trained on immature period {t}")));
            }
        }
        audit.trained_through = self.trained_through;
        audit.table_error = rule.table().map(|g| table_error(g, &world.true_gtable(model, p)));
        Ok((rule, audit))
    }
}

/// Uniform bootstrap of a mature period's arrivals.
fn reference_sample(model: &EnvModel, source: u32, key: u32, size: usize) -> Result<Vec<Transaction>> {
    let pool = model.transactions(source);
    if pool.is_empty() {
        return Err(Error::InsufficientData(format!("period {source} has no transactions to bootstrap")));
    }
    let mut rng = keyed_rng(model.seed(), u64::from(key), Stream::Reference);
    Ok((0..size).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

fn table_error(est: &GTable, truth: &GTable) -> f64 {
    let n = est.cells().len() as f64;
    let total: f64 = est
        .cells()
        .iter()
        .zip(truth.cells())
        .map(|(a, b)| libm::fabs(a.auth_legit - b.auth_legit) + libm::fabs(a.auth_fraud - b.auth_fraud))
        .sum();
    total / (2.0 * n)
}

/// Thresholds for warm-up period `p`, jittered around the plan's baseline.
fn warmup_thresholds(plan: &ExperimentPlan, seed: u64, p: u32) -> Thresholds {
    let j = i64::from(plan.warmup_jitter);
    let max = i64::from(plan.env.max_score);
    let mut rng = keyed_rng(seed, u64::from(p), Stream::Harness);
    let mut shift = |v: u32| (i64::from(v) + rng.random_range(-j..=j)).clamp(0, max) as u32;
    let low = shift(plan.baseline.low);
    let high = shift(plan.baseline.high).max(low);
    Thresholds { low, high }
}

/// The warmed-up world shared by every policy of a replication.
#[derive(Debug, Clone)]
struct Warmed {
    model: EnvModel,
    world: WorldState,
    learner: Learner,
}

/// Runs warm-up periods `0..until`, calling `at` with the world at the start
/// of every period (before deciding it).
fn warm_up(plan: &ExperimentPlan, seed: u64, mut at: impl FnMut(&Warmed) -> Result<()>) -> Result<Warmed> {
    let model = plan.model_for(seed)?;
    let world = WorldState::new(&model, &plan.costs, false)?;
    let mut w = Warmed { model, world, learner: Learner::default() };
    for p in 0..plan.warmup {
        at(&w)?;
        let mut rule = Rule::Thresholds(warmup_thresholds(plan, seed, p));
        play_period(&mut w.world, &w.model, plan, &mut rule, None)?;
    }
    w.learner.catch_up(&w.world, plan)?;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub label: String,
    pub lambda: Option<f64>,
    pub reports: Vec<PeriodReport>,
    pub audits: Vec<PeriodAudit>,
    /// Finally approved frauds over non-rejected submissions, per period.
    pub mature_chargeback_rates: Vec<Option<f64>>,
    pub log: Vec<DecisionLogEntry>,
}

impl PolicyRun {
    pub fn total(&self) -> PeriodReport {
        let mut t = PeriodReport::empty(self.reports.first().map_or(0, |r| r.period));
        for r in &self.reports {
            t.merge(r);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub first_period: u32,
    /// Mean mature chargeback rate over the warm-up.
    pub warmup_chargeback_rate: f64,
    /// Test-window arrivals, kept with the logs.
    pub transactions: Vec<Transaction>,
    pub runs: Vec<PolicyRun>,
}

/// Runs the test window for one policy from a warmed-up world.
fn run_policy(
    warmed: &Warmed,
    plan: &ExperimentPlan,
    index: usize,
    spec: &PolicySpec,
    periods: u32,
    keep_log: bool,
) -> Result<PolicyRun> {
    let mut world = warmed.world.clone();
    let mut learner = warmed.learner.clone();
    let first = world.period();
    let mut audits = Vec::with_capacity(periods as usize);
    let mut log = Vec::new();
    for _ in 0..periods {
        let (mut rule, audit) = learner.rule(spec, &world, &warmed.model, plan)?;
        audits.push(audit);
        play_period(&mut world, &warmed.model, plan, &mut rule, keep_log.then_some((index, &mut log)))?;
    }
    let books = &world.books()[first as usize..(first + periods) as usize];
    Ok(PolicyRun {
        label: spec.label(),
        lambda: plan.lambda_of(spec),
        reports: books.iter().map(|b| b.report).collect(),
        audits,
        mature_chargeback_rates: books.iter().map(|b| b.mature_chargeback_rate()).collect(),
        log,
    })
}

pub fn run_replication(plan: &ExperimentPlan, seed: u64) -> Result<Replication> {
    plan.validate()?;
    let warmed = warm_up(plan, seed, |_| Ok(()))?;
    let rates: Vec<f64> = warmed.world.books()[..plan.warmup as usize]
        .iter()
        .filter_map(|b| b.mature_chargeback_rate())
        .collect();
    let warmup_chargeback_rate =
        if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 };
    let runs = plan
        .policies
        .iter()
        .enumerate()
        .map(|(i, spec)| run_policy(&warmed, plan, i, spec, plan.periods, plan.keep_logs))
        .collect::<Result<Vec<_>>>()?;
    let transactions = if plan.keep_logs {
        (plan.warmup..plan.warmup + plan.periods).flat_map(|p| warmed.model.transactions(p)).collect()
    } else {
        Vec::new()
    };
    Ok(Replication { seed, first_period: plan.warmup, warmup_chargeback_rate, transactions, runs })
}

/// Held-out profits behind a λ choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTuning {
    pub seed: u64,
    pub grid: Vec<f64>,
    /// `folds[k]` = first and one-past-last period of fold k.
    pub folds: Vec<(u32, u32)>,
    /// `fold_profits[k][i]` for fold k and grid point i.
    pub fold_profits: Vec<Vec<f64>>,
    pub mean_profit: Vec<f64>,
    pub chosen: f64,
}

/// Contiguous folds over the warm-up periods that have mature data.
fn lambda_folds(plan: &ExperimentPlan) -> Result<Vec<(u32, u32)>> {
    if plan.folds > plan.warmup {
        return Err(config_err(format!("{} folds exceed {} warm-up periods", plan.folds, plan.warmup)));
    }
    let start = plan.costs.maturity_horizon + 1;
    let span = plan.warmup.saturating_sub(start);
    if plan.folds > span {
        return Err(config_err(format!(
            "{} folds exceed the {span} warm-up periods with mature data",
            plan.folds
        )));
    }
    let (k, base, extra) = (plan.folds, span / plan.folds, span % plan.folds);
    let mut folds = Vec::with_capacity(k as usize);
    let mut a = start;
    for i in 0..k {
        let len = base + u32::from(i < extra);
        folds.push((a, a + len));
        a += len;
    }
    Ok(folds)
}

/// K-fold choice of λ on one seed's warm-up.
///
/// Each fold replays its periods from the warm-up state at the fold start
/// with Prospective control at every grid value; the held-out profit is the
/// realised profit of the replayed periods. The largest mean wins; ties go
/// to the smaller λ.
pub fn tune_lambda(plan: &ExperimentPlan, seed: u64) -> Result<LambdaTuning> {
    plan.validate()?;
    let folds = lambda_folds(plan)?;
    let mut starts: Vec<Warmed> = Vec::with_capacity(folds.len());
    warm_up(plan, seed, |w| {
        if folds.iter().any(|f| f.0 == w.world.period()) {
            let mut snap = w.clone();
            snap.learner.catch_up(&snap.world, plan)?;
            starts.push(snap);
        }
        Ok(())
    })?;
    let mut fold_profits = Vec::with_capacity(folds.len());
    for (start, &(a, b)) in starts.iter().zip(&folds) {
        let row = plan
            .lambda_grid
            .iter()
            .map(|&lambda| {
                let spec = PolicySpec::Prospective { lambda: Some(lambda) };
                Ok(run_policy(start, plan, 0, &spec, b - a, false)?.total().profit)
            })
            .collect::<Result<Vec<f64>>>()?;
        fold_profits.push(row);
    }
    let k = fold_profits.len() as f64;
    let mean_profit: Vec<f64> =
        (0..plan.lambda_grid.len()).map(|i| fold_profits.iter().map(|r| r[i]).sum::<f64>() / k).collect();
    let mut best: Option<(f64, f64)> = None;
    for (&lambda, &v) in plan.lambda_grid.iter().zip(&mean_profit) {
        let better = match best {
            None => true,
            Some((bl, bv)) => v > bv || (v == bv && lambda < bl),
        };
        if better {
            best = Some((lambda, v));
        }
    }
    let chosen = best.expect("grid is non-empty").0;
    Ok(LambdaTuning { seed, grid: plan.lambda_grid.clone(), folds, fold_profits, mean_profit, chosen })
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped beforehand.
pub fn sign_test_p(wins: u32, losses: u32) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln_half_n = f64::from(n) * libm::log(0.5);
    let ln_choose = |k: u32| {
        libm::lgamma(f64::from(n) + 1.0) - libm::lgamma(f64::from(k) + 1.0) - libm::lgamma(f64::from(n - k) + 1.0)
    };
    let p: f64 = (wins..=n).map(|k| libm::exp(ln_choose(k) + ln_half_n)).sum();
    p.min(1.0)
}

fn pct_change(policy: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (policy - base) / base)
}

/// Aggregate of one policy against the baseline over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub index: usize,
    pub label: String,
    pub mean_profit: f64,
    pub mean_fn_loss: f64,
    pub mean_fp_loss: f64,
    pub mean_mr_cost: f64,
    pub mean_approved: f64,
    pub mean_reviewed: f64,
    pub mean_rejected: f64,
    /// Pooled finally-approved-fraud share of finally approved transactions.
    pub chargeback_rate: f64,
    /// Pooled finally approved frauds over non-rejected submissions.
    pub mature_chargeback_rate: f64,
    pub profit_diff: f64,
    pub fn_pct: Option<f64>,
    pub fp_pct: Option<f64>,
    pub mr_pct: Option<f64>,
    pub review_pct: Option<f64>,
    /// `(rate_policy − rate_baseline) / rate_baseline`.
    pub relative_chargeback: Option<f64>,
    pub wins: u32,
    pub losses: u32,
    pub ties: u32,
    pub sign_test_p: f64,
    pub mean_table_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: usize,
    pub seeds: Vec<u64>,
    pub mean_warmup_chargeback_rate: f64,
    pub policies: Vec<PolicyComparison>,
}

impl ComparisonReport {
    pub fn policy(&self, label: &str) -> Option<&PolicyComparison> {
        self.policies.iter().find(|p| p.label == label)
    }
}

/// Compares every policy with the plan's first baseline (or the first
/// policy when the plan has no baseline).
pub fn compare(plan: &ExperimentPlan, reps: &[Replication]) -> Result<ComparisonReport> {
    if reps.is_empty() {
        return Err(config_err("no replications to compare"));
    }
    let n_pol = plan.policies.len();
    if reps.iter().any(|r| r.runs.len() != n_pol) {
        return Err(config_err("replications do not match the plan's policies"));
    }
    let baseline = plan.policies.iter().position(PolicySpec::is_baseline).unwrap_or(0);
    let totals: Vec<Vec<PeriodReport>> = reps.iter().map(|r| r.runs.iter().map(PolicyRun::total).collect()).collect();
    let n = reps.len() as f64;
    let mut policies = Vec::with_capacity(n_pol);
    for i in 0..n_pol {
        let mut pooled = PeriodReport::empty(0);
        let mut base = PeriodReport::empty(0);
        let (mut wins, mut losses, mut ties) = (0, 0, 0);
        let (mut frauds, mut submitted) = (0u64, 0u64);
        let mut errors = Vec::new();
        for (rep, t) in reps.iter().zip(&totals) {
            pooled.merge(&t[i]);
            base.merge(&t[baseline]);
            let (a, b) = (t[i].profit, t[baseline].profit);
            if a > b {
                wins += 1;
            } else if a < b {
                losses += 1;
            } else {
                ties += 1;
            }
            for r in &rep.runs[i].reports {
                frauds += u64::from(r.finally_approved_frauds);
                submitted += u64::from(r.approved + r.reviewed);
            }
            errors.extend(rep.runs[i].audits.iter().filter_map(|a| a.table_error));
        }
        let base_rate = base.chargeback_rate;
        policies.push(PolicyComparison {
            index: i,
            label: plan.policies[i].label(),
            mean_profit: pooled.profit / n,
            mean_fn_loss: pooled.fn_loss / n,
            mean_fp_loss: pooled.fp_loss / n,
            mean_mr_cost: pooled.mr_cost / n,
            mean_approved: f64::from(pooled.approved) / n,
            mean_reviewed: f64::from(pooled.reviewed) / n,
            mean_rejected: f64::from(pooled.rejected) / n,
            chargeback_rate: pooled.chargeback_rate,
            mature_chargeback_rate: if submitted > 0 { frauds as f64 / submitted as f64 } else { 0.0 },
            profit_diff: (pooled.profit - base.profit) / n,
            fn_pct: pct_change(pooled.fn_loss, base.fn_loss),
            fp_pct: pct_change(pooled.fp_loss, base.fp_loss),
            mr_pct: pct_change(pooled.mr_cost, base.mr_cost),
            review_pct: pct_change(f64::from(pooled.reviewed), f64::from(base.reviewed)),
            relative_chargeback: (base_rate != 0.0).then(|| (pooled.chargeback_rate - base_rate) / base_rate),
            wins,
            losses,
            ties,
            sign_test_p: if i == baseline { 1.0 } else { sign_test_p(wins, losses) },
            mean_table_error: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        });
    }
    let mean_warmup_chargeback_rate = reps.iter().map(|r| r.warmup_chargeback_rate).sum::<f64>() / n;
    Ok(ComparisonReport {
        baseline,
        seeds: reps.iter().map(|r| r.seed).collect(),
        mean_warmup_chargeback_rate,
        policies,
    })
}

/// Runs every seed of the plan sequentially and compares.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<(Vec<Replication>, ComparisonReport)> {
    plan.validate()?;
    let reps = plan.seeds.iter().map(|&s| run_replication(plan, s)).collect::<Result<Vec<_>>>()?;
    let report = compare(plan, &reps)?;
    Ok((reps, report))
}

impl core::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.label())
    }
}
