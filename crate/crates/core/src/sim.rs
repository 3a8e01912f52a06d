//! Closed-loop transaction market: scored arrivals, fraudsters, the bank,
//! the manual-review team and the chargeback maturity process.
//!
//! Every behavioural probability conditions on the risk score only. The bank
//! and MR react to the engine's recent decisions through two feedback
//! inputs fixed at the start of each period: the lag-`l` partially mature
//! chargeback rate and the fraud share of last period's reviewed stream.
//!
//! Per-transaction draws are keyed on `(seed, transaction id, stream)`, so a
//! transaction gets the same fraud status under every policy and the same
//! bank/MR realisation whenever two policies face the same probabilities.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::estimation::{Evidence, LabeledRecord, LabeledSlice, PeriodReport, ScoreCounts};
use crate::model::{CostParams, Decision, GCell, GTable, Transaction, DEFAULT_MAX_SCORE};

/// Independent random streams used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 1,
    Fraud = 2,
    Bank = 3,
    Review = 4,
    Lag = 5,
    Flip = 6,
    Reference = 7,
    Harness = 8,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator seeded deterministically from a base seed, a key and a stream.
pub fn keyed_rng(seed: u64, key: u64, stream: Stream) -> ChaCha8Rng {
    let k = mix64(seed ^ mix64(key ^ mix64(stream as u64)));
    ChaCha8Rng::seed_from_u64(k)
}

/// One uniform draw in [0, 1) keyed like [`keyed_rng`].
pub fn keyed_uniform(seed: u64, key: u64, stream: Stream) -> f64 {
    keyed_rng(seed, key, stream).random::<f64>()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Bank authorisation: `logistic(base − score_slope·s/s̄ − feedback_slope·x)`
/// with `x = max(0, ρ − ρ_ref)`. Fraudulent transactions get a further
/// `−(fraud_logit + fraud_feedback_slope·x)`, so a tightening bank screens
/// fraud harder than legitimate traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankResponse {
    pub base_logit: f64,
    pub score_slope: f64,
    pub feedback_slope: f64,
    pub reference_rate: f64,
    #[serde(default)]
    pub fraud_logit: f64,
    #[serde(default)]
    pub fraud_feedback_slope: f64,
}

/// Manual-review approval, affine in the fraud share `f` of the reviewed
/// stream: legit `legit_base − legit_slope·f`, fraud `fraud_base + fraud_slope·f`,
/// both clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewResponse {
    pub legit_base: f64,
    pub legit_slope: f64,
    pub fraud_base: f64,
    pub fraud_slope: f64,
    pub initial_fraud_share: f64,
}

/// Log-normal margin; cost is `goods_to_margin · m + chargeback_fee`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmountModel {
    pub margin_log_mean: f64,
    pub margin_log_sd: f64,
    pub goods_to_margin: f64,
    pub chargeback_fee: f64,
}

/// Chargeback lag: geometric with the given continuation probability,
/// truncated to [0, L].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaturityModel {
    pub continue_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub max_score: u32,
    pub arrival_rate: f64,
    /// Piecewise-linear relative density of scores, knots `[s/s̄, weight]`.
    pub score_density: Vec<[f64; 2]>,
    /// Piecewise-linear Pr(fraud | s), knots `[s/s̄, probability]`.
    pub fraud_curve: Vec<[f64; 2]>,
    pub bank: BankResponse,
    pub review: ReviewResponse,
    pub amounts: AmountModel,
    pub maturity: MaturityModel,
    pub maturity_horizon: u32,
    pub feedback_lag: u32,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_score: DEFAULT_MAX_SCORE,
            arrival_rate: 5000.0,
            score_density: vec![[0.0, 3.0], [0.5, 1.0], [1.0, 0.3]],
            fraud_curve: vec![[0.0, 0.0005], [0.5, 0.003], [0.8, 0.03], [0.9, 0.12], [1.0, 0.5]],
            bank: BankResponse {
                base_logit: 3.5,
                score_slope: 1.0,
                feedback_slope: 100.0,
                reference_rate: 0.001,
                fraud_logit: 1.0,
                fraud_feedback_slope: 300.0,
            },
            review: ReviewResponse {
                legit_base: 0.55,
                legit_slope: -4.0,
                fraud_base: 0.35,
                fraud_slope: -2.0,
                initial_fraud_share: 0.05,
            },
            amounts: AmountModel { margin_log_mean: 3.0, margin_log_sd: 0.5, goods_to_margin: 5.0, chargeback_fee: 25.0 },
            maturity: MaturityModel { continue_prob: 0.6 },
            maturity_horizon: 12,
            feedback_lag: 2,
            seed: 7,
        }
    }
}

fn interpolate(knots: &[[f64; 2]], x: f64) -> f64 {
    if x <= knots[0][0] {
        return knots[0][1];
    }
    for pair in knots.windows(2) {
        let ([x0, y0], [x1, y1]) = (pair[0], pair[1]);
        if x <= x1 {
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    knots[knots.len() - 1][1]
}

fn check_knots(name: &str, knots: &[[f64; 2]]) -> Result<()> {
    if knots.is_empty() {
        return Err(config_err(alloc::format!("{name}: needs at least one knot")));
    }
    if knots.windows(2).any(|w| !(w[0][0] <= w[1][0])) {
        return Err(config_err(alloc::format!("{name}: knot positions must be sorted")));
    }
    if knots.iter().any(|k| !k[0].is_finite() || !k[1].is_finite() || k[1] < 0.0) {
        return Err(config_err(alloc::format!("{name}: knots must be finite and non-negative")));
    }
    Ok(())
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_score == 0 {
            return Err(config_err("max_score must be positive"));
        }
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return Err(config_err("arrival_rate must be finite and >= 0"));
        }
        check_knots("score_density", &self.score_density)?;
        check_knots("fraud_curve", &self.fraud_curve)?;
        if self.score_density.iter().all(|k| k[1] == 0.0) {
            return Err(config_err("score_density has no mass"));
        }
        if self.fraud_curve.iter().any(|k| k[1] > 1.0) {
            return Err(config_err("fraud_curve probabilities must be <= 1"));
        }
        if self.fraud_curve.windows(2).any(|w| w[1][1] < w[0][1]) {
            return Err(config_err("fraud_curve must be non-decreasing in score"));
        }
        let b = &self.bank;
        if ![b.base_logit, b.score_slope, b.feedback_slope, b.reference_rate, b.fraud_logit, b.fraud_feedback_slope]
            .iter()
            .all(|v| v.is_finite())
            || b.feedback_slope < 0.0
            || b.fraud_feedback_slope < 0.0
        {
            return Err(config_err("bank response parameters must be finite with feedback_slope >= 0"));
        }
        let r = &self.review;
        if ![r.legit_base, r.legit_slope, r.fraud_base, r.fraud_slope].iter().all(|v| v.is_finite())
            || !(0.0..=1.0).contains(&r.initial_fraud_share)
        {
            return Err(config_err("review response parameters must be finite, initial_fraud_share in [0, 1]"));
        }
        let a = &self.amounts;
        if !(a.margin_log_sd >= 0.0) || !a.margin_log_mean.is_finite() || !(a.goods_to_margin >= 0.0) || !(a.chargeback_fee >= 0.0)
        {
            return Err(config_err("amount model parameters invalid"));
        }
        if !(0.0..1.0).contains(&self.maturity.continue_prob) {
            return Err(config_err("maturity.continue_prob must lie in [0, 1)"));
        }
        if !(0 < self.feedback_lag && self.feedback_lag < self.maturity_horizon) {
            return Err(config_err("need 0 < feedback_lag < maturity_horizon"));
        }
        Ok(())
    }

    /// The simulator's lags must agree with the ones the policies assume.
    pub fn check_against(&self, costs: &CostParams) -> Result<()> {
        if self.feedback_lag != costs.partial_lag || self.maturity_horizon != costs.maturity_horizon {
            return Err(config_err("env feedback_lag/maturity_horizon must equal costs partial_lag/maturity_horizon"));
        }
        Ok(())
    }
}

/// Feedback state the bank and MR condition on during one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackInputs {
    /// Lag-l partially mature chargeback rate visible at the period start.
    pub partial_rate: f64,
    /// Fraud share of last period's bank-authorised reviewed stream.
    pub review_fraud_share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalLabel {
    FinalApproval,
    FinalRejection,
}

/// Ground-truth outcome of one transaction under one decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub transaction_id: u64,
    pub is_fraud: bool,
    pub bank_authorized: bool,
    pub mr_approved: Option<bool>,
    pub chargeback_lag: Option<u32>,
    pub final_label: FinalLabel,
}

impl OutcomeRecord {
    pub fn finally_approved(&self) -> bool {
        self.final_label == FinalLabel::FinalApproval
    }
}

/// Compiled, immutable form of an [`EnvConfig`].
#[derive(Debug, Clone)]
pub struct EnvModel {
    cfg: EnvConfig,
    fraud_prob: Vec<f64>,
    score_sampler: WeightedIndex<f64>,
    lag_cdf: Vec<f64>,
}

impl EnvModel {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.max_score as usize + 1;
        let frac = |s: usize| s as f64 / cfg.max_score as f64;
        let fraud_prob = (0..n).map(|s| interpolate(&cfg.fraud_curve, frac(s)).clamp(0.0, 1.0)).collect();
        let weights: Vec<f64> = (0..n).map(|s| interpolate(&cfg.score_density, frac(s)).max(0.0)).collect();
        let score_sampler = WeightedIndex::new(&weights).map_err(|_| config_err("score_density has no mass"))?;
        let p = cfg.maturity.continue_prob;
        let mut lag_cdf = Vec::with_capacity(cfg.maturity_horizon as usize + 1);
        let mut acc = 0.0;
        for k in 0..=cfg.maturity_horizon {
            acc += (1.0 - p) * libm::pow(p, f64::from(k));
            lag_cdf.push(acc);
        }
        let total = acc;
        for c in &mut lag_cdf {
            *c /= total;
        }
        Ok(Self { cfg, fraud_prob, score_sampler, lag_cdf })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn max_score(&self) -> u32 {
        self.cfg.max_score
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn fraud_prob(&self, score: u32) -> f64 {
        self.fraud_prob[score as usize]
    }

    /// Probability mass of each chargeback lag on [0, L].
    pub fn lag_pmf(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.lag_cdf
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn auth_prob(&self, score: u32, fb: &FeedbackInputs, is_fraud: bool) -> f64 {
        let b = &self.cfg.bank;
        let excess = (fb.partial_rate - b.reference_rate).max(0.0);
        let mut logit = b.base_logit - b.score_slope * f64::from(score) / f64::from(self.cfg.max_score) - b.feedback_slope * excess;
        if is_fraud {
            logit -= b.fraud_logit + b.fraud_feedback_slope * excess;
        }
        logistic(logit)
    }

    /// MR approval probabilities `(legit, fraud)` given the reviewed-stream fraud share.
    pub fn review_probs(&self, fb: &FeedbackInputs) -> (f64, f64) {
        let r = &self.cfg.review;
        let f = fb.review_fraud_share;
        ((r.legit_base - r.legit_slope * f).clamp(0.0, 1.0), (r.fraud_base + r.fraud_slope * f).clamp(0.0, 1.0))
    }

    /// Exact g-table implied by the feedback inputs.
    pub fn gtable_for(&self, fb: &FeedbackInputs, period: u32) -> GTable {
        let (mr_legit, mr_fraud) = self.review_probs(fb);
        let cells = (0..=self.cfg.max_score)
            .map(|s| {
                let pf = self.fraud_prob(s);
                let auth_legit = self.auth_prob(s, fb, false) * (1.0 - pf);
                let auth_fraud = self.auth_prob(s, fb, true) * pf;
                GCell {
                    auth_legit,
                    auth_fraud,
                    review_legit: auth_legit * mr_legit,
                    review_fraud: auth_fraud * mr_fraud,
                    auth: auth_legit + auth_fraud,
                }
            })
            .collect();
        GTable::from_cells(period, cells).expect("non-empty support")
    }

    /// Transactions arriving in `period`; a pure function of seed and period.
    pub fn transactions(&self, period: u32) -> Vec<Transaction> {
        let mut rng = keyed_rng(self.cfg.seed, u64::from(period), Stream::Arrivals);
        let count = if self.cfg.arrival_rate > 0.0 {
            let d = Poisson::new(self.cfg.arrival_rate).expect("validated rate");
            d.sample(&mut rng) as u32
        } else {
            0
        };
        let a = &self.cfg.amounts;
        let margin_dist = LogNormal::new(a.margin_log_mean, a.margin_log_sd).expect("validated amounts");
        (0..count)
            .map(|j| {
                let score = self.score_sampler.sample(&mut rng) as u32;
                let margin = margin_dist.sample(&mut rng);
                let cost = a.goods_to_margin * margin + a.chargeback_fee;
                Transaction { id: Transaction::make_id(period, j), score, margin, cost, period, arrival_index: j }
            })
            .collect()
    }

    fn sample_lag(&self, u: f64) -> u32 {
        self.lag_cdf.iter().position(|&c| u < c).unwrap_or(self.lag_cdf.len() - 1) as u32
    }

    /// Routes one transaction through bank and MR under the given feedback state.
    pub fn resolve_with(&self, w: &Transaction, d: Decision, fb: &FeedbackInputs) -> OutcomeRecord {
        let seed = self.cfg.seed;
        let is_fraud = keyed_uniform(seed, w.id, Stream::Fraud) < self.fraud_prob(w.score);
        let rejected = OutcomeRecord {
            transaction_id: w.id,
            is_fraud,
            bank_authorized: false,
            mr_approved: None,
            chargeback_lag: None,
            final_label: FinalLabel::FinalRejection,
        };
        if d == Decision::Reject {
            return rejected;
        }
        let authorized = keyed_uniform(seed, w.id, Stream::Bank) < self.auth_prob(w.score, fb, is_fraud);
        if !authorized {
            return rejected;
        }
        let (mr_approved, approved) = match d {
            Decision::Review => {
                let (legit, fraud) = self.review_probs(fb);
                let p = if is_fraud { fraud } else { legit };
                let ok = keyed_uniform(seed, w.id, Stream::Review) < p;
                (Some(ok), ok)
            }
            _ => (None, true),
        };
        let chargeback_lag =
            (approved && is_fraud).then(|| self.sample_lag(keyed_uniform(seed, w.id, Stream::Lag)));
        OutcomeRecord {
            transaction_id: w.id,
            is_fraud,
            bank_authorized: true,
            mr_approved,
            chargeback_lag,
            final_label: if approved { FinalLabel::FinalApproval } else { FinalLabel::FinalRejection },
        }
    }
}

/// Everything recorded about one elapsed or current period.
#[derive(Debug, Clone)]
pub struct PeriodBook {
    pub period: u32,
    pub feedback: FeedbackInputs,
    /// Per-score route and label counts, including flipped training outcomes.
    pub counts: Vec<ScoreCounts>,
    /// Finally approved frauds of this period, by chargeback lag.
    pub chargebacks_by_lag: Vec<u32>,
    /// Chargebacks that have occurred so far (driven by the pending heap).
    pub visible_chargebacks: u32,
    pub submitted: u32,
    pub finally_approved: u32,
    pub reviewed_authorized: u32,
    pub reviewed_authorized_fraud: u32,
    /// Ground-truth metrics of the engine's actual decisions.
    pub report: PeriodReport,
}

impl PeriodBook {
    fn new(period: u32, feedback: FeedbackInputs, max_score: u32, horizon: u32) -> Self {
        Self {
            period,
            feedback,
            counts: vec![ScoreCounts::default(); max_score as usize + 1],
            chargebacks_by_lag: vec![0; horizon as usize + 1],
            visible_chargebacks: 0,
            submitted: 0,
            finally_approved: 0,
            reviewed_authorized: 0,
            reviewed_authorized_fraud: 0,
            report: PeriodReport::empty(period),
        }
    }

    /// Finally approved frauds over non-rejected submissions, once mature.
    pub fn mature_chargeback_rate(&self) -> Option<f64> {
        let frauds: u32 = self.chargebacks_by_lag.iter().sum();
        (self.submitted > 0).then(|| f64::from(frauds) / f64::from(self.submitted))
    }

    /// Chargebacks that occurred before `as_of` over finally approved transactions.
    pub fn partial_chargeback_rate(&self, as_of: u32) -> Option<f64> {
        if self.finally_approved == 0 {
            return None;
        }
        let visible: u32 = self
            .chargebacks_by_lag
            .iter()
            .enumerate()
            .filter(|(k, _)| self.period + (*k as u32) < as_of)
            .map(|(_, n)| *n)
            .sum();
        Some(f64::from(visible) / f64::from(self.finally_approved))
    }
}

/// One logged transaction with its actual and (if flipped) training outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub transaction: Transaction,
    pub decision: Decision,
    pub outcome: OutcomeRecord,
    pub flipped: Option<OutcomeRecord>,
}

/// Mutable state of one simulated market, owned by a single decision stream.
#[derive(Debug, Clone)]
pub struct WorldState {
    period: u32,
    horizon: u32,
    lag: u32,
    review_cost: f64,
    books: Vec<PeriodBook>,
    pending: BinaryHeap<Reverse<(u32, u32)>>,
    log: Option<Vec<LogEntry>>,
    max_score: u32,
}

impl WorldState {
    pub fn new(model: &EnvModel, costs: &CostParams, keep_log: bool) -> Result<Self> {
        model.config().check_against(costs)?;
        let cfg = model.config();
        let feedback =
            FeedbackInputs { partial_rate: cfg.bank.reference_rate, review_fraud_share: cfg.review.initial_fraud_share };
        Ok(Self {
            period: 0,
            horizon: cfg.maturity_horizon,
            lag: cfg.feedback_lag,
            review_cost: costs.review_cost,
            books: vec![PeriodBook::new(0, feedback, cfg.max_score, cfg.maturity_horizon)],
            pending: BinaryHeap::new(),
            log: keep_log.then(Vec::new),
            max_score: cfg.max_score,
        })
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn partial_lag(&self) -> u32 {
        self.lag
    }

    pub fn max_score(&self) -> u32 {
        self.max_score
    }

    pub fn feedback(&self) -> FeedbackInputs {
        self.books[self.period as usize].feedback
    }

    pub fn book(&self, period: u32) -> Option<&PeriodBook> {
        self.books.get(period as usize)
    }

    pub fn books(&self) -> &[PeriodBook] {
        &self.books
    }

    pub fn log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    pub fn pending_chargebacks(&self) -> usize {
        self.pending.len()
    }

    /// Exact g-table of period `t`; periods not reached yet use the current feedback.
    pub fn true_gtable(&self, model: &EnvModel, t: u32) -> GTable {
        let fb = self.books.get(t as usize).map_or(self.feedback(), |b| b.feedback);
        model.gtable_for(&fb, t)
    }

    pub fn gen_period(&self, model: &EnvModel) -> Vec<Transaction> {
        model.transactions(self.period)
    }

    pub fn resolve(&self, model: &EnvModel, w: &Transaction, d: Decision) -> OutcomeRecord {
        let fb = self.books.get(w.period as usize).map_or(self.feedback(), |b| b.feedback);
        model.resolve_with(w, d, &fb)
    }

    /// Books a decided transaction. A `flipped` outcome is the as-approved
    /// realisation of a sampled rejection; it feeds the label counts only.
    pub fn record(&mut self, w: &Transaction, d: Decision, outcome: &OutcomeRecord, flipped: Option<&OutcomeRecord>) {
        let period = self.period;
        let book = &mut self.books[period as usize];
        book.report.accumulate(w, d, outcome, self.review_cost);
        let s = w.score as usize;
        match flipped {
            Some(f) => book.counts[s].add(Decision::Approve, f),
            None => book.counts[s].add(d, outcome),
        }
        if d != Decision::Reject {
            book.submitted += 1;
        }
        if outcome.finally_approved() {
            book.finally_approved += 1;
        }
        if d == Decision::Review && outcome.bank_authorized {
            book.reviewed_authorized += 1;
            if outcome.is_fraud {
                book.reviewed_authorized_fraud += 1;
            }
        }
        if let Some(k) = outcome.chargeback_lag {
            book.chargebacks_by_lag[k as usize] += 1;
            self.pending.push(Reverse((period + k, period)));
        }
        if let Some(log) = &mut self.log {
            log.push(LogEntry { transaction: *w, decision: d, outcome: *outcome, flipped: flipped.copied() });
        }
    }

    /// Closes the current period: chargebacks occurring in it become visible
    /// and the next period's feedback inputs are computed.
    pub fn advance_period(&mut self) {
        let ended = self.period;
        while let Some(Reverse((due, origin))) = self.pending.peek().copied() {
            if due > ended {
                break;
            }
            self.pending.pop();
            self.books[origin as usize].visible_chargebacks += 1;
        }
        let prev = self.books[ended as usize].feedback;
        let next = ended + 1;
        let partial_rate = next
            .checked_sub(self.lag)
            .and_then(|origin| self.books[origin as usize].partial_chargeback_rate(next))
            .unwrap_or(prev.partial_rate);
        let ended_book = &self.books[ended as usize];
        let review_fraud_share = if ended_book.reviewed_authorized > 0 {
            f64::from(ended_book.reviewed_authorized_fraud) / f64::from(ended_book.reviewed_authorized)
        } else {
            prev.review_fraud_share
        };
        self.period = next;
        self.books.push(PeriodBook::new(
            next,
            FeedbackInputs { partial_rate, review_fraud_share },
            self.max_score,
            self.horizon,
        ));
    }

    /// Whether every chargeback of `period` has occurred before `as_of`.
    pub fn is_mature(&self, period: u32, as_of: u32) -> bool {
        period + self.horizon < as_of
    }

    /// Label counts over `first..=last` as visible at `as_of`; errors when
    /// any period in range is still maturing.
    pub fn evidence(&self, first: u32, last: u32, as_of: u32) -> Result<Evidence> {
        if !self.is_mature(last, as_of) || as_of > self.period {
            return Err(crate::error::Error::Stale { period: last, as_of, horizon: self.horizon });
        }
        let mut ev = Evidence::empty(first, last, as_of, self.max_score);
        for p in first..=last {
            ev.merge_counts(&self.books[p as usize].counts);
        }
        Ok(ev)
    }

    /// Logged records of `first..=last` as an analyst would see them at `as_of`.
    ///
    /// Chargebacks that have not occurred before `as_of` are masked: the
    /// record shows no lag and a non-fraud status. Requires a kept log.
    pub fn labeled_slice(&self, first: u32, last: u32, as_of: u32) -> Result<LabeledSlice> {
        let log = self.log.as_ref().ok_or_else(|| config_err("world was created without a transaction log"))?;
        let records = log
            .iter()
            .filter(|e| (first..=last).contains(&e.transaction.period))
            .map(|e| {
                let mask = |o: OutcomeRecord| {
                    let mut o = o;
                    if let Some(k) = o.chargeback_lag {
                        if e.transaction.period + k >= as_of {
                            o.chargeback_lag = None;
                            o.is_fraud = false;
                        }
                    }
                    o
                };
                LabeledRecord {
                    transaction: e.transaction,
                    decision: e.decision,
                    outcome: mask(e.outcome),
                    flipped: e.flipped.map(mask),
                }
            })
            .collect();
        Ok(LabeledSlice { first_period: first, last_period: last, as_of, horizon: self.horizon, records })
    }
}
