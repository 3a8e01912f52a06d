//! Estimating g-functions from mature labels and computing chargeback-rate
//! statistics and realised period metrics.
//!
//! Label populations per event group:
//! - non-rejected transactions (plus flipped rejections, counted as
//!   approved) give `auth_legit`, `auth_fraud` and `auth`. The bank acts
//!   before any review, and the fraud status of a declined review is taken
//!   as known, as it is under the flipping protocol.
//! - reviewed transactions give `review_legit` / `review_fraud`.
//!
//! Score cells without data borrow from the nearest populated score (ties go
//! to the lower score); the result is then projected onto the coherent set.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_gtable, CostParams, Decision, GCell, GTable, Transaction};
use crate::sim::OutcomeRecord;

/// Route and label counts at one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    /// Non-rejected transactions, the population of `auth_legit` / `auth_fraud`.
    pub submitted: u32,
    pub auth_legit: u32,
    pub auth_fraud: u32,
    pub reviewed: u32,
    pub review_accept_legit: u32,
    pub review_accept_fraud: u32,
}

impl ScoreCounts {
    /// Counts one outcome reached through `route`.
    pub fn add(&mut self, route: Decision, o: &OutcomeRecord) {
        if route == Decision::Reject {
            return;
        }
        self.submitted += 1;
        if o.bank_authorized {
            if o.is_fraud {
                self.auth_fraud += 1;
            } else {
                self.auth_legit += 1;
            }
        }
        if route == Decision::Review {
            self.reviewed += 1;
            if o.bank_authorized && o.mr_approved == Some(true) {
                if o.is_fraud {
                    self.review_accept_fraud += 1;
                } else {
                    self.review_accept_legit += 1;
                }
            }
        }
    }

    pub fn submitted_auth(&self) -> u32 {
        self.auth_legit + self.auth_fraud
    }

    pub fn merge(&mut self, o: &ScoreCounts) {
        self.submitted += o.submitted;
        self.auth_legit += o.auth_legit;
        self.auth_fraud += o.auth_fraud;
        self.reviewed += o.reviewed;
        self.review_accept_legit += o.review_accept_legit;
        self.review_accept_fraud += o.review_accept_fraud;
    }
}

/// Per-score counts over a period range, stamped with the query time.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub first_period: u32,
    pub last_period: u32,
    pub as_of: u32,
    pub counts: Vec<ScoreCounts>,
}

impl Evidence {
    pub fn empty(first_period: u32, last_period: u32, as_of: u32, max_score: u32) -> Self {
        Self { first_period, last_period, as_of, counts: vec![ScoreCounts::default(); max_score as usize + 1] }
    }

    pub fn merge_counts(&mut self, counts: &[ScoreCounts]) {
        for (a, b) in self.counts.iter_mut().zip(counts) {
            a.merge(b);
        }
    }

    /// Pools counts over consecutive score bins of `width` and gives every
    /// score its bin's totals, so estimates become bin averages.
    pub fn pooled(&self, width: u32) -> Self {
        let width = width.max(1) as usize;
        let mut counts = self.counts.clone();
        for chunk in counts.chunks_mut(width) {
            let mut total = ScoreCounts::default();
            for c in chunk.iter() {
                total.merge(c);
            }
            chunk.fill(total);
        }
        Self { counts, ..*self }
    }
}

/// One transaction as visible at the slice's query time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledRecord {
    pub transaction: Transaction,
    pub decision: Decision,
    pub outcome: OutcomeRecord,
    /// As-approved outcome of a flipped rejection.
    pub flipped: Option<OutcomeRecord>,
}

impl LabeledRecord {
    pub fn is_mature(&self, as_of: u32, horizon: u32) -> bool {
        self.transaction.period + horizon < as_of
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSlice {
    pub first_period: u32,
    pub last_period: u32,
    pub as_of: u32,
    pub horizon: u32,
    pub records: Vec<LabeledRecord>,
}

impl LabeledSlice {
    pub fn is_mature(&self) -> bool {
        self.last_period + self.horizon < self.as_of
    }

    fn require_mature(&self) -> Result<()> {
        if self.is_mature() {
            Ok(())
        } else {
            Err(Error::Stale { period: self.last_period, as_of: self.as_of, horizon: self.horizon })
        }
    }

    pub fn evidence(&self, max_score: u32) -> Result<Evidence> {
        let mut ev = Evidence::empty(self.first_period, self.last_period, self.as_of, max_score);
        for r in &self.records {
            let slot = ev.counts.get_mut(r.transaction.score as usize).ok_or(Error::ScoreOutOfRange {
                score: r.transaction.score,
                max_score,
            })?;
            match &r.flipped {
                Some(f) => slot.add(Decision::Approve, f),
                None => slot.add(r.decision, &r.outcome),
            }
        }
        Ok(ev)
    }
}

/// Mature g-tables ordered by period.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GTrajectory {
    tables: Vec<GTable>,
}

impl GTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tables(tables: Vec<GTable>) -> Result<Self> {
        let mut t = Self::new();
        for g in tables {
            t.push(g)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, g: GTable) -> Result<()> {
        if let Some(last) = self.tables.last() {
            if g.period <= last.period {
                return Err(Error::Config(format!("trajectory period {} does not follow {}", g.period, last.period)));
            }
            if g.max_score() != last.max_score() {
                return Err(Error::Config("trajectory tables disagree on score support".into()));
            }
        }
        if let Some(v) = validate_gtable(&g).first() {
            return Err(Error::Config(format!("incoherent g-table at score {}: {:?}", v.score, v.rule)));
        }
        self.tables.push(g);
        Ok(())
    }

    pub fn tables(&self) -> &[GTable] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn last_period(&self) -> Option<u32> {
        self.tables.last().map(|g| g.period)
    }

    pub fn max_score(&self) -> Option<u32> {
        self.tables.first().map(GTable::max_score)
    }

    pub fn get(&self, period: u32) -> Option<&GTable> {
        let first = self.tables.first()?.period;
        let idx = period.checked_sub(first)? as usize;
        match self.tables.get(idx) {
            Some(g) if g.period == period => Some(g),
            _ => self.tables.iter().find(|g| g.period == period),
        }
    }
}

/// Fills `None` cells from the nearest populated score (ties to the lower one).
fn fill_nearest<const K: usize>(raw: &[Option<[f64; K]>]) -> Option<Vec<[f64; K]>> {
    let n = raw.len();
    let mut left: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if raw[i].is_some() {
            last = Some(i);
        }
        left[i] = last;
    }
    let mut right: Vec<Option<usize>> = vec![None; n];
    last = None;
    for i in (0..n).rev() {
        if raw[i].is_some() {
            last = Some(i);
        }
        right[i] = last;
    }
    (0..n)
        .map(|i| {
            let src = match (left[i], right[i]) {
                (Some(l), Some(r)) => {
                    if i - l <= r - i {
                        l
                    } else {
                        r
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => return None,
            };
            raw[src]
        })
        .collect()
}

fn ratio(num: u32, den: u32) -> f64 {
    f64::from(num) / f64::from(den)
}

/// g-table from mature evidence.
///
/// `fallback` supplies the review columns when no score in range was
/// reviewed; without one they are zero. Evidence without any non-rejected
/// transaction is an error.
pub fn estimate_from_evidence(ev: &Evidence, fallback: Option<&GTable>) -> Result<GTable> {
    let approve: Vec<Option<[f64; 2]>> = ev
        .counts
        .iter()
        .map(|c| (c.submitted > 0).then(|| [ratio(c.auth_legit, c.submitted), ratio(c.auth_fraud, c.submitted)]))
        .collect();
    let review: Vec<Option<[f64; 2]>> = ev
        .counts
        .iter()
        .map(|c| {
            (c.reviewed > 0)
                .then(|| [ratio(c.review_accept_legit, c.reviewed), ratio(c.review_accept_fraud, c.reviewed)])
        })
        .collect();

    let approve = fill_nearest(&approve)
        .ok_or_else(|| Error::InsufficientData("no non-rejected transactions in range".into()))?;
    let review = match (fill_nearest(&review), fallback) {
        (Some(v), _) => v,
        (None, Some(fb)) => fb.cells().iter().map(|c| [c.review_legit, c.review_fraud]).collect(),
        (None, None) => vec![[0.0, 0.0]; ev.counts.len()],
    };
    if review.len() != ev.counts.len() {
        return Err(Error::Config("fallback table support differs from evidence".into()));
    }
    let cells = (0..ev.counts.len())
        .map(|s| {
            GCell {
                auth_legit: approve[s][0],
                auth_fraud: approve[s][1],
                review_legit: review[s][0],
                review_fraud: review[s][1],
                auth: approve[s][0] + approve[s][1],
            }
            .project_coherent()
        })
        .collect();
    GTable::from_cells(ev.last_period, cells)
}

/// g-table from a fully mature labeled slice.
pub fn estimate_g_mature(data: &LabeledSlice, max_score: u32) -> Result<GTable> {
    data.require_mature()?;
    estimate_from_evidence(&data.evidence(max_score)?, None)
}

/// Partially mature chargeback rate of a single-period slice: chargebacks
/// that occurred before `as_of` over finally approved transactions.
pub fn rho_pcb(data: &LabeledSlice) -> Result<f64> {
    if data.first_period != data.last_period {
        return Err(Error::Config("partial chargeback rate needs a single-period slice".into()));
    }
    let mut approved = 0u32;
    let mut visible = 0u32;
    for r in &data.records {
        if r.outcome.finally_approved() {
            approved += 1;
            if matches!(r.outcome.chargeback_lag, Some(k) if r.transaction.period + k < data.as_of) {
                visible += 1;
            }
        }
    }
    if approved == 0 {
        return Err(Error::UndefinedRate { period: data.first_period });
    }
    Ok(ratio(visible, approved))
}

/// Realised losses and profit of the engine's actual decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period: u32,
    pub transactions: u32,
    pub approved: u32,
    pub reviewed: u32,
    pub rejected: u32,
    pub finally_approved: u32,
    pub finally_approved_frauds: u32,
    /// Costs of finally approved frauds.
    pub fn_loss: f64,
    /// Margins of legit transactions rejected by the engine or declined by MR.
    pub fp_loss: f64,
    /// Review labour on bank-authorised reviews.
    pub mr_cost: f64,
    /// Margins of finally approved legit transactions.
    pub earned_margin: f64,
    pub profit: f64,
    pub chargeback_rate: f64,
}

impl PeriodReport {
    pub fn empty(period: u32) -> Self {
        Self {
            period,
            transactions: 0,
            approved: 0,
            reviewed: 0,
            rejected: 0,
            finally_approved: 0,
            finally_approved_frauds: 0,
            fn_loss: 0.0,
            fp_loss: 0.0,
            mr_cost: 0.0,
            earned_margin: 0.0,
            profit: 0.0,
            chargeback_rate: 0.0,
        }
    }

    pub fn accumulate(&mut self, w: &Transaction, d: Decision, o: &OutcomeRecord, review_cost: f64) {
        self.transactions += 1;
        match d {
            Decision::Approve => self.approved += 1,
            Decision::Review => self.reviewed += 1,
            Decision::Reject => self.rejected += 1,
        }
        if o.finally_approved() {
            self.finally_approved += 1;
            if o.is_fraud {
                self.finally_approved_frauds += 1;
                self.fn_loss += w.cost;
            } else {
                self.earned_margin += w.margin;
            }
        }
        let mr_declined = d == Decision::Review && o.mr_approved == Some(false);
        if !o.is_fraud && (d == Decision::Reject || mr_declined) {
            self.fp_loss += w.margin;
        }
        if d == Decision::Review && o.bank_authorized {
            self.mr_cost += review_cost;
        }
        self.refresh();
    }

    fn refresh(&mut self) {
        self.profit = self.earned_margin - self.fn_loss - self.mr_cost;
        self.chargeback_rate = if self.finally_approved > 0 {
            f64::from(self.finally_approved_frauds) / f64::from(self.finally_approved)
        } else {
            0.0
        };
    }

    /// Adds another report's totals into this one.
    pub fn merge(&mut self, o: &PeriodReport) {
        self.transactions += o.transactions;
        self.approved += o.approved;
        self.reviewed += o.reviewed;
        self.rejected += o.rejected;
        self.finally_approved += o.finally_approved;
        self.finally_approved_frauds += o.finally_approved_frauds;
        self.fn_loss += o.fn_loss;
        self.fp_loss += o.fp_loss;
        self.mr_cost += o.mr_cost;
        self.earned_margin += o.earned_margin;
        self.refresh();
    }
}

pub fn realized_metrics(data: &LabeledSlice, costs: &CostParams) -> Result<PeriodReport> {
    let mut report = PeriodReport::empty(data.first_period);
    if data.records.is_empty() {
        return Ok(report);
    }
    data.require_mature()?;
    for r in &data.records {
        report.accumulate(&r.transaction, r.decision, &r.outcome, costs.review_cost);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FinalLabel;

    fn outcome(id: u64, fraud: bool, auth: bool, mr: Option<bool>, lag: Option<u32>) -> OutcomeRecord {
        let approved = auth && mr.unwrap_or(true);
        OutcomeRecord {
            transaction_id: id,
            is_fraud: fraud,
            bank_authorized: auth,
            mr_approved: mr,
            chargeback_lag: lag,
            final_label: if approved { FinalLabel::FinalApproval } else { FinalLabel::FinalRejection },
        }
    }

    fn rec(period: u32, score: u32, d: Decision, o: OutcomeRecord) -> LabeledRecord {
        let w = Transaction::new(o.transaction_id, score, 10.0, 100.0, period, 0).unwrap();
        LabeledRecord { transaction: w, decision: d, outcome: o, flipped: None }
    }

    fn slice(first: u32, last: u32, as_of: u32, records: Vec<LabeledRecord>) -> LabeledSlice {
        LabeledSlice { first_period: first, last_period: last, as_of, horizon: 12, records }
    }

    #[test]
    fn empirical_frequency_and_pooling() {
        let mut records = Vec::new();
        for i in 0..100u64 {
            let legit = i < 90;
            records.push(rec(0, 300, Decision::Approve, outcome(i, !legit, legit, None, (!legit).then_some(0))));
        }
        let g = estimate_g_mature(&slice(0, 0, 13, records), 400).unwrap();
        assert!((g.cell(300).unwrap().auth_legit - 0.9).abs() < 1e-12);
        assert_eq!(g.cell(301).unwrap(), g.cell(300).unwrap());
        assert_eq!(g.cell(0).unwrap(), g.cell(300).unwrap());
        assert!(validate_gtable(&g).is_empty());
    }

    #[test]
    fn nearest_pooling_ties_go_low() {
        let raw = [Some([1.0]), None, Some([3.0]), None, None, None, Some([7.0])];
        let filled = fill_nearest(&raw).unwrap();
        let v: Vec<f64> = filled.iter().map(|x| x[0]).collect();
        assert_eq!(v, [1.0, 1.0, 3.0, 3.0, 3.0, 7.0, 7.0]);
    }

    #[test]
    fn immature_slice_is_stale() {
        let s = slice(0, 5, 10, vec![rec(5, 1, Decision::Approve, outcome(0, false, true, None, None))]);
        assert!(matches!(estimate_g_mature(&s, 10), Err(Error::Stale { .. })));
        assert!(matches!(realized_metrics(&s, &CostParams::default()), Err(Error::Stale { .. })));
    }

    #[test]
    fn all_rejected_is_insufficient() {
        let s = slice(0, 0, 13, vec![rec(0, 1, Decision::Reject, outcome(0, false, false, None, None))]);
        assert!(matches!(estimate_g_mature(&s, 10), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn review_columns_from_reviews_only_bank_columns_from_all_submitted() {
        let records = vec![
            rec(0, 2, Decision::Approve, outcome(0, false, true, None, None)),
            rec(0, 2, Decision::Review, outcome(1, false, true, Some(true), None)),
            rec(0, 2, Decision::Review, outcome(2, false, true, Some(false), None)),
            rec(0, 2, Decision::Review, outcome(3, false, false, None, None)),
        ];
        let g = estimate_g_mature(&slice(0, 0, 13, records), 3).unwrap();
        let c = g.cell(2).unwrap();
        assert!((c.auth_legit - 0.75).abs() < 1e-12);
        assert!((c.review_legit - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.auth - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pcb_ratio_cases() {
        let mut records = Vec::new();
        for i in 0..150u64 {
            let lag = match i {
                0..=2 => Some(0),
                3..=5 => Some(4),
                _ => None,
            };
            records.push(rec(10, 5, Decision::Approve, outcome(i, lag.is_some(), true, None, lag)));
        }
        // As of period 12 only lag-0 and lag-1 chargebacks of period 10 have occurred.
        assert!((rho_pcb(&slice(10, 10, 12, records.clone())).unwrap() - 0.02).abs() < 1e-12);
        assert!((rho_pcb(&slice(10, 10, 15, records)).unwrap() - 0.04).abs() < 1e-12);

        let clean: Vec<_> = (0..10).map(|i| rec(3, 5, Decision::Approve, outcome(i, false, true, None, None))).collect();
        assert_eq!(rho_pcb(&slice(3, 3, 5, clean)).unwrap(), 0.0);

        let none = vec![rec(3, 5, Decision::Reject, outcome(0, false, false, None, None))];
        assert_eq!(rho_pcb(&slice(3, 3, 5, none)), Err(Error::UndefinedRate { period: 3 }));
    }

    #[test]
    fn metrics_cases() {
        let costs = CostParams::default();
        assert_eq!(realized_metrics(&slice(0, 0, 13, vec![]), &costs).unwrap(), PeriodReport::empty(0));

        let r = realized_metrics(
            &slice(0, 0, 13, vec![rec(0, 5, Decision::Approve, outcome(0, true, true, None, Some(3)))]),
            &costs,
        )
        .unwrap();
        assert_eq!((r.fn_loss, r.profit), (100.0, -100.0));
        assert_eq!(r.chargeback_rate, 1.0);

        let r = realized_metrics(
            &slice(0, 0, 13, vec![rec(0, 5, Decision::Review, outcome(0, false, false, None, None))]),
            &costs,
        )
        .unwrap();
        assert_eq!(r.mr_cost, 0.0);

        let r = realized_metrics(
            &slice(0, 0, 13, vec![rec(0, 5, Decision::Review, outcome(0, false, true, Some(false), None))]),
            &costs,
        )
        .unwrap();
        assert_eq!((r.mr_cost, r.fp_loss, r.profit), (5.0, 10.0, -5.0));
    }

    #[test]
    fn trajectory_rejects_disorder() {
        let mut t = GTrajectory::new();
        t.push(GTable::zeros(3, 4)).unwrap();
        assert!(t.push(GTable::zeros(3, 4)).is_err());
        assert!(t.push(GTable::zeros(4, 5)).is_err());
        t.push(GTable::zeros(3, 6)).unwrap();
        assert_eq!(t.get(6).unwrap().period, 6);
        assert!(t.get(5).is_none());
    }
}
