//! Files written by the commands.
//!
//! Every file is produced in memory and written once, so its hash can go
//! into the manifest. Floats are printed in shortest round-trip form and no
//! file carries a timestamp, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use fraudctl_core::harness::{ExperimentPlan, Replication};
use fraudctl_core::model::Decision;
use fraudctl_core::sim::FinalLabel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub config_file: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
}

/// An output directory that remembers what was written to it.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(FileEntry { name: name.into(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn write_ndjson<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut bytes, &r)?;
            bytes.push(b'\n');
        }
        self.write(name, &bytes)
    }

    /// Writes `<command>.manifest.json` listing every file written so far.
    pub fn finish(
        mut self,
        command: &str,
        config_file: &str,
        config_source: &str,
        seeds: Vec<u64>,
    ) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            artifact: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_file: config_file.into(),
            config_sha256: sha256_hex(config_source.as_bytes()),
            seeds,
            files: std::mem::take(&mut self.files),
        };
        let name = format!("{command}.manifest.json");
        self.write_json(&name, &manifest)?;
        Ok(self.root.join(name))
    }
}

/// One policy-period of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    pub seed: u64,
    pub policy: String,
    pub period: u32,
    pub transactions: u32,
    pub approved: u32,
    pub reviewed: u32,
    pub rejected: u32,
    pub finally_approved: u32,
    pub finally_approved_frauds: u32,
    pub fn_loss: f64,
    pub fp_loss: f64,
    pub mr_cost: f64,
    pub earned_margin: f64,
    pub profit: f64,
    pub chargeback_rate: f64,
    pub mature_chargeback_rate: Option<f64>,
    pub trained_through: Option<u32>,
    pub table_error: Option<f64>,
}

pub fn period_rows(reps: &[Replication]) -> Vec<PeriodRow> {
    let mut rows = Vec::new();
    for rep in reps {
        for run in &rep.runs {
            for (i, r) in run.reports.iter().enumerate() {
                let audit = run.audits.get(i);
                rows.push(PeriodRow {
                    seed: rep.seed,
                    policy: run.label.clone(),
                    period: r.period,
                    transactions: r.transactions,
                    approved: r.approved,
                    reviewed: r.reviewed,
                    rejected: r.rejected,
                    finally_approved: r.finally_approved,
                    finally_approved_frauds: r.finally_approved_frauds,
                    fn_loss: r.fn_loss,
                    fp_loss: r.fp_loss,
                    mr_cost: r.mr_cost,
                    earned_margin: r.earned_margin,
                    profit: r.profit,
                    chargeback_rate: r.chargeback_rate,
                    mature_chargeback_rate: run.mature_chargeback_rates.get(i).copied().flatten(),
                    trained_through: audit.and_then(|a| a.trained_through),
                    table_error: audit.and_then(|a| a.table_error),
                });
            }
        }
    }
    rows
}

/// Mean decision counts per policy and test-window step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionPlotRow {
    pub policy: String,
    pub step: u32,
    pub approved: f64,
    pub reviewed: f64,
    pub rejected: f64,
}

/// Mean per-step loss differences against the baseline, and the pooled
/// percentage differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaPlotRow {
    pub policy: String,
    pub step: u32,
    pub fn_delta: f64,
    pub fp_delta: f64,
    pub mr_delta: f64,
    pub fn_pct: Option<f64>,
    pub fp_pct: Option<f64>,
    pub mr_pct: Option<f64>,
}

fn pct(policy: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (policy - base) / base)
}

pub fn plot_rows(plan: &ExperimentPlan, baseline: usize, reps: &[Replication]) -> (Vec<DecisionPlotRow>, Vec<DeltaPlotRow>) {
    let n = reps.len() as f64;
    let mut decisions = Vec::new();
    let mut deltas = Vec::new();
    for (i, spec) in plan.policies.iter().enumerate() {
        for step in 0..plan.periods as usize {
            let (mut app, mut rev, mut rej) = (0.0, 0.0, 0.0);
            let (mut f, mut p, mut m) = (0.0, 0.0, 0.0);
            let (mut bf, mut bp, mut bm) = (0.0, 0.0, 0.0);
            for rep in reps {
                let r = &rep.runs[i].reports[step];
                let b = &rep.runs[baseline].reports[step];
                app += f64::from(r.approved);
                rev += f64::from(r.reviewed);
                rej += f64::from(r.rejected);
                (f, p, m) = (f + r.fn_loss, p + r.fp_loss, m + r.mr_cost);
                (bf, bp, bm) = (bf + b.fn_loss, bp + b.fp_loss, bm + b.mr_cost);
            }
            decisions.push(DecisionPlotRow {
                policy: spec.label(),
                step: step as u32,
                approved: app / n,
                reviewed: rev / n,
                rejected: rej / n,
            });
            deltas.push(DeltaPlotRow {
                policy: spec.label(),
                step: step as u32,
                fn_delta: (f - bf) / n,
                fp_delta: (p - bp) / n,
                mr_delta: (m - bm) / n,
                fn_pct: pct(f, bf),
                fp_pct: pct(p, bp),
                mr_pct: pct(m, bm),
            });
        }
    }
    (decisions, deltas)
}

/// One test-window arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRow {
    pub seed: u64,
    pub id: u64,
    pub period: u32,
    pub arrival_index: u32,
    pub score: u32,
    pub margin: f64,
    pub cost: f64,
}

pub fn transaction_rows(reps: &[Replication]) -> impl Iterator<Item = TransactionRow> + '_ {
    reps.iter().flat_map(|rep| {
        rep.transactions.iter().map(move |w| TransactionRow {
            seed: rep.seed,
            id: w.id,
            period: w.period,
            arrival_index: w.arrival_index,
            score: w.score,
            margin: w.margin,
            cost: w.cost,
        })
    })
}

/// One decision of one policy with its realised outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub seed: u64,
    pub policy: String,
    pub period: u32,
    pub transaction_id: u64,
    pub decision: Decision,
    pub reward_approve: f64,
    pub reward_review: f64,
    pub reward_reject: f64,
    /// Prospective values `[approve, review, reject]` when the policy used them.
    pub prospective_values: Option<[f64; 3]>,
    pub is_fraud: bool,
    pub bank_authorized: bool,
    pub mr_approved: Option<bool>,
    pub chargeback_lag: Option<u32>,
    pub final_label: FinalLabel,
    pub flipped: bool,
}

pub fn decision_rows(reps: &[Replication]) -> impl Iterator<Item = DecisionRow> + '_ {
    reps.iter().flat_map(|rep| {
        rep.runs.iter().flat_map(move |run| {
            run.log.iter().map(move |e| DecisionRow {
                seed: rep.seed,
                policy: run.label.clone(),
                period: e.period,
                transaction_id: e.record.transaction_id,
                decision: e.record.decision,
                reward_approve: e.record.rewards.approve,
                reward_review: e.record.rewards.review,
                reward_reject: e.record.rewards.reject,
                prospective_values: e.record.prospective.map(|p| p.values),
                is_fraud: e.outcome.is_fraud,
                bank_authorized: e.outcome.bank_authorized,
                mr_approved: e.outcome.mr_approved,
                chargeback_lag: e.outcome.chargeback_lag,
                final_label: e.outcome.final_label,
                flipped: e.flipped,
            })
        })
    })
}

/// A replication without its bulky logs, as stored in `replications.ndjson`.
pub fn strip_logs(rep: &Replication) -> Replication {
    let mut r = rep.clone();
    r.transactions.clear();
    for run in &mut r.runs {
        run.log.clear();
    }
    r
}
