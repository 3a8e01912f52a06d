//! Run configuration files.
//!
//! A config is one TOML document. Top-level keys control the run; the
//! `[experiment]` table (with `[experiment.env]`, `[experiment.costs]`,
//! `[experiment.regressor]` and `[[experiment.policies]]`) is the plan
//! handed to the harness. Every table rejects unknown keys.

use std::path::Path;

use fraudctl_core::harness::ExperimentPlan;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable overriding `output.dir`.
pub const OUT_ENV: &str = "FRAUDCTL_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Write `transactions.ndjson` for the test window.
    pub transactions: bool,
    /// Write `decisions.ndjson`, one row per policy and transaction.
    pub decisions: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), transactions: false, decisions: false }
    }
}

/// Sizes of the `oracle-check` property suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub seed: u64,
    /// Random batches compared against enumeration.
    pub batches: usize,
    /// Largest batch enumerated; above 8 is a size error.
    pub max_batch: usize,
    /// Random toy MDPs solved from two starting points.
    pub toy_mdps: usize,
    pub tolerance: f64,
    /// Random instances for the zero-discount and invariance checks.
    pub instances: usize,
    /// Swap the greedy tie-break to approve-first. Used to check that the
    /// suite notices.
    pub inject_tie_break_fault: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            batches: 1000,
            max_batch: 8,
            toy_mdps: 50,
            tolerance: 1e-9,
            instances: 500,
            inject_tie_break_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run this single seed instead of `experiment.seeds`.
    pub seed: Option<u64>,
    /// Worker threads across seeds; 0 means one per core.
    pub parallelism: usize,
    /// Tune λ on the first seed and use it for Prospective policies that
    /// do not fix their own.
    pub tune_lambda: bool,
    pub output: OutputConfig,
    pub oracle: OracleConfig,
    pub experiment: ExperimentPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            parallelism: 0,
            tune_lambda: false,
            output: OutputConfig::default(),
            oracle: OracleConfig::default(),
            experiment: ExperimentPlan::default(),
        }
    }
}

/// A parsed config together with the bytes it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub source: String,
}

impl RunConfig {
    /// The plan with run-level overrides applied.
    pub fn plan(&self) -> ExperimentPlan {
        let mut plan = self.experiment.clone();
        if let Some(seed) = self.seed {
            plan.seeds = vec![seed];
        }
        plan.keep_logs |= self.output.transactions || self.output.decisions;
        plan
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.plan().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let o = &self.oracle;
        if !(o.tolerance > 0.0) {
            return Err(CliError::Config("oracle.tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Output directory, with the environment override applied.
    pub fn out_dir(&self) -> String {
        match std::env::var(OUT_ENV) {
            Ok(v) if !v.is_empty() => v,
            _ => self.output.dir.clone(),
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

pub fn parse(src: &str, name: &str) -> Result<RunConfig, CliError> {
    toml::from_str::<RunConfig>(src).map_err(|e| {
        let msg = e.message().trim().to_string();
        match e.span() {
            Some(span) => {
                let (line, col) = line_col(src, span.start);
                CliError::Config(format!("{name}:{line}:{col}: {msg}"))
            }
            None => CliError::Config(format!("{name}: {msg}")),
        }
    })
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse(&source, &path.display().to_string())?;
    config.validate()?;
    Ok(Loaded { config, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(parse("", "x").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let src = "seed = 3\n\n[experiment]\nperiods = 4\nbogus = 1\n";
        let err = parse(src, "run.toml").unwrap_err().to_string();
        assert!(err.contains("run.toml:5:"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn nested_sections_parse() {
        let src = r#"
parallelism = 2
[output]
decisions = true
[experiment]
periods = 3
seeds = [4, 5]
[experiment.costs]
review_cost = 7.5
[experiment.env]
arrival_rate = 900.0
[[experiment.policies]]
kind = "baseline"
high = 900
[[experiment.policies]]
kind = "prospective"
lambda = 0.0
"#;
        let c = parse(src, "x").unwrap();
        assert_eq!(c.experiment.costs.review_cost, 7.5);
        assert_eq!(c.experiment.costs.maturity_horizon, 12);
        assert_eq!(c.experiment.env.arrival_rate, 900.0);
        assert_eq!(c.experiment.policies.len(), 2);
        assert!(c.plan().keep_logs);
        assert_eq!(RunConfig { seed: Some(9), ..c }.plan().seeds, vec![9]);
    }

    #[test]
    fn plan_violations_are_config_errors() {
        let c = parse("[experiment]\nflip_fraction = 0.2\n", "x").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("ab", 0), (1, 1));
    }
}
