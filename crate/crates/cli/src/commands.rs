//! The four subcommands. Each returns the process exit code on success.

use std::io::BufRead;
use std::path::Path;

use fraudctl_core::harness::{
    compare, run_replication, tune_lambda, ComparisonReport, ExperimentPlan, LambdaTuning, PolicySpec, Replication,
};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checks::oracle_suite;
use crate::config::{load, RunConfig, OUT_ENV};
use crate::output::{
    decision_rows, period_rows, plot_rows, strip_logs, transaction_rows, OutDir,
};
use crate::CliError;

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub tuning: Option<LambdaTuning>,
    pub comparison: ComparisonReport,
}

fn out_dir_for(cfg: &RunConfig) -> Result<OutDir, CliError> {
    OutDir::create(cfg.out_dir())
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
}

/// Runs every seed of the plan; results keep the plan's seed order.
pub fn run_seeds(plan: &ExperimentPlan, parallelism: usize) -> Result<Vec<Replication>, CliError> {
    plan.validate()?;
    let reps = pool(parallelism)?.install(|| {
        plan.seeds
            .par_iter()
            .map(|&s| {
                let r = run_replication(plan, s);
                info!("seed {s} done");
                r
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(reps)
}

/// Fixes λ of every Prospective policy that left it open.
fn apply_lambda(plan: &mut ExperimentPlan, lambda: f64) {
    for p in &mut plan.policies {
        if let PolicySpec::Prospective { lambda: l @ None } = p {
            *l = Some(lambda);
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:+.2}%"))
}

fn print_comparison(report: &ComparisonReport) {
    println!(
        "{:<16} {:>12} {:>11} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "policy", "mean profit", "vs base", "w/l", "sign p", "FN", "FP", "MR", "reviews"
    );
    for p in &report.policies {
        println!(
            "{:<16} {:>12.2} {:>11.2} {:>7} {:>9.2e} {:>9} {:>9} {:>9} {:>9}",
            p.label,
            p.mean_profit,
            p.profit_diff,
            format!("{}/{}", p.wins, p.losses),
            p.sign_test_p,
            fmt_opt(p.fn_pct),
            fmt_opt(p.fp_pct),
            fmt_opt(p.mr_pct),
            fmt_opt(p.review_pct)
        );
    }
}

/// Writes the aggregate files shared by `simulate` and `report`.
fn write_reports(
    out: &mut OutDir,
    plan: &ExperimentPlan,
    reps: &[Replication],
    tuning: Option<LambdaTuning>,
) -> Result<ComparisonReport, CliError> {
    let report = compare(plan, reps)?;
    out.write_csv("reports.csv", &report.policies)?;
    out.write_csv("periods.csv", &period_rows(reps))?;
    let (decisions, deltas) = plot_rows(plan, report.baseline, reps);
    out.write_csv("plot_decisions.csv", &decisions)?;
    out.write_csv("plot_deltas.csv", &deltas)?;
    let summary = Summary { seeds: report.seeds.clone(), tuning, comparison: report.clone() };
    out.write_json("summary.json", &summary)?;
    Ok(report)
}

pub fn simulate(config: &Path) -> Result<u8, CliError> {
    let loaded = load(config)?;
    let cfg = &loaded.config;
    let mut plan = cfg.plan();
    let tuning = if cfg.tune_lambda {
        let seed = plan.seeds[0];
        let t = tune_lambda(&plan, seed)?;
        info!("tuned lambda {} on seed {seed}", t.chosen);
        apply_lambda(&mut plan, t.chosen);
        Some(t)
    } else {
        None
    };
    let reps = run_seeds(&plan, cfg.parallelism)?;
    let mut out = out_dir_for(cfg)?;
    out.write("config.toml", loaded.source.as_bytes())?;
    out.write_json("plan.json", &plan)?;
    out.write_ndjson("replications.ndjson", reps.iter().map(strip_logs))?;
    if let Some(t) = &tuning {
        out.write_json("tuning.json", t)?;
    }
    let report = write_reports(&mut out, &plan, &reps, tuning)?;
    if cfg.output.transactions {
        out.write_ndjson("transactions.ndjson", transaction_rows(&reps))?;
    }
    if cfg.output.decisions {
        out.write_ndjson("decisions.ndjson", decision_rows(&reps))?;
    }
    print_comparison(&report);
    let dir = out.path().display().to_string();
    out.finish("simulate", &config.display().to_string(), &loaded.source, plan.seeds.clone())?;
    println!("wrote {dir}");
    Ok(0)
}

pub fn oracle_check(config: &Path) -> Result<u8, CliError> {
    let loaded = load(config)?;
    let cfg = &loaded.config;
    let plan = cfg.plan();
    let outcomes = oracle_suite(&cfg.oracle, &plan)?;
    println!("{:<30} {:<6} detail", "property", "result");
    for o in &outcomes {
        println!("{:<30} {:<6} {}", o.name, if o.passed { "pass" } else { "FAIL" }, o.detail);
    }
    let mut out = out_dir_for(cfg)?;
    out.write_csv("oracle_check.csv", &outcomes)?;
    out.finish("oracle-check", &config.display().to_string(), &loaded.source, vec![cfg.oracle.seed])?;
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 1 })
}

pub fn tune(config: &Path) -> Result<u8, CliError> {
    let loaded = load(config)?;
    let cfg = &loaded.config;
    let plan = cfg.plan();
    let seed = plan.seeds[0];
    let t = tune_lambda(&plan, seed)?;
    println!("{:<10} {:>16}", "lambda", "held-out profit");
    for (l, v) in t.grid.iter().zip(&t.mean_profit) {
        println!("{l:<10} {v:>16.2}");
    }
    println!("chosen lambda {} (seed {seed}, {} folds)", t.chosen, t.folds.len());
    let mut out = out_dir_for(cfg)?;
    out.write_json("tuning.json", &t)?;
    out.finish("tune-lambda", &config.display().to_string(), &loaded.source, vec![seed])?;
    Ok(0)
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Rebuilds the aggregate files from a `simulate` output directory.
pub fn report(dir: &Path) -> Result<u8, CliError> {
    let plan_src = read_file(&dir.join("plan.json"))?;
    let plan: ExperimentPlan = serde_json::from_slice(&plan_src)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.join("plan.json").display())))?;
    let reps_path = dir.join("replications.ndjson");
    let reps_src = read_file(&reps_path)?;
    let mut reps = Vec::new();
    for (i, line) in reps_src.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rep: Replication = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", reps_path.display(), i + 1)))?;
        reps.push(rep);
    }
    let tuning_path = dir.join("tuning.json");
    let tuning = if tuning_path.exists() {
        Some(serde_json::from_slice(&read_file(&tuning_path)?).map_err(|e| CliError::Config(e.to_string()))?)
    } else {
        None
    };
    let target = match std::env::var(OUT_ENV) {
        Ok(v) if !v.is_empty() => v.into(),
        _ => dir.to_path_buf(),
    };
    let mut out = OutDir::create(target)?;
    let report = write_reports(&mut out, &plan, &reps, tuning)?;
    print_comparison(&report);
    let plan_text = String::from_utf8_lossy(&plan_src).into_owned();
    out.finish("report", &dir.join("plan.json").display().to_string(), &plan_text, report.seeds.clone())?;
    Ok(0)
}
