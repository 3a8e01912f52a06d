//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in
//! order and their lines do not interleave. Exits non-zero when a hard
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fraudctl::checks::{bellman_fixed_point, degenerate_streams, greedy_optimality};
use fraudctl::commands::run_seeds;
use fraudctl::config::OracleConfig;
use fraudctl_core::estimation::{estimate_g_mature, GTrajectory};
use fraudctl_core::harness::{compare, ComparisonReport, ExperimentPlan};
use fraudctl_core::inference::{fit_cei, fit_fei, RegressorConfig};
use fraudctl_core::model::{CostParams, Decision, GCell, GTable};
use fraudctl_core::policies::{baseline_decide, ProspectiveObjective};
use fraudctl_core::inference::RateResponse;
use fraudctl_core::sim::{keyed_uniform, EnvConfig, EnvModel, Stream, WorldState};

struct Line {
    id: &'static str,
    passed: bool,
    hard: bool,
    detail: String,
}

fn report(id: &'static str, passed: bool, hard: bool, detail: String, took: Duration) -> Line {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id}: {tag} ({:.1}s) {detail}", took.as_secs_f64());
    Line { id, passed, hard, detail }
}

fn feedback_free(mut env: EnvConfig) -> EnvConfig {
    env.bank.feedback_slope = 0.0;
    env.bank.fraud_feedback_slope = 0.0;
    env.review.legit_slope = 0.0;
    env.review.fraud_slope = 0.0;
    env
}

fn criterion_1() -> Line {
    let t = Instant::now();
    let cfg = OracleConfig { batches: 1000, max_batch: 8, ..OracleConfig::default() };
    let out = greedy_optimality(&cfg).expect("suite runs");
    let ok = out.passed && t.elapsed() < Duration::from_secs(60);
    report("1", ok, true, out.detail, t.elapsed())
}

fn criterion_2() -> Line {
    let t = Instant::now();
    let cfg = OracleConfig { toy_mdps: 200, tolerance: 1e-9, ..OracleConfig::default() };
    let out = bellman_fixed_point(&cfg, &EnvConfig::default(), &CostParams::default()).expect("suite runs");
    let ok = out.passed && t.elapsed() < Duration::from_secs(10);
    report("2", ok, true, out.detail, t.elapsed())
}

/// 10^6 transactions in a feedback-free world, routed half to approval and
/// half to review so every score feeds every column.
fn criterion_3() -> Line {
    let t = Instant::now();
    let costs = CostParams::default();
    let periods = 20;
    let env = feedback_free(EnvConfig { arrival_rate: 50_000.0, seed: 33, ..EnvConfig::default() });
    let model = EnvModel::new(env).unwrap();
    let mut world = WorldState::new(&model, &costs, true).unwrap();
    let mut n = 0usize;
    for p in 0..periods + costs.maturity_horizon + 1 {
        let batch = world.gen_period(&model);
        for w in &batch {
            let d = if p >= periods {
                Decision::Reject
            } else if keyed_uniform(model.seed(), w.id, Stream::Harness) < 0.5 {
                Decision::Approve
            } else {
                Decision::Review
            };
            n += usize::from(p < periods);
            let o = world.resolve(&model, w, d);
            world.record(w, d, &o, None);
        }
        world.advance_period();
    }
    let slice = world.labeled_slice(0, periods - 1, world.period()).unwrap();
    let est = estimate_g_mature(&slice, model.max_score()).unwrap();
    let truth = world.true_gtable(&model, 0);
    let ev = slice.evidence(model.max_score()).unwrap();
    let (mut cells, mut inside) = (0usize, 0usize);
    for (s, c) in ev.counts.iter().enumerate() {
        let (e, g) = (est.cells()[s].to_array(), truth.cells()[s].to_array());
        for (i, den) in [(0, c.submitted), (1, c.submitted), (2, c.reviewed), (3, c.reviewed), (4, c.submitted)] {
            if den == 0 {
                continue;
            }
            let p = g[i];
            let se = (p * (1.0 - p) / f64::from(den)).sqrt();
            cells += 1;
            if (e[i] - p).abs() <= 3.0 * se + 1e-12 {
                inside += 1;
            }
        }
    }
    let share = inside as f64 / cells as f64;
    let ok = share >= 0.99 && t.elapsed() < Duration::from_secs(120);
    report("3", ok, true, format!("{n} transactions, {inside}/{cells} populated cells within 3 SE ({:.2}%)", 100.0 * share), t.elapsed())
}

fn criterion_4() -> Line {
    let t = Instant::now();
    let plan = ExperimentPlan::default();
    let mut details = Vec::new();
    let mut ok = true;
    for seed in [1, 2] {
        let out = degenerate_streams(&plan, seed).expect("closed-loop run");
        ok &= out.passed;
        details.push(out.detail);
    }
    report("4", ok, true, details.join("; "), t.elapsed())
}

/// Trajectory generated by an affine law in the rate signal with per-score
/// intercepts and per-band slopes, which the regressor class contains.
fn criterion_5() -> Line {
    let t = Instant::now();
    let costs = CostParams::default();
    let config = RegressorConfig::default();
    let max_score = 1000u32;
    let band = |s: u32| f64::from(s * config.bands / (max_score + 1));
    let law = |s: u32, rate: f64| {
        let x = f64::from(s) / f64::from(max_score);
        let slope = 1.0 + 0.1 * band(s);
        let auth_legit = 0.9 - 0.4 * x - slope * rate;
        let auth_fraud = 0.002 + 0.1 * x * x + 0.5 * slope * rate;
        GCell {
            auth_legit,
            auth_fraud,
            review_legit: 0.6 * auth_legit - 0.2 * slope * rate,
            review_fraud: 0.3 * auth_fraud + 0.1 * slope * rate,
            auth: auth_legit + auth_fraud,
        }
    };
    let periods = 60u32;
    let signal: Vec<(u32, f64)> = (0..periods).map(|p| (p, 0.002 + 0.008 * f64::from((p * 37 + 11) % 23) / 22.0)).collect();
    let tables: Vec<GTable> = signal
        .iter()
        .map(|&(p, r)| GTable::from_cells(p, (0..=max_score).map(|s| law(s, r)).collect()).unwrap())
        .collect();
    let traj = GTrajectory::from_tables(tables).unwrap();
    let cei = fit_cei(config, &traj, &signal, &costs).unwrap();
    let fei = fit_fei(config, &traj, &signal, &costs).unwrap();
    let mut worst = 0.0f64;
    for model in [&cei, &fei] {
        let response: RateResponse = model.rate_response(&traj).unwrap();
        for rate in [0.003, 0.0055, 0.009] {
            let g = response.table(rate);
            for s in 0..=max_score {
                let (a, b) = (g.cells()[s as usize].to_array(), law(s, rate).to_array());
                for i in 0..5 {
                    worst = worst.max((a[i] - b[i]).abs());
                }
            }
        }
    }
    report("5", worst <= 1e-6, true, format!("CEI and FEI worst cell error {worst:.2e}"), t.elapsed())
}

/// The estimator's chargeback rate under the true table against the
/// realised finally-approved fraud share of non-rejected submissions.
fn criterion_6() -> Line {
    let t = Instant::now();
    let costs = CostParams::default();
    let reps = 200;
    let mut diffs = Vec::with_capacity(reps);
    for seed in 0..reps as u64 {
        let model = EnvModel::new(EnvConfig { seed: 1000 + seed, ..EnvConfig::default() }).unwrap();
        let world = WorldState::new(&model, &costs, false).unwrap();
        let truth = world.true_gtable(&model, 0);
        let batch = world.gen_period(&model);
        let actions: Vec<Decision> = batch.iter().map(|w| baseline_decide(w, 600, 950).unwrap()).collect();
        let future = RateResponse::constant(&truth);
        let objective = ProspectiveObjective {
            current: &truth,
            future: &future,
            reference: &batch,
            future_weight: 0.0,
            fallback_rate: 0.0,
            costs: &costs,
        };
        let estimate = objective.batch_rate(&batch, &actions).unwrap();
        let (mut frauds, mut submitted) = (0u32, 0u32);
        for (w, &d) in batch.iter().zip(&actions) {
            if d == Decision::Reject {
                continue;
            }
            submitted += 1;
            let o = world.resolve(&model, w, d);
            frauds += u32::from(o.finally_approved() && o.is_fraud);
        }
        diffs.push(f64::from(frauds) / f64::from(submitted) - estimate);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let ok = mean.abs() <= 3.0 * se;
    report("6", ok, true, format!("{reps} replications, mean realised - estimate {mean:.3e}, 3 SE {:.3e}", 3.0 * se), t.elapsed())
}

fn diagnostics(report: &ComparisonReport) {
    println!("  calibration diagnostics (FP loss ordering):");
    println!("  warm-up mature chargeback rate {:.5}", report.mean_warmup_chargeback_rate);
    for p in &report.policies {
        println!(
            "  {:<12} fp {:>10.1} fn {:>10.1} mr {:>9.1} rejected {:>8.1} reviewed {:>8.1} mature cb {:.5} table error {}",
            p.label,
            p.mean_fp_loss,
            p.mean_fn_loss,
            p.mean_mr_cost,
            p.mean_rejected,
            p.mean_reviewed,
            p.mature_chargeback_rate,
            p.mean_table_error.map_or("-".into(), |e| format!("{e:.4}"))
        );
    }
}

fn criterion_7() -> Vec<Line> {
    let t = Instant::now();
    let plan = ExperimentPlan::default();
    let reps = run_seeds(&plan, 0).expect("default experiment runs");
    let report = compare(&plan, &reps).unwrap();
    let took = t.elapsed();
    let base = &report.policies[report.baseline];
    let dynamic: Vec<_> = report.policies.iter().filter(|p| p.index != report.baseline).collect();
    let in_time = took < Duration::from_secs(15 * 60);
    let a = dynamic.iter().all(|p| p.profit_diff > 0.0 && p.sign_test_p < 0.05) && in_time;
    let a_detail = dynamic
        .iter()
        .map(|p| format!("{} +{:.0} ({}/{}, p={:.1e})", p.label, p.profit_diff, p.wins, p.losses, p.sign_test_p))
        .collect::<Vec<_>>()
        .join(", ");
    let b = dynamic.iter().all(|p| p.mean_reviewed < base.mean_reviewed);
    let b_detail = format!(
        "baseline {:.0} reviews; {}",
        base.mean_reviewed,
        dynamic.iter().map(|p| format!("{} {:.0}", p.label, p.mean_reviewed)).collect::<Vec<_>>().join(", ")
    );
    let fp = |label: &str| report.policy(label).map(|p| p.mean_fp_loss);
    let (naive, myopic, prospective) = (fp("naive"), fp("myopic"), fp("prospective"));
    let c = matches!((naive, myopic, prospective), (Some(n), Some(m), Some(p)) if m < n && p < n);
    let c_detail = format!(
        "mean FP loss naive {:.0}, myopic {:.0}, prospective {:.0}",
        naive.unwrap_or(f64::NAN),
        myopic.unwrap_or(f64::NAN),
        prospective.unwrap_or(f64::NAN)
    );
    let lines = vec![
        report_line("7a", a, true, format!("30 seeds: {a_detail}"), took),
        report_line("7b", b, true, b_detail, took),
        report_line("7c", c, false, c_detail, took),
    ];
    if !c {
        diagnostics(&report);
    }
    lines
}

fn report_line(id: &'static str, passed: bool, hard: bool, detail: String, took: Duration) -> Line {
    report(id, passed, hard, detail, took)
}

const QUICK: &str = r#"
seed = 4
parallelism = 2
tune_lambda = true

[output]
decisions = true
transactions = true

[oracle]
batches = 100
toy_mdps = 5
instances = 50

[experiment]
periods = 3
warmup = 40
folds = 2
lambda_grid = [0.0, 0.12]

[experiment.env]
arrival_rate = 1000.0
"#;

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_8() -> Line {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, QUICK).unwrap();
    let cfg = cfg.display().to_string();
    let mut ok = true;
    let mut compared = 0;
    for cmd in ["simulate", "oracle-check", "tune-lambda"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{cmd}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_fraudctl"))
                .args([cmd, &cfg])
                .env("FRAUDCTL_OUT", &out)
                .output()
                .unwrap()
                .status;
            if !status.success() {
                return report("8", false, true, format!("{cmd} exited with {status}"), t.elapsed());
            }
            outputs.push(dir_bytes(&out));
        }
        compared += outputs[0].len();
        ok &= outputs[0] == outputs[1] && !outputs[0].is_empty();
    }
    report("8", ok, true, format!("simulate, oracle-check and tune-lambda twice each: {compared} files byte-identical"), t.elapsed())
}

fn main() {
    // Quietly accept the flags cargo passes to test binaries.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6()];
    lines.extend(criterion_7());
    lines.push(criterion_8());
    let failed: Vec<&Line> = lines.iter().filter(|l| l.hard && !l.passed).collect();
    let soft: Vec<&Line> = lines.iter().filter(|l| !l.hard && !l.passed).collect();
    println!(
        "acceptance: {} of {} criteria lines pass{}",
        lines.iter().filter(|l| l.passed).count(),
        lines.len(),
        if soft.is_empty() { String::new() } else { format!(" (soft failures: {})", soft.iter().map(|l| l.id).collect::<Vec<_>>().join(", ")) }
    );
    if !failed.is_empty() {
        for l in &failed {
            eprintln!("hard criterion {} failed: {}", l.id, l.detail);
        }
        std::process::exit(1);
    }
}
