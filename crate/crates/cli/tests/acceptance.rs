//! Acceptance suite. Each test prints one `PASS`/`FAIL` line, then asserts.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use cmdp_lab::analysis::{mixture_occupancy, verify_bellman_identity};
use cmdp_lab::confidence::{radius, weissman_coverage};
use cmdp_lab::envs::{build_queue, random_cmdp, QueueSpec};
use cmdp_lab::harness::{parse_k_values, run_sweep, ExperimentConfig, ExperimentResult};
use cmdp_lab::model::{long_run_averages, ConfidenceSet, StationaryPolicy, TabularCmdp};
use cmdp_lab::occupancy::{solve_optimistic, solve_true_model};

const QUEUE_OPTIMUM: f64 = 4.08;

const QUEUE_CONFIG: &str = r#"
[environment]
kind = "queue"
buffer = 5
service_actions = [0.2, 0.4, 0.6, 0.8]
flow_actions = [0.5, 0.6, 0.7, 0.8]

[learner]
k = "default"
horizon = 100000
seed_count = 10

[output]
stride = 100
"#;

/// Serializes the tests so that timed criteria do not share the CPU.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    writeln!(out, "acceptance {id:>2} {verdict} {name}: {detail}").unwrap();
    out.flush().unwrap();
}

fn shape(seed: u64) -> (usize, usize) {
    (1 + (seed % 4) as usize, 1 + ((seed / 4) % 3) as usize)
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmdp-lab"))
}

fn lambda_star_from(stdout: &[u8]) -> f64 {
    let text = String::from_utf8_lossy(stdout);
    let line = text.lines().find(|l| l.trim_start().starts_with("\"lambda_star\"")).expect("lambda_star in output");
    line.split(':').nth(1).unwrap().trim().trim_end_matches(',').parse().unwrap()
}

#[test]
fn oracle_reproduction() {
    let _guard = exclusive();
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUEUE_CONFIG);
    let start = Instant::now();
    let out = cli().arg("oracle").arg(&config).output().unwrap();
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lambda = lambda_star_from(&out.stdout);
    let pass = (lambda - QUEUE_OPTIMUM).abs() <= 0.02 && elapsed < Duration::from_secs(1);
    report(1, "oracle reproduction", pass, format!("lambda* = {lambda:.6} (target 4.08 +- 0.02), {elapsed:.2?}"));
    assert!(pass);
}

/// Queue sweep over `{0, K0, 2K0}` with 10 seeds at T = 1e5, shared by criteria 2 to 4.
fn queue_sweep() -> &'static Vec<(f64, ExperimentResult)> {
    static SWEEP: OnceLock<Vec<(f64, ExperimentResult)>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let config = ExperimentConfig::parse(QUEUE_CONFIG).unwrap();
        let entries = run_sweep(&config, &parse_k_values("0,k0,2k0").unwrap()).unwrap();
        entries.into_iter().map(|e| (e.result.summary.k, e.result)).collect()
    })
}

#[test]
fn learning_convergence() {
    let _guard = exclusive();
    let (_, default) = &queue_sweep()[1];
    let s = &default.summary;
    let reward = s.final_avg_reward.mean;
    let costs: Vec<f64> = s.final_avg_costs.iter().map(|m| m.mean).collect();
    let runtime = s.wall_time_seconds;
    let pass = (reward - QUEUE_OPTIMUM).abs() <= 0.5 && costs.iter().all(|c| *c <= 0.05) && runtime < 300.0;
    report(
        2,
        "learning convergence",
        pass,
        format!("final reward {reward:.4} (target 4.08 +- 0.5), costs {costs:?} (<= 0.05), K = {:.1}, {runtime:.1}s", s.k),
    );
    assert!(pass);
}

#[test]
fn k_monotonicity() {
    let _guard = exclusive();
    let sweep = queue_sweep();
    let mut pass = true;
    let mut detail = Vec::new();
    for pair in sweep.windows(2) {
        let (a, b) = (&pair[0].1.summary, &pair[1].1.summary);
        let n = a.seeds.len() - a.seeds_failed;
        let m = b.seeds.len() - b.seeds_failed;
        let viol_se = a.final_violation.standard_error(n).max(b.final_violation.standard_error(m));
        let reward_se = a.final_avg_reward.standard_error(n).max(b.final_avg_reward.standard_error(m));
        pass &= b.final_violation.mean <= a.final_violation.mean + viol_se;
        pass &= b.final_avg_reward.mean <= a.final_avg_reward.mean + reward_se;
    }
    for (k, r) in sweep {
        detail.push(format!(
            "K={k:.1}: reward {:.4}, violation {:.4}",
            r.summary.final_avg_reward.mean, r.summary.final_violation.mean
        ));
    }
    report(3, "K monotonicity", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn epoch_bound() {
    let _guard = exclusive();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    let mut pass = true;
    for (_, result) in queue_sweep() {
        let s = &result.summary;
        let bound = (s.n_states * s.n_actions) as f64 * ((s.horizon as f64).log2() + 2.0);
        for (_, run) in result.successful() {
            let ratio = run.epochs.len() as f64 / bound;
            worst = worst.max(ratio);
            pass &= run.epochs.len() as f64 <= bound;
            runs += 1;
        }
    }
    report(4, "epoch bound", pass, format!("{runs} doubling runs, largest epochs/bound ratio {worst:.3}"));
    assert!(pass && runs == 30);
}

fn random_policy(model: &TabularCmdp, seed: u64) -> StationaryPolicy {
    // Transition rows of a one-action instance with `A` states are valid policy rows.
    let other = random_cmdp(model.n_actions, 1, 0, seed, 0.05).unwrap().model;
    let rows = (0..model.n_states).map(|s| other.transition[s % model.n_actions][0].clone()).collect();
    StationaryPolicy::new(rows).unwrap()
}

#[test]
fn bellman_identity() {
    let _guard = exclusive();
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let (s, a) = shape(seed);
        let m = random_cmdp(s, a, 0, seed, 0.02).unwrap().model;
        let p_tilde = random_cmdp(s, a, 0, seed + 10_000, 0.02).unwrap().model.transition;
        let pi = random_policy(&m, seed + 20_000);
        worst = worst.max(verify_bellman_identity(&pi, &p_tilde, &m.transition, &m.reward).unwrap());
    }
    let pass = worst <= 1e-8;
    report(5, "Bellman identity", pass, format!("200 instances, max residual {worst:.3e} (<= 1e-8)"));
    assert!(pass);
}

#[test]
fn mixture_occupancy_bound() {
    let _guard = exclusive();
    let lipschitz = 1.0;
    let mut worst_violation = f64::NEG_INFINITY;
    let mut worst_gap_excess = f64::NEG_INFINITY;
    for seed in 0..100 {
        let (s, a) = shape(seed);
        let d = 1 + (seed % 3) as usize;
        let g = random_cmdp(s, a, d, seed, 0.02).unwrap();
        let delta = g.slack;
        let eps = delta / 2.0;
        let star = solve_true_model(&g.model, 0.0).unwrap();
        let mix = mixture_occupancy(&star.rho, &g.slater_occupancy, eps, delta).unwrap();
        for c in &g.model.costs {
            worst_violation = worst_violation.max(mix.dot(c) + eps);
        }
        let gap = star.objective_value - mix.dot(&g.model.reward);
        worst_gap_excess = worst_gap_excess.max(gap - 2.0 * lipschitz * eps / delta);
    }
    let pass = worst_violation <= 1e-9 && worst_gap_excess <= 1e-9;
    report(
        6,
        "mixture occupancy bound",
        pass,
        format!("100 instances, max tight-constraint excess {worst_violation:.3e}, max gap minus bound {worst_gap_excess:.3e}"),
    );
    assert!(pass);
}

#[test]
fn weissman_coverage_on_queue() {
    let _guard = exclusive();
    let m = build_queue(&QueueSpec::default()).unwrap();
    let start = Instant::now();
    let reports: Vec<_> = [10u64, 100, 1000]
        .iter()
        .map(|&n| weissman_coverage(&m.transition, n, 10_000, 1000, 40 + n))
        .collect();
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.failure_rate()).fold(0.0, f64::max);
    let pass = worst <= 0.01 && elapsed < Duration::from_secs(30);
    let rates: Vec<String> = reports.iter().map(|r| format!("n={}: {}", r.samples_per_row, r.failure_rate())).collect();
    report(7, "Weissman coverage", pass, format!("{} rows, {}, {elapsed:.2?}", m.n_pairs(), rates.join(", ")));
    assert!(pass);
}

fn best_deterministic_gain(model: &TabularCmdp) -> f64 {
    let (ns, na) = (model.n_states, model.n_actions);
    let total = na.pow(ns as u32);
    (0..total)
        .map(|code| {
            let actions: Vec<usize> = (0..ns).map(|s| (code / na.pow(s as u32)) % na).collect();
            long_run_averages(&StationaryPolicy::deterministic(&actions, na), model).unwrap().reward
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn lp_oracle_equivalence() {
    let _guard = exclusive();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (s, a) = shape(seed);
        let m = random_cmdp(s, a, 0, seed + 500, 0.02).unwrap().model;
        let lp = solve_true_model(&m, 0.0).unwrap().objective_value;
        worst = worst.max((lp - best_deterministic_gain(&m)).abs());
    }
    let pass = worst <= 1e-7;
    report(8, "LP oracle equivalence", pass, format!("100 instances, max |LP - enumeration| {worst:.3e}"));
    assert!(pass);
}

#[test]
fn optimism() {
    let _guard = exclusive();
    let mut worst = f64::INFINITY;
    for seed in 0..100u64 {
        let (s, a) = shape(seed);
        let d = 1 + (seed % 2) as usize;
        let m = random_cmdp(s, a, d, seed + 900, 0.02).unwrap().model;
        let t = 10u64.pow(1 + (seed % 5) as u32);
        let radii = (0..s)
            .map(|st| (0..a).map(|ac| radius(s, a, t, (seed * 7 + (st * a + ac) as u64 * 13) % t)).collect())
            .collect();
        let conf = ConfidenceSet::new(m.transition.clone(), radii).unwrap();
        let truth = solve_true_model(&m, 0.0).unwrap().objective_value;
        let opt = solve_optimistic(&m.reward, &m.costs, &conf, 0.0).unwrap().objective_value;
        worst = worst.min(opt - truth);
    }
    let pass = worst >= -1e-7;
    report(9, "optimism", pass, format!("100 instances, min optimistic minus true {worst:.3e}"));
    assert!(pass);
}

#[test]
fn determinism() {
    let _guard = exclusive();
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &QUEUE_CONFIG.replace("horizon = 100000", "horizon = 20000").replace("seed_count = 10", "seed_count = 3"),
    );
    let outputs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let status = cli().arg("run").arg(&config).arg("--out").arg(&out_dir).output().unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            out_dir
        })
        .collect();
    let files = ["seed_0.csv", "seed_1.csv", "seed_2.csv", "aggregate.csv"];
    let pass = files.iter().all(|f| {
        std::fs::read(outputs[0].join(f)).unwrap() == std::fs::read(outputs[1].join(f)).unwrap()
    });
    report(10, "determinism", pass, format!("{} CSV files compared byte for byte", files.len()));
    assert!(pass);
}
