use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{EnvironmentConfig, ExperimentConfig, KSetting};
use super::metrics::{aggregate, AggregateRow, MeanStd, MetricSeries, SeriesBuilder};
use crate::analysis::max_hitting_time;
use crate::envs::{build_queue, random_cmdp, QueueSpec};
use crate::error::{Error, Result};
use crate::learner::{EpochRecord, Learner, LearnerConfig};
use crate::model::{ObjectiveSpec, StationaryPolicy, TabularCmdp};
use crate::occupancy::solve_true_model;

/// Best feasible policy of the known model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub lambda_star: f64,
    pub policy: StationaryPolicy,
    pub avg_costs: Vec<f64>,
    pub lp_iterations: usize,
    pub model_hash: u64,
}

/// Hash of the model's JSON form; stable within a build.
pub fn model_hash(model: &TabularCmdp) -> u64 {
    let mut h = DefaultHasher::new();
    model.to_json().hash(&mut h);
    h.finish()
}

fn oracle_cache() -> &'static Mutex<HashMap<u64, Oracle>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Oracle>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Solves the known-model program at zero tightening, caching by model hash.
pub fn compute_oracle(model: &TabularCmdp) -> Result<Oracle> {
    let key = model_hash(model);
    if let Some(hit) = oracle_cache().lock().expect("oracle cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let oracle = compute_oracle_uncached(model)?;
    oracle_cache().lock().expect("oracle cache poisoned").insert(key, oracle.clone());
    Ok(oracle)
}

pub fn compute_oracle_uncached(model: &TabularCmdp) -> Result<Oracle> {
    let sol = solve_true_model(model, 0.0)?;
    Ok(Oracle {
        lambda_star: sol.objective_value,
        avg_costs: sol.average_costs(&model.costs),
        lp_iterations: sol.lp_iterations,
        policy: sol.policy,
        model_hash: model_hash(model),
    })
}

/// Inputs of the default conservatism constant `K = L d T_M S sqrt(A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultK {
    pub k: f64,
    pub lipschitz: f64,
    pub d: usize,
    /// Largest expected hitting time under the uniform policy.
    pub mixing_time: f64,
    pub n_states: usize,
    pub n_actions: usize,
}

pub fn default_k(model: &TabularCmdp) -> Result<DefaultK> {
    let lipschitz = ObjectiveSpec::identity(model.d).lipschitz_l;
    let uniform = StationaryPolicy::uniform(model.n_states, model.n_actions);
    let mixing_time = max_hitting_time(&uniform, &model.transition)?;
    let k = lipschitz * model.d as f64 * mixing_time * model.n_states as f64 * (model.n_actions as f64).sqrt();
    Ok(DefaultK { k, lipschitz, d: model.d, mixing_time, n_states: model.n_states, n_actions: model.n_actions })
}

/// The model an environment section describes, with action labels when known.
pub fn build_environment(env: &EnvironmentConfig) -> Result<(TabularCmdp, Option<Vec<String>>)> {
    match env {
        EnvironmentConfig::Queue { buffer, service_actions, flow_actions } => {
            let spec = QueueSpec {
                buffer: *buffer,
                service_actions: service_actions.clone(),
                flow_actions: flow_actions.clone(),
            };
            Ok((build_queue(&spec)?, Some(spec.action_labels())))
        }
        EnvironmentConfig::Random { n_states, n_actions, d, seed, min_prob } => {
            Ok((random_cmdp(*n_states, *n_actions, *d, *seed, *min_prob)?.model, None))
        }
        EnvironmentConfig::File { path } => Ok((TabularCmdp::load(path)?, None)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub t: u64,
    pub epsilon: f64,
    pub epsilon_used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub series: MetricSeries,
    pub epochs: Vec<EpochRecord>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub outcome: std::result::Result<SeedRun, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub epochs: Option<usize>,
    pub final_avg_reward: Option<f64>,
    pub final_avg_costs: Option<Vec<f64>>,
    pub final_violation: Option<f64>,
    pub wall_time_seconds: Option<f64>,
    pub epsilon_history: Vec<EpsilonPoint>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub environment: EnvironmentConfig,
    pub action_labels: Option<Vec<String>>,
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub lambda_star: f64,
    pub oracle_avg_costs: Vec<f64>,
    pub k: f64,
    pub k_source: String,
    pub default_k: Option<DefaultK>,
    pub horizon: u64,
    pub stride: u64,
    pub update_every_step: bool,
    pub seeds: Vec<u64>,
    pub seeds_failed: usize,
    pub final_avg_reward: MeanStd,
    pub final_avg_costs: Vec<MeanStd>,
    pub final_regret: MeanStd,
    pub final_violation: MeanStd,
    pub epoch_count: MeanStd,
    pub wall_time_seconds: f64,
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub seeds: Vec<SeedResult>,
    pub aggregate: Vec<AggregateRow>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn successful(&self) -> impl Iterator<Item = (u64, &SeedRun)> {
        self.seeds.iter().filter_map(|r| r.outcome.as_ref().ok().map(|run| (r.seed, run)))
    }
}

/// Resolves the K a config asks for.
pub fn resolve_k(setting: KSetting, model: &TabularCmdp) -> Result<(f64, Option<DefaultK>)> {
    match setting {
        KSetting::Value(k) => Ok((k, None)),
        KSetting::Named(_) => {
            let report = default_k(model)?;
            Ok((report.k, Some(report)))
        }
    }
}

fn run_seed(model: &TabularCmdp, config: LearnerConfig, lambda_star: f64, stride: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let horizon = config.horizon;
    let mut builder = SeriesBuilder::new(lambda_star, horizon, stride, model.d);
    let mut learner = Learner::new(model, config)?;
    for step in learner.by_ref() {
        builder.push(&step?);
    }
    Ok(SeedRun {
        series: builder.finish(),
        epochs: learner.epochs().to_vec(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every seed concurrently on a small worker pool; results keep seed order.
fn run_seeds(model: &TabularCmdp, configs: Vec<LearnerConfig>, lambda_star: f64, stride: u64) -> Vec<Result<SeedRun>> {
    let n = configs.len();
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n).max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<SeedRun>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = run_seed(model, configs[i].clone(), lambda_star, stride);
                if let Err(e) = &out {
                    log::warn!("seed {} failed: {e}", configs[i].seed);
                }
                *slots[i].lock().expect("result slot poisoned") = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("result slot poisoned").expect("every seed ran")).collect()
}

/// Runs the configured learner for every seed and aggregates the metric series.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let (model, action_labels) = build_environment(&config.environment)?;
    let oracle = if config.metrics.recompute_oracle { compute_oracle_uncached(&model)? } else { compute_oracle(&model)? };
    let (k, default_report) = resolve_k(config.learner.k, &model)?;
    let seeds = config.seeds()?;
    let learner = &config.learner;
    let configs: Vec<LearnerConfig> = seeds
        .iter()
        .map(|&seed| LearnerConfig {
            k,
            horizon: learner.horizon,
            t_lower: learner.t_lower,
            update_every_step: learner.update_every_step,
            seed,
            epsilon_cap: learner.epsilon_cap,
            initial_state: learner.initial_state,
        })
        .collect();
    configs[0].validate(&model)?;
    log::info!("running {} seeds, K = {k}, lambda* = {}", seeds.len(), oracle.lambda_star);

    let outcomes = run_seeds(&model, configs, oracle.lambda_star, config.output.stride);
    if outcomes.iter().all(|o| o.is_err()) {
        return Err(outcomes.into_iter().find_map(|o| o.err()).expect("at least one seed"));
    }
    let results: Vec<SeedResult> = seeds
        .iter()
        .zip(outcomes)
        .map(|(&seed, o)| SeedResult { seed, outcome: o.map_err(|e| e.to_string()) })
        .collect();

    let ok: Vec<&SeedRun> = results.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let agg = aggregate(&ok.iter().map(|r| &r.series).collect::<Vec<_>>());
    let last = agg.last().expect("horizon >= 1 gives at least one row").clone();
    let per_seed = results.iter().map(seed_summary).collect();
    let summary = Summary {
        environment: config.environment.clone(),
        action_labels,
        n_states: model.n_states,
        n_actions: model.n_actions,
        d: model.d,
        lambda_star: oracle.lambda_star,
        oracle_avg_costs: oracle.avg_costs.clone(),
        k,
        k_source: if default_report.is_some() { "default".into() } else { "config".into() },
        default_k: default_report,
        horizon: learner.horizon,
        stride: config.output.stride,
        update_every_step: learner.update_every_step,
        seeds: seeds.clone(),
        seeds_failed: results.len() - ok.len(),
        final_avg_reward: last.avg_reward,
        final_avg_costs: last.avg_costs,
        final_regret: last.regret,
        final_violation: last.violation,
        epoch_count: MeanStd::of(&ok.iter().map(|r| r.epochs.len() as f64).collect::<Vec<_>>()),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        per_seed,
    };
    Ok(ExperimentResult { seeds: results, aggregate: agg, summary })
}

fn seed_summary(result: &SeedResult) -> SeedSummary {
    match &result.outcome {
        Ok(run) => {
            let last = run.series.last();
            SeedSummary {
                seed: result.seed,
                status: "ok".into(),
                error: None,
                epochs: Some(run.epochs.len()),
                final_avg_reward: last.map(|r| r.avg_reward),
                final_avg_costs: last.map(|r| r.avg_costs.clone()),
                final_violation: last.map(|r| r.violation),
                wall_time_seconds: Some(run.wall_time_seconds),
                epsilon_history: run
                    .epochs
                    .iter()
                    .map(|e| EpsilonPoint { t: e.start, epsilon: e.epsilon, epsilon_used: e.epsilon_used })
                    .collect(),
            }
        }
        Err(message) => SeedSummary {
            seed: result.seed,
            status: "failed".into(),
            error: Some(message.clone()),
            epochs: None,
            final_avg_reward: None,
            final_avg_costs: None,
            final_violation: None,
            wall_time_seconds: None,
            epsilon_history: Vec::new(),
        },
    }
}

/// One entry of a K-sweep: a literal value or a multiple of the default K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KChoice {
    Value(f64),
    DefaultTimes(f64),
}

impl KChoice {
    /// Parses `1.5`, `k0`, `default` or `2k0` / `2*k0`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim().to_ascii_lowercase();
        if t == "default" || t == "k0" {
            return Ok(KChoice::DefaultTimes(1.0));
        }
        let bad = || Error::Config(format!("bad K value '{text}'"));
        if let Some(prefix) = t.strip_suffix("k0") {
            let factor: f64 = prefix.trim_end_matches('*').parse().map_err(|_| bad())?;
            return Ok(KChoice::DefaultTimes(factor));
        }
        let v: f64 = t.parse().map_err(|_| bad())?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(bad());
        }
        Ok(KChoice::Value(v))
    }

    pub fn label(&self) -> String {
        match self {
            KChoice::Value(v) => format!("{v}"),
            KChoice::DefaultTimes(f) => format!("{f}k0"),
        }
    }
}

pub fn parse_k_values(text: &str) -> Result<Vec<KChoice>> {
    let values: Vec<KChoice> = text.split(',').filter(|s| !s.trim().is_empty()).map(KChoice::parse).collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config("no K values given".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub choice: KChoice,
    pub result: ExperimentResult,
}

/// Runs the experiment once per K value.
pub fn run_sweep(config: &ExperimentConfig, choices: &[KChoice]) -> Result<Vec<SweepEntry>> {
    let (model, _) = build_environment(&config.environment)?;
    let needs_default = choices.iter().any(|c| matches!(c, KChoice::DefaultTimes(_)));
    let k0 = if needs_default { Some(default_k(&model)?.k) } else { None };
    choices
        .iter()
        .map(|&choice| {
            let k = match choice {
                KChoice::Value(v) => v,
                KChoice::DefaultTimes(f) => f * k0.expect("computed above"),
            };
            let mut c = config.clone();
            c.learner.k = KSetting::Value(k);
            Ok(SweepEntry { choice, result: run_experiment(&c)? })
        })
        .collect()
}

/// Runs the doubling learner and the per-step-update learner on the same config.
pub fn run_compare_updates(config: &ExperimentConfig) -> Result<(ExperimentResult, ExperimentResult)> {
    let (model, _) = build_environment(&config.environment)?;
    let (k, _) = resolve_k(config.learner.k, &model)?;
    let mut c = config.clone();
    c.learner.k = KSetting::Value(k);
    c.learner.update_every_step = false;
    let doubling = run_experiment(&c)?;
    c.learner.update_every_step = true;
    let every_step = run_experiment(&c)?;
    Ok((doubling, every_step))
}
