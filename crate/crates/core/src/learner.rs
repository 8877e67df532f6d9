//! Epoch-based optimistic learner for constrained average-reward MDPs.
//!
//! At the start of each epoch the learner builds an L1 confidence set from
//! its transition counts, tightens every constraint by the epoch's epsilon,
//! solves the optimistic occupancy LP and plays the extracted policy until
//! the visits of some state-action pair within the epoch reach that pair's
//! count from before the epoch (or after every step in per-step mode).
//!
//! The true kernel is only touched by the environment sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{radius, sample_index};
use crate::error::{Error, Result};
use crate::model::{ConfidenceSet, EmpiricalModel, Kernel, StationaryPolicy, TabularCmdp};
use crate::occupancy::{feasibility_ladder, solve_optimistic_with, ConstrainedSolution, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Conservatism constant scaling the epsilon schedule.
    pub k: f64,
    pub horizon: u64,
    /// Known lower bound on the horizon; must be at least `e`.
    pub t_lower: Option<f64>,
    pub update_every_step: bool,
    pub seed: u64,
    pub epsilon_cap: Option<f64>,
    pub initial_state: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            k: 0.0,
            horizon: 1,
            t_lower: None,
            update_every_step: false,
            seed: 0,
            epsilon_cap: None,
            initial_state: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self, model: &TabularCmdp) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::Config(format!("K must be finite and >= 0, got {}", self.k)));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let Some(tl) = self.t_lower {
            if tl.is_nan() || tl < std::f64::consts::E {
                return Err(Error::Config(format!("t_lower must be >= e, got {tl}")));
            }
        }
        if let Some(cap) = self.epsilon_cap {
            if cap.is_nan() || cap < 0.0 {
                return Err(Error::Config(format!("epsilon_cap must be >= 0, got {cap}")));
            }
        }
        if self.initial_state >= model.n_states {
            return Err(Error::Config(format!("initial state {} out of range", self.initial_state)));
        }
        Ok(())
    }

    pub fn epsilon(&self, t_e: u64) -> f64 {
        epsilon_schedule(self.k, t_e, self.t_lower, self.epsilon_cap)
    }
}

/// `min(cap, K sqrt(ln tau / tau))` with `tau = max(t_e, t_lower or e)`.
pub fn epsilon_schedule(k: f64, t_e: u64, t_lower: Option<f64>, cap: Option<f64>) -> f64 {
    let tau = (t_e as f64).max(t_lower.unwrap_or(std::f64::consts::E));
    let eps = k * (tau.ln() / tau).sqrt();
    cap.map_or(eps, |c| eps.min(c))
}

/// Empirical kernel: `N(s,a,s') / N(s,a)`, uniform where `(s,a)` is unvisited.
pub fn empirical_phat(em: &EmpiricalModel) -> Kernel {
    let ns = em.n_states();
    (0..ns)
        .map(|s| {
            (0..em.n_actions())
                .map(|a| {
                    let n = em.visits(s, a);
                    if n == 0 {
                        vec![1.0 / ns as f64; ns]
                    } else {
                        let row: Vec<f64> = em.transitions(s, a).iter().map(|c| *c as f64 / n as f64).collect();
                        renormalize(row)
                    }
                })
                .collect()
        })
        .collect()
}

/// Pushes the float round-off of a ratio row onto its largest entry.
fn renormalize(mut row: Vec<f64>) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 0.0 {
        if let Some(i) = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])) {
            row[i] += 1.0 - sum;
        }
    }
    row
}

/// Confidence set from counts with radii evaluated at time `t`.
pub fn confidence_set(em: &EmpiricalModel, t: u64) -> ConfidenceSet {
    let (ns, na) = (em.n_states(), em.n_actions());
    let radius = (0..ns)
        .map(|s| (0..na).map(|a| radius(ns, na, t, em.visits(s, a))).collect())
        .collect();
    ConfidenceSet { p_hat: empirical_phat(em), radius }
}

/// Builds the confidence set an epoch plans against.
pub trait Planner {
    fn confidence_set(&self, counts: &EmpiricalModel, t: u64) -> ConfidenceSet;
}

/// Counts-based confidence sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalPlanner;

impl Planner for EmpiricalPlanner {
    fn confidence_set(&self, counts: &EmpiricalModel, t: u64) -> ConfidenceSet {
        confidence_set(counts, t)
    }
}

/// Always plans against a fixed kernel with zero radius.
#[derive(Debug, Clone)]
pub struct KnownModelPlanner(pub Kernel);

impl Planner for KnownModelPlanner {
    fn confidence_set(&self, _: &EmpiricalModel, _: u64) -> ConfidenceSet {
        ConfidenceSet::exact(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub costs: Vec<f64>,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub index: usize,
    pub start: u64,
    pub epsilon: f64,
    pub epsilon_used: f64,
    pub lp_iterations: usize,
    /// Optimistic average reward of the epoch's plan.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn epoch_count(&self) -> usize {
        self.epochs.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run record serialization cannot fail")
    }
}

/// State of the epoch currently being played.
#[derive(Debug, Clone)]
pub struct EpochState {
    pub index: usize,
    pub start: u64,
    pub epsilon: f64,
    pub policy: StationaryPolicy,
    /// In-epoch visits per pair.
    pub nu: Vec<Vec<u64>>,
    /// Visit counts frozen at the epoch start.
    pub prior_visits: Vec<Vec<u64>>,
    pub solution: ConstrainedSolution,
}

/// Step-by-step learner run; iterate to drive it.
pub struct Learner<'a, P: Planner = EmpiricalPlanner> {
    model: &'a TabularCmdp,
    config: LearnerConfig,
    planner: P,
    solver: SolverConfig,
    rng: ChaCha8Rng,
    counts: EmpiricalModel,
    state: usize,
    t: u64,
    epoch: Option<EpochState>,
    epoch_done: bool,
    epochs: Vec<EpochRecord>,
    failed: bool,
}

impl<'a> Learner<'a, EmpiricalPlanner> {
    pub fn new(model: &'a TabularCmdp, config: LearnerConfig) -> Result<Self> {
        Self::with_planner(model, config, EmpiricalPlanner)
    }
}

impl<'a, P: Planner> Learner<'a, P> {
    pub fn with_planner(model: &'a TabularCmdp, config: LearnerConfig, planner: P) -> Result<Self> {
        config.validate(model)?;
        Ok(Learner {
            model,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            counts: EmpiricalModel::new(model.n_states, model.n_actions),
            state: config.initial_state,
            t: 1,
            epoch: None,
            epoch_done: true,
            epochs: Vec::new(),
            failed: false,
            solver: SolverConfig::default(),
            planner,
            config,
        })
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn counts(&self) -> &EmpiricalModel {
        &self.counts
    }

    pub fn epochs(&self) -> &[EpochRecord] {
        &self.epochs
    }

    pub fn current_epoch(&self) -> Option<&EpochState> {
        self.epoch.as_ref()
    }

    fn start_epoch(&mut self) -> Result<()> {
        let t_e = self.t;
        let conf = self.planner.confidence_set(&self.counts, t_e);
        let epsilon = self.config.epsilon(t_e);
        let model = self.model;
        let solver = self.solver;
        let solution = feasibility_ladder(
            |eps| solve_optimistic_with(&model.reward, &model.costs, &conf, eps, &solver),
            epsilon,
        )?;
        let index = self.epochs.len();
        self.epochs.push(EpochRecord {
            index,
            start: t_e,
            epsilon,
            epsilon_used: solution.epsilon_used,
            lp_iterations: solution.lp_iterations,
            objective: solution.objective_value,
        });
        log::debug!(
            "epoch {index} at t={t_e}: eps={epsilon:.4} used={:.4} objective={:.4} iterations={}",
            solution.epsilon_used,
            solution.objective_value,
            solution.lp_iterations
        );
        let (ns, na) = (model.n_states, model.n_actions);
        self.epoch = Some(EpochState {
            index,
            start: t_e,
            epsilon,
            policy: solution.policy.clone(),
            nu: vec![vec![0; na]; ns],
            prior_visits: self.counts.visit_table().to_vec(),
            solution,
        });
        self.epoch_done = false;
        Ok(())
    }

    fn step(&mut self) -> Result<StepRecord> {
        if self.epoch_done {
            self.start_epoch()?;
        }
        let epoch = self.epoch.as_mut().expect("epoch started above");
        let s = self.state;
        let a = sample_index(epoch.policy.row(s), &mut self.rng);
        let next = sample_index(&self.model.transition[s][a], &mut self.rng);
        self.counts.record(s, a, next);
        epoch.nu[s][a] += 1;
        self.epoch_done =
            self.config.update_every_step || epoch.nu[s][a] >= epoch.prior_visits[s][a].max(1);
        let record = StepRecord {
            t: self.t,
            state: s,
            action: a,
            reward: self.model.reward[s][a],
            costs: self.model.costs.iter().map(|c| c[s][a]).collect(),
            epoch: epoch.index,
        };
        self.state = next;
        self.t += 1;
        Ok(record)
    }
}

impl<P: Planner> Iterator for Learner<'_, P> {
    type Item = Result<StepRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.t > self.config.horizon {
            return None;
        }
        let out = self.step();
        self.failed = out.is_err();
        Some(out)
    }
}

/// Runs the learner for the configured horizon.
pub fn run(model: &TabularCmdp, config: &LearnerConfig) -> Result<RunRecord> {
    run_with_planner(model, config, EmpiricalPlanner)
}

pub fn run_with_planner<P: Planner>(model: &TabularCmdp, config: &LearnerConfig, planner: P) -> Result<RunRecord> {
    let mut learner = Learner::with_planner(model, config.clone(), planner)?;
    let steps = learner.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(RunRecord { steps, epochs: learner.epochs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_k_gives_zero_epsilon() {
        for t in [1, 2, 10, 1000] {
            assert_eq!(epsilon_schedule(0.0, t, None, None), 0.0);
        }
    }

    #[test]
    fn schedule_values() {
        let e = epsilon_schedule(1.0, 100, None, None);
        assert!((e - (100f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!((e - 0.2146).abs() < 1e-4);
        let e = epsilon_schedule(1.0, 10, Some(1000.0), None);
        assert!((e - (1000f64.ln() / 1000.0).sqrt()).abs() < 1e-15);
        assert!((e - 0.0831).abs() < 1e-4);
        // tau is floored at e on the first epoch.
        let e1 = epsilon_schedule(2.0, 1, None, None);
        assert!((e1 - 2.0 * (1.0 / std::f64::consts::E).sqrt()).abs() < 1e-15);
        assert_eq!(epsilon_schedule(5.0, 1, None, Some(0.1)), 0.1);
    }

    #[test]
    fn unvisited_rows_are_uniform() {
        let em = EmpiricalModel::new(3, 2);
        for row in empirical_phat(&em).iter().flatten() {
            assert_eq!(row, &vec![1.0 / 3.0; 3]);
        }
    }

    #[test]
    fn visited_rows_are_ratios() {
        let mut em = EmpiricalModel::new(3, 1);
        for next in [0, 0, 1, 0] {
            em.record(0, 0, next);
        }
        assert_eq!(empirical_phat(&em)[0][0], vec![0.75, 0.25, 0.0]);
    }

    fn one_state(rewards: Vec<f64>) -> TabularCmdp {
        let na = rewards.len();
        TabularCmdp::new(vec![rewards], vec![], vec![vec![vec![1.0]; na]]).unwrap()
    }

    #[test]
    fn single_step_run() {
        let m = one_state(vec![0.3, 0.9]);
        let cfg = LearnerConfig { k: 1.5, horizon: 1, ..Default::default() };
        let rec = run(&m, &cfg).unwrap();
        assert_eq!(rec.steps.len(), 1);
        assert_eq!(rec.epochs.len(), 1);
        assert_eq!(rec.epochs[0].epsilon, epsilon_schedule(1.5, 1, None, None));
    }

    #[test]
    fn deterministic_single_state_plays_best_action() {
        let m = one_state(vec![0.3, 0.9, 0.1]);
        let cfg = LearnerConfig { horizon: 100, ..Default::default() };
        let rec = run(&m, &cfg).unwrap();
        assert!(rec.steps.iter().all(|s| s.action == 1 && s.reward == 0.9));
        // One epoch for the first visit, then doublings at 2, 4, ..., 64 visits.
        let bound = 3.0 * (100f64).log2() + 3.0;
        assert!((rec.epoch_count() as f64) <= bound);
        assert_eq!(rec.epoch_count(), 8);
    }

    #[test]
    fn per_step_mode_replans_every_step() {
        let m = one_state(vec![0.3, 0.9]);
        let cfg = LearnerConfig { horizon: 7, update_every_step: true, ..Default::default() };
        assert_eq!(run(&m, &cfg).unwrap().epoch_count(), 7);
    }

    #[test]
    fn bad_configs_rejected() {
        let m = one_state(vec![1.0]);
        let bad = LearnerConfig { t_lower: Some(2.0), horizon: 5, ..Default::default() };
        assert!(matches!(run(&m, &bad), Err(Error::Config(_))));
        let bad = LearnerConfig { horizon: 0, ..Default::default() };
        assert!(run(&m, &bad).is_err());
    }
}
