//! Concrete environments: a single-server queue with service and flow control,
//! and random ergodic CMDPs for property tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::model::{induced_chain, policy_average, OccupancyMeasure, StationaryPolicy, TabularCmdp};

/// Discrete-time queue with buffer `L`: states `0..=L` customers waiting.
///
/// Each action is a pair `(a, b)`: the service succeeds with probability `a`
/// and a customer arrives with probability `b` (none arrive when the buffer
/// is full). Action indices enumerate pairs service-major:
/// `index = service_index * flow_actions.len() + flow_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub buffer: usize,
    pub service_actions: Vec<f64>,
    pub flow_actions: Vec<f64>,
}

impl Default for QueueSpec {
    fn default() -> Self {
        QueueSpec {
            buffer: 5,
            service_actions: vec![0.2, 0.4, 0.6, 0.8],
            flow_actions: vec![0.5, 0.6, 0.7, 0.8],
        }
    }
}

impl QueueSpec {
    pub fn validate(&self) -> Result<()> {
        if self.buffer == 0 {
            return Err(Error::InvalidSpec("queue buffer must be at least 1".into()));
        }
        for (name, list) in [("service", &self.service_actions), ("flow", &self.flow_actions)] {
            if list.is_empty() {
                return Err(Error::InvalidSpec(format!("{name} action list is empty")));
            }
            if let Some(v) = list.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(Error::InvalidSpec(format!("{name} action {v} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.buffer + 1
    }

    pub fn n_actions(&self) -> usize {
        self.service_actions.len() * self.flow_actions.len()
    }

    /// `(service, flow)` probabilities of action `index`.
    pub fn action(&self, index: usize) -> (f64, f64) {
        let nf = self.flow_actions.len();
        (self.service_actions[index / nf], self.flow_actions[index % nf])
    }

    /// Human-readable labels in action-index order, e.g. `"a=0.2,b=0.5"`.
    pub fn action_labels(&self) -> Vec<String> {
        (0..self.n_actions())
            .map(|k| {
                let (a, b) = self.action(k);
                format!("a={a},b={b}")
            })
            .collect()
    }
}

/// Builds the queue CMDP.
///
/// Reward `5 - s`. The experiments require `6 - 10a >= 0` (service) and
/// `2 - 8(1-b)^2 >= 0` (flow); both are stored negated, as
/// `c1 = 10a - 6 <= 0` and `c2 = 8(1-b)^2 - 2 <= 0`.
pub fn build_queue(spec: &QueueSpec) -> Result<TabularCmdp> {
    spec.validate()?;
    let top = spec.buffer;
    let ns = spec.n_states();
    let na = spec.n_actions();
    let mut reward = vec![vec![0.0; na]; ns];
    let mut service_cost = vec![vec![0.0; na]; ns];
    let mut flow_cost = vec![vec![0.0; na]; ns];
    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    for s in 0..ns {
        for k in 0..na {
            let (a, b) = spec.action(k);
            reward[s][k] = 5.0 - s as f64;
            service_cost[s][k] = 10.0 * a - 6.0;
            flow_cost[s][k] = 8.0 * (1.0 - b) * (1.0 - b) - 2.0;
            let row = &mut transition[s][k];
            if s == 0 {
                row[0] = 1.0 - b * (1.0 - a);
                row[1] = b * (1.0 - a);
            } else if s == top {
                row[top - 1] = a;
                row[top] = 1.0 - a;
            } else {
                row[s - 1] = a * (1.0 - b);
                row[s] = a * b + (1.0 - a) * (1.0 - b);
                row[s + 1] = (1.0 - a) * b;
            }
        }
    }
    TabularCmdp::new(reward, vec![service_cost, flow_cost], transition)
}

/// Random CMDP together with a strictly feasible deterministic policy.
#[derive(Debug, Clone)]
pub struct GeneratedCmdp {
    pub model: TabularCmdp,
    pub slater_policy: StationaryPolicy,
    /// `min_i (-average cost i)` of `slater_policy`; positive.
    pub slack: f64,
    pub slater_occupancy: OccupancyMeasure,
}

/// Random ergodic CMDP.
///
/// Transition rows are `min_prob + (1 - S min_prob) x` with `x` uniform on the
/// simplex, so every entry is at least `min_prob` and `min_prob = 1/S` gives
/// uniform rows. Rewards are uniform in `[0, 1]`, costs uniform in `[-1, 1]`
/// and then shifted so that a random deterministic policy has average cost
/// exactly `-slack` on every constraint, with `slack` drawn from `[0.05, 0.5]`.
pub fn random_cmdp(
    n_states: usize,
    n_actions: usize,
    d: usize,
    seed: u64,
    min_prob: f64,
) -> Result<GeneratedCmdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidSpec("need at least one state and one action".into()));
    }
    if !(min_prob > 0.0 && min_prob <= 1.0 / n_states as f64 + 1e-15) {
        return Err(Error::InvalidSpec(format!("min_prob {min_prob} outside (0, 1/S]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free = (1.0 - n_states as f64 * min_prob).max(0.0);
    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
                    let total: f64 = raw.iter().sum();
                    let mut row: Vec<f64> = raw.iter().map(|x| min_prob + free * x / total).collect();
                    // Put round-off on the largest entry so the row sums to one.
                    let sum: f64 = row.iter().sum();
                    let imax = (0..n_states).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
                    row[imax] += 1.0 - sum;
                    row
                })
                .collect()
        })
        .collect();
    let reward: Vec<Vec<f64>> =
        (0..n_states).map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect()).collect();
    let raw_costs: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|_| {
            (0..n_states)
                .map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect()
        })
        .collect();
    let actions: Vec<usize> = (0..n_states).map(|_| rng.random_range(0..n_actions)).collect();
    let slater_policy = StationaryPolicy::deterministic(&actions, n_actions);
    let target_slack = rng.random_range(0.05..=0.5);

    let mu = analysis::stationary_distribution(&induced_chain(&transition, &slater_policy))?;
    let costs: Vec<Vec<Vec<f64>>> = raw_costs
        .into_iter()
        .map(|c| {
            let avg: f64 = policy_average(&c, &slater_policy).iter().zip(&mu).map(|(x, m)| x * m).sum();
            let shift = avg + target_slack;
            c.iter().map(|row| row.iter().map(|v| v - shift).collect()).collect()
        })
        .collect();
    let model = TabularCmdp::new(reward, costs, transition)?;
    let slater_occupancy = OccupancyMeasure::from_stationary(&mu, &slater_policy)?;
    let slack = model
        .costs
        .iter()
        .map(|c| -slater_occupancy.dot(c))
        .fold(f64::INFINITY, f64::min);
    let slack = if d == 0 { f64::INFINITY } else { slack };
    Ok(GeneratedCmdp { model, slater_policy, slack, slater_occupancy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    fn row(model: &TabularCmdp, spec: &QueueSpec, s: usize, a: f64, b: f64) -> Vec<f64> {
        let k = (0..spec.n_actions()).find(|&k| spec.action(k) == (a, b)).unwrap();
        model.transition[s][k].clone()
    }

    #[test]
    fn interior_row_follows_table() {
        let spec = QueueSpec::default();
        let m = build_queue(&spec).unwrap();
        let r = row(&m, &spec, 2, 0.2, 0.5);
        assert!((r[1] - 0.1).abs() < 1e-15);
        assert!((r[2] - 0.5).abs() < 1e-15);
        assert!((r[3] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_queue_row_follows_table() {
        let spec = QueueSpec::default();
        let m = build_queue(&spec).unwrap();
        let r = row(&m, &spec, 0, 0.8, 0.5);
        assert!((r[0] - 0.9).abs() < 1e-15);
        assert!((r[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn full_queue_row_follows_table() {
        let spec = QueueSpec::default();
        let m = build_queue(&spec).unwrap();
        let r = row(&m, &spec, 5, 0.4, 0.7);
        assert!((r[4] - 0.4).abs() < 1e-15 && (r[5] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn default_queue_shape_and_cost_ranges() {
        let m = build_queue(&QueueSpec::default()).unwrap();
        assert!(validate_model(&m).is_empty());
        assert_eq!((m.n_states, m.n_actions, m.d), (6, 16, 2));
        let (lo, hi) = m.cost_range(0);
        assert!((lo + 4.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
        let (lo, hi) = m.cost_range(1);
        assert!((lo + 1.68).abs() < 1e-12 && hi.abs() < 1e-12);
        assert_eq!(m.reward_range(), (0.0, 5.0));
    }

    #[test]
    fn labels_are_service_major() {
        let labels = QueueSpec::default().action_labels();
        assert_eq!(labels[0], "a=0.2,b=0.5");
        assert_eq!(labels[1], "a=0.2,b=0.6");
        assert_eq!(labels[4], "a=0.4,b=0.5");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = QueueSpec { service_actions: vec![1.0], ..QueueSpec::default() };
        assert!(matches!(build_queue(&bad), Err(Error::InvalidSpec(_))));
        let bad = QueueSpec { flow_actions: vec![], ..QueueSpec::default() };
        assert!(matches!(build_queue(&bad), Err(Error::InvalidSpec(_))));
        assert!(random_cmdp(3, 2, 1, 0, 0.5).is_err());
        assert!(random_cmdp(0, 2, 1, 0, 0.1).is_err());
    }

    #[test]
    fn saturated_floor_gives_uniform_rows() {
        let g = random_cmdp(4, 2, 1, 9, 0.25).unwrap();
        for p in g.model.transition.iter().flatten().flatten() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn random_rows_respect_floor() {
        for seed in 0..20 {
            let g = random_cmdp(3, 2, 1, seed, 0.05).unwrap();
            for row in g.model.transition.iter().flatten() {
                assert!(row.iter().all(|p| *p >= 0.05 - 1e-15));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert!(g.slack > 0.0);
        }
    }
}
