//! Tabular constrained MDPs and the objects defined on them: stationary
//! policies, occupancy measures, visit counts and confidence sets.
//!
//! Tables are stored as nested vectors indexed `[s][a]` (rewards, costs per
//! constraint, occupancy, policy) and `[s][a][s']` (transition kernel). Every
//! cost table is normalized so that a policy is feasible iff its long-run
//! average of that cost is `<= 0`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};

/// Tolerance for probability rows built directly from data.
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Tolerance for distributions produced by a numerical solve.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

/// Transition kernel `P[s][a][s']`.
pub type Kernel = Vec<Vec<Vec<f64>>>;
/// State-action table `T[s][a]`.
pub type Table = Vec<Vec<f64>>;

/// A fully known constrained MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub reward: Table,
    /// `costs[i][s][a]`, feasible iff the long-run average is `<= 0`.
    pub costs: Vec<Table>,
    pub transition: Kernel,
}

/// Location of a model defect.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.state, self.action) {
            (Some(s), Some(a)) => write!(f, "(s={s}, a={a}): {}", self.message),
            (Some(s), None) => write!(f, "(s={s}): {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl Violation {
    fn at(s: usize, a: usize, message: impl Into<String>) -> Self {
        Violation { state: Some(s), action: Some(a), message: message.into() }
    }

    fn global(message: impl Into<String>) -> Self {
        Violation { state: None, action: None, message: message.into() }
    }
}

/// Returns every invariant breach of `model`; empty iff the model is well formed.
pub fn validate_model(model: &TabularCmdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let (ns, na) = (model.n_states, model.n_actions);
    if ns == 0 {
        out.push(Violation::global("n_states must be at least 1"));
    }
    if na == 0 {
        out.push(Violation::global("n_actions must be at least 1"));
    }
    if model.costs.len() != model.d {
        out.push(Violation::global(format!(
            "d = {} but {} cost tables supplied",
            model.d,
            model.costs.len()
        )));
    }
    check_table(&model.reward, ns, na, "reward", &mut out);
    for (i, c) in model.costs.iter().enumerate() {
        check_table(c, ns, na, &format!("cost {}", i + 1), &mut out);
    }
    if model.transition.len() != ns {
        out.push(Violation::global(format!(
            "transition has {} state blocks, expected {ns}",
            model.transition.len()
        )));
        return out;
    }
    for (s, block) in model.transition.iter().enumerate() {
        if block.len() != na {
            out.push(Violation {
                state: Some(s),
                action: None,
                message: format!("transition block has {} actions, expected {na}", block.len()),
            });
            continue;
        }
        for (a, row) in block.iter().enumerate() {
            if row.len() != ns {
                out.push(Violation::at(s, a, format!("transition row has length {}, expected {ns}", row.len())));
                continue;
            }
            if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                out.push(Violation::at(s, a, format!("transition entry {p} is negative or non-finite")));
                continue;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STRUCTURAL_TOL {
                out.push(Violation::at(s, a, format!("transition row sums to {sum}")));
            }
        }
    }
    out
}

fn check_table(table: &Table, ns: usize, na: usize, name: &str, out: &mut Vec<Violation>) {
    if table.len() != ns {
        out.push(Violation::global(format!("{name} table has {} rows, expected {ns}", table.len())));
        return;
    }
    for (s, row) in table.iter().enumerate() {
        if row.len() != na {
            out.push(Violation {
                state: Some(s),
                action: None,
                message: format!("{name} row has {} entries, expected {na}", row.len()),
            });
            continue;
        }
        for (a, v) in row.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::at(s, a, format!("{name} entry is not finite")));
            }
        }
    }
}

impl TabularCmdp {
    /// Builds a model and rejects it if any invariant fails.
    pub fn new(reward: Table, costs: Vec<Table>, transition: Kernel) -> Result<Self> {
        let model = TabularCmdp {
            n_states: reward.len(),
            n_actions: reward.first().map_or(0, Vec::len),
            d: costs.len(),
            reward,
            costs,
            transition,
        };
        model.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let violations = validate_model(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(Error::InvalidModel(msgs.join("; ")))
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Smallest and largest reward entry.
    pub fn reward_range(&self) -> (f64, f64) {
        table_range(&self.reward)
    }

    pub fn cost_range(&self, i: usize) -> (f64, f64) {
        table_range(&self.costs[i])
    }

    /// Copy of this model with the transition kernel replaced.
    pub fn with_transition(&self, transition: Kernel) -> Result<Self> {
        TabularCmdp { transition, ..self.clone() }.validated()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TabularCmdp =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        model.validated()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn table_range(t: &Table) -> (f64, f64) {
    t.iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Affine objective and constraint maps: `f(lambda) = reward_weight * lambda`
/// and `g_i(zeta) = zeta_i - cost_bounds[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub reward_weight: f64,
    pub cost_bounds: Vec<f64>,
    pub lipschitz_l: f64,
}

impl ObjectiveSpec {
    pub fn identity(d: usize) -> Self {
        ObjectiveSpec { reward_weight: 1.0, cost_bounds: vec![0.0; d], lipschitz_l: 1.0 }
    }

    /// Folds the weight and the bounds into a copy of `model`, so that the
    /// result maximizes plain average reward subject to average costs `<= 0`.
    pub fn fold_into(&self, model: &TabularCmdp) -> Result<TabularCmdp> {
        if self.lipschitz_l < self.reward_weight.abs() {
            return Err(Error::InvalidModel(format!(
                "lipschitz constant {} below |reward_weight| = {}",
                self.lipschitz_l,
                self.reward_weight.abs()
            )));
        }
        if self.cost_bounds.len() != model.d {
            return Err(Error::InvalidModel(format!(
                "{} cost bounds for {} constraints",
                self.cost_bounds.len(),
                model.d
            )));
        }
        let reward = model
            .reward
            .iter()
            .map(|row| row.iter().map(|r| self.reward_weight * r).collect())
            .collect();
        let costs = model
            .costs
            .iter()
            .zip(&self.cost_bounds)
            .map(|(c, b)| c.iter().map(|row| row.iter().map(|v| v - b).collect()).collect())
            .collect();
        TabularCmdp::new(reward, costs, model.transition.clone())
    }
}

/// Stationary randomized policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    probs: Table,
}

impl StationaryPolicy {
    pub fn new(probs: Table) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            if row.is_empty() || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidModel(format!("policy row {s} has invalid entries")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STRUCTURAL_TOL {
                return Err(Error::InvalidModel(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(StationaryPolicy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StationaryPolicy { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        StationaryPolicy { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }
}

/// Long-run state-action frequencies `rho[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    rho: Table,
}

impl OccupancyMeasure {
    /// Entries in `[-1e-12, 0)` are clamped to zero; anything more negative,
    /// or a total mass off by more than `1e-9`, is rejected.
    pub fn new(mut rho: Table) -> Result<Self> {
        let mut total = 0.0;
        for (s, row) in rho.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                if !v.is_finite() || *v < -STRUCTURAL_TOL {
                    return Err(Error::InvalidModel(format!("occupancy entry ({s},{a}) = {v}")));
                }
                if *v < 0.0 {
                    *v = 0.0;
                }
                total += *v;
            }
        }
        if (total - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(Error::InvalidModel(format!("occupancy sums to {total}")));
        }
        Ok(OccupancyMeasure { rho })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let v = 1.0 / (n_states * n_actions) as f64;
        OccupancyMeasure { rho: vec![vec![v; n_actions]; n_states] }
    }

    /// `rho(s,a) = mu(s) pi(a|s)`.
    pub fn from_stationary(mu: &[f64], policy: &StationaryPolicy) -> Result<Self> {
        let rho = mu
            .iter()
            .enumerate()
            .map(|(s, m)| policy.row(s).iter().map(|p| m * p).collect())
            .collect();
        Self::new(rho)
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.rho[s][a]
    }

    pub fn table(&self) -> &Table {
        &self.rho
    }

    pub fn n_states(&self) -> usize {
        self.rho.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rho.first().map_or(0, Vec::len)
    }

    /// `sum_{s,a} rho(s,a) table(s,a)`.
    pub fn dot(&self, table: &Table) -> f64 {
        self.rho
            .iter()
            .zip(table)
            .map(|(r, t)| r.iter().zip(t).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// Largest violation of the stationarity (flow) equations under `kernel`.
    pub fn flow_residual(&self, kernel: &Kernel) -> f64 {
        let ns = self.rho.len();
        let mut inflow = vec![0.0; ns];
        for (s, row) in self.rho.iter().enumerate() {
            for (a, r) in row.iter().enumerate() {
                for (sp, p) in kernel[s][a].iter().enumerate() {
                    inflow[sp] += p * r;
                }
            }
        }
        (0..ns)
            .map(|s| (self.rho[s].iter().sum::<f64>() - inflow[s]).abs())
            .fold(0.0, f64::max)
    }
}

/// Normalizes each occupancy row into a policy; rows with total mass at most
/// `1e-12` become uniform.
pub fn policy_from_occupancy(rho: &OccupancyMeasure) -> StationaryPolicy {
    let probs = rho
        .table()
        .iter()
        .map(|row| {
            let mass: f64 = row.iter().sum();
            if mass > STRUCTURAL_TOL {
                row.iter().map(|v| v / mass).collect()
            } else {
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect();
    StationaryPolicy { probs }
}

/// State-to-state chain `P_pi(s'|s) = sum_a pi(a|s) P(s'|s,a)`.
pub fn induced_chain(kernel: &Kernel, policy: &StationaryPolicy) -> Vec<Vec<f64>> {
    kernel
        .iter()
        .enumerate()
        .map(|(s, block)| {
            let mut row = vec![0.0; kernel.len()];
            for (a, next) in block.iter().enumerate() {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                for (sp, q) in next.iter().enumerate() {
                    row[sp] += p * q;
                }
            }
            row
        })
        .collect()
}

/// Per-state expectation `r_pi(s) = sum_a pi(a|s) table(s,a)`.
pub fn policy_average(table: &Table, policy: &StationaryPolicy) -> Vec<f64> {
    table
        .iter()
        .enumerate()
        .map(|(s, row)| row.iter().zip(policy.row(s)).map(|(v, p)| v * p).sum())
        .collect()
}

/// Long-run average reward and average costs of `policy` on `model`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRunAverages {
    pub reward: f64,
    pub costs: Vec<f64>,
}

pub fn long_run_averages(policy: &StationaryPolicy, model: &TabularCmdp) -> Result<LongRunAverages> {
    let chain = induced_chain(&model.transition, policy);
    let mu = analysis::stationary_distribution(&chain)?;
    let rho = OccupancyMeasure::from_stationary(&mu, policy)?;
    Ok(LongRunAverages {
        reward: rho.dot(&model.reward),
        costs: model.costs.iter().map(|c| rho.dot(c)).collect(),
    })
}

/// Visit and transition counts gathered by a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModel {
    n_states: usize,
    n_actions: usize,
    visits: Vec<Vec<u64>>,
    transitions: Vec<Vec<Vec<u64>>>,
    steps: u64,
}

impl EmpiricalModel {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        EmpiricalModel {
            n_states,
            n_actions,
            visits: vec![vec![0; n_actions]; n_states],
            transitions: vec![vec![vec![0; n_states]; n_actions]; n_states],
            steps: 0,
        }
    }

    pub fn record(&mut self, s: usize, a: usize, next: usize) {
        self.visits[s][a] += 1;
        self.transitions[s][a][next] += 1;
        self.steps += 1;
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[s][a]
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[u64] {
        &self.transitions[s][a]
    }

    pub fn visit_table(&self) -> &[Vec<u64>] {
        &self.visits
    }

    /// Number of recorded transitions.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Current global time index (1-based): one past the recorded transitions.
    pub fn time(&self) -> u64 {
        self.steps + 1
    }

    /// Returns true iff every transition row sums to its visit count and the
    /// visit counts sum to the number of recorded steps.
    pub fn is_consistent(&self) -> bool {
        let mut total = 0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if self.transitions[s][a].iter().sum::<u64>() != self.visits[s][a] {
                    return false;
                }
                total += self.visits[s][a];
            }
        }
        total == self.steps
    }
}

/// L1 confidence set around an empirical kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub p_hat: Kernel,
    /// L1 radius per `(s,a)`, in `[0, 2]`.
    pub radius: Table,
}

impl ConfidenceSet {
    pub fn new(p_hat: Kernel, radius: Table) -> Result<Self> {
        for (s, block) in p_hat.iter().enumerate() {
            if radius.get(s).map(Vec::len) != Some(block.len()) {
                return Err(Error::InvalidModel("confidence radius shape mismatch".into()));
            }
            for (a, row) in block.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > STRUCTURAL_TOL {
                    return Err(Error::InvalidModel(format!("p_hat row ({s},{a}) sums to {sum}")));
                }
                let b = radius[s][a];
                if !(0.0..=2.0).contains(&b) {
                    return Err(Error::InvalidModel(format!("radius ({s},{a}) = {b} outside [0,2]")));
                }
            }
        }
        Ok(ConfidenceSet { p_hat, radius })
    }

    /// Degenerate set containing only `kernel`.
    pub fn exact(kernel: &Kernel) -> Self {
        let radius = kernel.iter().map(|b| vec![0.0; b.len()]).collect();
        ConfidenceSet { p_hat: kernel.clone(), radius }
    }

    pub fn n_states(&self) -> usize {
        self.p_hat.len()
    }

    pub fn n_actions(&self) -> usize {
        self.p_hat.first().map_or(0, Vec::len)
    }

    /// True iff every row of `kernel` lies in its L1 ball.
    pub fn contains(&self, kernel: &Kernel) -> bool {
        crate::confidence::event_holds(&self.p_hat, kernel, &self.radius)
    }
}
