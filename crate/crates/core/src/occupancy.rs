//! Occupancy-measure linear programs for constrained average-reward MDPs.
//!
//! The known-model program maximizes `sum rho r` over stationary occupancy
//! measures `rho` subject to every average cost being at most `-epsilon`.
//! The optimistic program additionally lets each transition row move inside
//! an L1 ball around an empirical estimate, which after the usual change of
//! variables (`z(s,a,s') = rho(s,a) P(s'|s,a)`) is still linear.
//!
//! Two linearizations of the optimistic program are provided:
//!
//! * [`ExtendedFormulation::Explicit`] keeps one `z` and one absolute-value
//!   slack `w` per `(s,a,s')` triple.
//! * [`ExtendedFormulation::Aggregated`] writes `z = rho P_hat + u_plus - u_minus`
//!   and only keeps `u_minus` on the support of `P_hat`. The flow constraints
//!   see `u_plus` only through its per-target inflow `v(s')`, so `u_plus` is
//!   replaced by `v` plus one balance row and recovered afterwards by spreading
//!   each pair's added mass over targets in proportion to `v`. Both programs
//!   have the same optimal value; the aggregated one is several times smaller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    policy_from_occupancy, ConfidenceSet, Kernel, OccupancyMeasure, StationaryPolicy, Table, TabularCmdp,
};
use crate::simplex::{self, LinearProgram, LpStatus, Relation, SimplexOptions};

/// Occupancy mass below which an implied transition row falls back to `P_hat`.
pub const IMPLIED_ROW_MIN_MASS: f64 = 1e-10;
/// Smallest epsilon tried by [`feasibility_ladder`] before falling back to zero.
pub const LADDER_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSolution {
    pub rho: OccupancyMeasure,
    pub policy: StationaryPolicy,
    /// Average reward under the solved (possibly optimistic) model.
    pub objective_value: f64,
    pub epsilon_used: f64,
    /// Transition kernel selected by the optimistic program.
    pub implied_transition: Option<Kernel>,
    pub lp_iterations: usize,
}

impl ConstrainedSolution {
    pub fn average_costs(&self, costs: &[Table]) -> Vec<f64> {
        costs.iter().map(|c| self.rho.dot(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExtendedFormulation {
    #[default]
    Aggregated,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverConfig {
    pub simplex: SimplexOptions,
    pub formulation: ExtendedFormulation,
}

fn pair(s: usize, a: usize, n_actions: usize) -> usize {
    s * n_actions + a
}

/// Assembles the known-model program; variable `s * A + a` is `rho(s,a)`.
pub fn true_model_lp(model: &TabularCmdp, epsilon: f64) -> LinearProgram {
    let (ns, na) = (model.n_states, model.n_actions);
    let n = ns * na;
    let mut lp = LinearProgram::new(model.reward.iter().flatten().copied().collect());
    lp.add(vec![1.0; n], Relation::Eq, 1.0);
    for target in 0..ns {
        let mut row = vec![0.0; n];
        for s in 0..ns {
            for a in 0..na {
                row[pair(s, a, na)] -= model.transition[s][a][target];
            }
        }
        for a in 0..na {
            row[pair(target, a, na)] += 1.0;
        }
        lp.add(row, Relation::Eq, 0.0);
    }
    for cost in &model.costs {
        lp.add(cost.iter().flatten().copied().collect(), Relation::Le, -epsilon);
    }
    lp
}

/// Best occupancy measure for the known model with every cost tightened by `epsilon`.
pub fn solve_true_model(model: &TabularCmdp, epsilon: f64) -> Result<ConstrainedSolution> {
    solve_true_model_with(model, epsilon, &SimplexOptions::default())
}

pub fn solve_true_model_with(
    model: &TabularCmdp,
    epsilon: f64,
    options: &SimplexOptions,
) -> Result<ConstrainedSolution> {
    check_epsilon(epsilon)?;
    let lp = true_model_lp(model, epsilon);
    let (x, iterations) = run_lp(&lp, options, epsilon)?;
    let rho = occupancy_from(&x[..model.n_pairs()], model.n_states, model.n_actions)?;
    Ok(ConstrainedSolution {
        objective_value: rho.dot(&model.reward),
        policy: policy_from_occupancy(&rho),
        rho,
        epsilon_used: epsilon,
        implied_transition: None,
        lp_iterations: iterations,
    })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::MalformedProgram(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    Ok(())
}

fn run_lp(lp: &LinearProgram, options: &SimplexOptions, epsilon: f64) -> Result<(Vec<f64>, usize)> {
    let sol = simplex::solve_with(lp, options)?;
    match sol.status {
        LpStatus::Optimal => Ok((sol.x.expect("optimal solutions carry x"), sol.iterations)),
        LpStatus::Infeasible => Err(Error::InfeasibleProgram(format!(
            "no occupancy measure satisfies the constraints tightened by {epsilon}"
        ))),
        LpStatus::Unbounded => Err(Error::UnboundedProgram),
    }
}

/// Clamps round-off negatives and renormalizes the LP's occupancy block.
fn occupancy_from(values: &[f64], ns: usize, na: usize) -> Result<OccupancyMeasure> {
    let clamped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(Error::NumericalFailure { violation: 1.0 });
    }
    OccupancyMeasure::new(clamped.chunks(na).take(ns).map(|r| r.iter().map(|v| v / total).collect()).collect())
}

/// Optimistic program over the confidence set `conf`.
pub fn solve_optimistic(
    reward: &Table,
    costs: &[Table],
    conf: &ConfidenceSet,
    epsilon: f64,
) -> Result<ConstrainedSolution> {
    solve_optimistic_with(reward, costs, conf, epsilon, &SolverConfig::default())
}

pub fn solve_optimistic_with(
    reward: &Table,
    costs: &[Table],
    conf: &ConfidenceSet,
    epsilon: f64,
    config: &SolverConfig,
) -> Result<ConstrainedSolution> {
    check_epsilon(epsilon)?;
    let (ns, na) = (conf.n_states(), conf.n_actions());
    if reward.len() != ns || costs.iter().chain(Some(reward)).any(|t| t.len() != ns || t.iter().any(|r| r.len() != na)) {
        return Err(Error::MalformedProgram("reward/cost tables do not match the confidence set".into()));
    }
    let (rho, mut flows, iterations) = match config.formulation {
        ExtendedFormulation::Aggregated => {
            let layout = AggregatedLayout::new(conf);
            let lp = layout.program(reward, costs, conf, epsilon);
            let (x, it) = run_lp(&lp, &config.simplex, epsilon)?;
            let rho = occupancy_from(&x[..ns * na], ns, na)?;
            (rho, layout.flows(&x, conf), it)
        }
        ExtendedFormulation::Explicit => {
            let lp = explicit_program(reward, costs, conf, epsilon);
            let (x, it) = run_lp(&lp, &config.simplex, epsilon)?;
            let n_z = ns * na * ns;
            let rho_raw: Vec<f64> = x[..n_z].chunks(ns).map(|c| c.iter().map(|v| v.max(0.0)).sum()).collect();
            let rho = occupancy_from(&rho_raw, ns, na)?;
            let flows = x[..n_z].chunks(ns).map(<[f64]>::to_vec).collect::<Vec<_>>();
            (rho, flows, it)
        }
    };
    let implied = implied_transition(&rho, &mut flows, conf);
    Ok(ConstrainedSolution {
        objective_value: rho.dot(reward),
        policy: policy_from_occupancy(&rho),
        rho,
        epsilon_used: epsilon,
        implied_transition: Some(implied),
        lp_iterations: iterations,
    })
}

/// `P_tilde(s'|s,a) = z(s,a,s') / rho(s,a)`, with `P_hat` on near-empty rows.
/// `flows` holds `z` per pair, in pair order.
fn implied_transition(rho: &OccupancyMeasure, flows: &mut [Vec<f64>], conf: &ConfidenceSet) -> Kernel {
    let (ns, na) = (conf.n_states(), conf.n_actions());
    (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let z = &mut flows[pair(s, a, na)];
                    let mass: f64 = z.iter().map(|v| v.max(0.0)).sum();
                    if rho.get(s, a) > IMPLIED_ROW_MIN_MASS && mass > 0.0 {
                        z.iter().map(|v| v.max(0.0) / mass).collect()
                    } else {
                        conf.p_hat[s][a].clone()
                    }
                })
                .collect()
        })
        .collect()
}

/// Column layout of the aggregated optimistic program:
/// `rho` (S*A) | `u_minus` on supp(P_hat) | `v` (S).
struct AggregatedLayout {
    ns: usize,
    na: usize,
    /// `(pair, target)` of each `u_minus` column.
    minus: Vec<(usize, usize)>,
}

impl AggregatedLayout {
    fn new(conf: &ConfidenceSet) -> Self {
        let (ns, na) = (conf.n_states(), conf.n_actions());
        let mut minus = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                for (sp, p) in conf.p_hat[s][a].iter().enumerate() {
                    if *p > 0.0 {
                        minus.push((pair(s, a, na), sp));
                    }
                }
            }
        }
        AggregatedLayout { ns, na, minus }
    }

    fn minus_col(&self, k: usize) -> usize {
        self.ns * self.na + k
    }

    fn v_col(&self, target: usize) -> usize {
        self.ns * self.na + self.minus.len() + target
    }

    fn n_vars(&self) -> usize {
        self.ns * self.na + self.minus.len() + self.ns
    }

    fn program(&self, reward: &Table, costs: &[Table], conf: &ConfidenceSet, epsilon: f64) -> LinearProgram {
        let (ns, na) = (self.ns, self.na);
        let n_pairs = ns * na;
        let mut objective = vec![0.0; self.n_vars()];
        for (o, r) in objective.iter_mut().zip(reward.iter().flatten()) {
            *o = *r;
        }
        let mut lp = LinearProgram::new(objective);

        let mut total = vec![0.0; self.n_vars()];
        total[..n_pairs].fill(1.0);
        lp.add(total, Relation::Eq, 1.0);

        // Flow: sum_a rho(s',a) - sum rho P_hat(s'|.) + sum u_minus(., s') - v(s') = 0.
        let mut flow = vec![vec![0.0; self.n_vars()]; ns];
        for s in 0..ns {
            for a in 0..na {
                let p = pair(s, a, na);
                flow[s][p] += 1.0;
                for (sp, q) in conf.p_hat[s][a].iter().enumerate() {
                    flow[sp][p] -= q;
                }
            }
        }
        for (k, &(_, sp)) in self.minus.iter().enumerate() {
            flow[sp][self.minus_col(k)] += 1.0;
        }
        for (sp, row) in flow.iter_mut().enumerate() {
            row[self.v_col(sp)] -= 1.0;
        }
        for row in flow {
            lp.add(row, Relation::Eq, 0.0);
        }

        // Ball: removed mass plus added mass (equal to it) within radius * rho.
        let mut by_pair: Vec<Vec<usize>> = vec![Vec::new(); n_pairs];
        for (k, &(p, _)) in self.minus.iter().enumerate() {
            by_pair[p].push(k);
        }
        for s in 0..ns {
            for a in 0..na {
                let p = pair(s, a, na);
                let mut terms: Vec<(usize, f64)> = by_pair[p].iter().map(|&k| (self.minus_col(k), 2.0)).collect();
                terms.push((p, -conf.radius[s][a]));
                lp.add_sparse(&terms, Relation::Le, 0.0);
            }
        }
        // Removed mass cannot exceed what P_hat puts on the target.
        for (k, &(p, sp)) in self.minus.iter().enumerate() {
            let (s, a) = (p / na, p % na);
            lp.add_sparse(&[(self.minus_col(k), 1.0), (p, -conf.p_hat[s][a][sp])], Relation::Le, 0.0);
        }
        // Total added mass equals total removed mass.
        let mut balance = vec![0.0; self.n_vars()];
        for k in 0..self.minus.len() {
            balance[self.minus_col(k)] = -1.0;
        }
        for sp in 0..ns {
            balance[self.v_col(sp)] = 1.0;
        }
        lp.add(balance, Relation::Eq, 0.0);

        for cost in costs {
            let mut row = vec![0.0; self.n_vars()];
            for (r, c) in row.iter_mut().zip(cost.iter().flatten()) {
                *r = *c;
            }
            lp.add(row, Relation::Le, -epsilon);
        }
        lp
    }

    /// Reconstructs `z(s,a,.)` for every pair from an optimal point.
    fn flows(&self, x: &[f64], conf: &ConfidenceSet) -> Vec<Vec<f64>> {
        let (ns, na) = (self.ns, self.na);
        let mut z: Vec<Vec<f64>> = (0..ns * na)
            .map(|p| {
                let rho = x[p].max(0.0);
                conf.p_hat[p / na][p % na].iter().map(|q| rho * q).collect()
            })
            .collect();
        let mut removed = vec![0.0; ns * na];
        for (k, &(p, sp)) in self.minus.iter().enumerate() {
            let u = x[self.minus_col(k)].max(0.0);
            z[p][sp] -= u;
            removed[p] += u;
        }
        let inflow: Vec<f64> = (0..ns).map(|sp| x[self.v_col(sp)].max(0.0)).collect();
        let total_inflow: f64 = inflow.iter().sum();
        if total_inflow > 0.0 {
            for (p, row) in z.iter_mut().enumerate() {
                for (sp, v) in row.iter_mut().enumerate() {
                    *v += removed[p] * inflow[sp] / total_inflow;
                }
            }
        }
        z
    }
}

/// The optimistic program with one `z` and one `w` per `(s,a,s')`:
/// columns `z` (S*A*S) | `w` (S*A*S).
pub fn explicit_program(reward: &Table, costs: &[Table], conf: &ConfidenceSet, epsilon: f64) -> LinearProgram {
    let (ns, na) = (conf.n_states(), conf.n_actions());
    let n_z = ns * na * ns;
    let zc = |s: usize, a: usize, sp: usize| (s * na + a) * ns + sp;
    let wc = |s: usize, a: usize, sp: usize| n_z + zc(s, a, sp);
    let mut objective = vec![0.0; 2 * n_z];
    for s in 0..ns {
        for a in 0..na {
            for sp in 0..ns {
                objective[zc(s, a, sp)] = reward[s][a];
            }
        }
    }
    let mut lp = LinearProgram::new(objective);
    let mut total = vec![0.0; 2 * n_z];
    total[..n_z].fill(1.0);
    lp.add(total, Relation::Eq, 1.0);
    for target in 0..ns {
        let mut terms = Vec::new();
        for a in 0..na {
            for sp in 0..ns {
                terms.push((zc(target, a, sp), 1.0));
            }
        }
        for s in 0..ns {
            for a in 0..na {
                terms.push((zc(s, a, target), -1.0));
            }
        }
        lp.add_sparse(&terms, Relation::Eq, 0.0);
    }
    for s in 0..ns {
        for a in 0..na {
            let p_hat = &conf.p_hat[s][a];
            for sp in 0..ns {
                // +-(z - rho P_hat) <= w, with rho = sum_s'' z(s,a,s'').
                for sign in [1.0, -1.0] {
                    let mut terms = vec![(wc(s, a, sp), -1.0), (zc(s, a, sp), sign)];
                    for spp in 0..ns {
                        terms.push((zc(s, a, spp), -sign * p_hat[sp]));
                    }
                    lp.add_sparse(&terms, Relation::Le, 0.0);
                }
            }
            let mut terms: Vec<(usize, f64)> = (0..ns).map(|sp| (wc(s, a, sp), 1.0)).collect();
            terms.extend((0..ns).map(|sp| (zc(s, a, sp), -conf.radius[s][a])));
            lp.add_sparse(&terms, Relation::Le, 0.0);
        }
    }
    for cost in costs {
        let mut terms = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                terms.extend((0..ns).map(|sp| (zc(s, a, sp), cost[s][a])));
            }
        }
        lp.add_sparse(&terms, Relation::Le, -epsilon);
    }
    lp
}

/// Solves at `epsilon_target`, halving on infeasibility; below
/// [`LADDER_FLOOR`] a last attempt is made at exactly zero.
pub fn feasibility_ladder<F>(mut solve_fn: F, epsilon_target: f64) -> Result<ConstrainedSolution>
where
    F: FnMut(f64) -> Result<ConstrainedSolution>,
{
    check_epsilon(epsilon_target)?;
    let mut eps = epsilon_target;
    loop {
        match solve_fn(eps) {
            Ok(mut sol) => {
                sol.epsilon_used = eps;
                return Ok(sol);
            }
            Err(Error::InfeasibleProgram(msg)) => {
                if eps == 0.0 {
                    return Err(Error::InfeasibleProgram(format!(
                        "{msg}; infeasible even without tightening (no strictly feasible policy)"
                    )));
                }
                eps /= 2.0;
                if eps < LADDER_FLOOR {
                    eps = 0.0;
                }
            }
            Err(e) => return Err(e),
        }
    }
}
