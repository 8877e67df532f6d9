//! Exact average-reward analysis of a fixed stationary policy: stationary
//! distributions, gain and bias, the optimistic-model Bellman error, expected
//! hitting times and the mixture of two occupancy measures.
//!
//! Everything here is a direct dense linear solve; the intended chains have
//! at most a few hundred states.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{induced_chain, policy_average, Kernel, OccupancyMeasure, StationaryPolicy, Table};

/// Residual accepted for the balance equations of a stationary distribution.
pub const STATIONARY_TOL: f64 = 1e-10;

/// Gain and bias of a policy, bias pinned to zero at `reference_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBias {
    pub gain: f64,
    pub bias: Vec<f64>,
    pub reference_state: usize,
}

/// Largest violation of `h = r_pi - gain + P_pi h`.
pub fn bellman_residual(gb: &GainBias, chain: &[Vec<f64>], r_pi: &[f64]) -> f64 {
    chain
        .iter()
        .zip(r_pi)
        .zip(&gb.bias)
        .map(|((row, r), h)| {
            let ph: f64 = row.iter().zip(&gb.bias).map(|(p, h)| p * h).sum();
            (r - gb.gain + ph - h).abs()
        })
        .fold(0.0, f64::max)
}

fn check_square(chain: &[Vec<f64>]) -> Result<usize> {
    let n = chain.len();
    if n == 0 || chain.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidModel("chain must be a non-empty square table".into()));
    }
    Ok(n)
}

/// States reachable from `start` along positive-probability edges.
fn reachable_from(chain: &[Vec<f64>], start: usize, blocked: Option<usize>) -> Vec<bool> {
    let mut seen = vec![false; chain.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        if Some(s) == blocked && s != start {
            continue;
        }
        for (sp, &p) in chain[s].iter().enumerate() {
            if p > 0.0 && !seen[sp] {
                seen[sp] = true;
                stack.push(sp);
            }
        }
    }
    seen
}

/// True iff every state reaches every other state.
pub fn is_irreducible(chain: &[Vec<f64>]) -> bool {
    let n = chain.len();
    if n == 0 {
        return false;
    }
    if !reachable_from(chain, 0, None).iter().all(|&b| b) {
        return false;
    }
    let transposed: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| chain[j][i]).collect()).collect();
    reachable_from(&transposed, 0, None).iter().all(|&b| b)
}

/// Stationary distribution of an irreducible chain given as a row-stochastic table.
pub fn stationary_distribution(chain: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = check_square(chain)?;
    if !is_irreducible(chain) {
        return Err(Error::NonErgodicChain("chain is not irreducible".into()));
    }
    // (P^T - I) mu = 0 with the last balance equation replaced by sum(mu) = 1.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = chain[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonErgodicChain("singular balance system".into()))?;
    let mut mu: Vec<f64> = mu.iter().map(|v| if v.abs() < 1e-15 { 0.0 } else { *v }).collect();
    if mu.iter().any(|v| *v < -STATIONARY_TOL) {
        return Err(Error::NonErgodicChain("negative stationary mass".into()));
    }
    for v in &mut mu {
        *v = v.max(0.0);
    }
    let residual = (0..n)
        .map(|j| ((0..n).map(|i| mu[i] * chain[i][j]).sum::<f64>() - mu[j]).abs())
        .fold(0.0, f64::max);
    if residual > STATIONARY_TOL {
        return Err(Error::NonErgodicChain(format!("balance residual {residual:e}")));
    }
    Ok(mu)
}

/// Gain and bias of `policy` under `kernel` with reward table `reward`.
///
/// Solves the Poisson equation `h(s) + gain - sum_s' P_pi(s'|s) h(s') = r_pi(s)`
/// jointly for `(gain, h)` with `h(0) = 0`.
pub fn gain_bias(policy: &StationaryPolicy, kernel: &Kernel, reward: &Table) -> Result<GainBias> {
    let chain = induced_chain(kernel, policy);
    let r_pi = policy_average(reward, policy);
    gain_bias_of_chain(&chain, &r_pi)
}

pub fn gain_bias_of_chain(chain: &[Vec<f64>], r_pi: &[f64]) -> Result<GainBias> {
    let n = check_square(chain)?;
    if !is_irreducible(chain) {
        return Err(Error::NonErgodicChain("chain is not irreducible".into()));
    }
    // Unknown 0 is the gain (h(0) = 0 is substituted), unknowns 1..n are h(1..n).
    let mut a = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        a[(s, 0)] = 1.0;
        for sp in 1..n {
            a[(s, sp)] = if s == sp { 1.0 } else { 0.0 } - chain[s][sp];
        }
    }
    let b = DVector::from_column_slice(r_pi);
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonErgodicChain("singular Poisson system".into()))?;
    let mut bias = vec![0.0; n];
    bias[1..].copy_from_slice(&sol.as_slice()[1..]);
    Ok(GainBias { gain: sol[0], bias, reference_state: 0 })
}

/// `B(s,a) = sum_s' (P_tilde - P)(s'|s,a) h_tilde(s')` with `h_tilde` the bias
/// of `policy` under `p_tilde`.
pub fn bellman_error(
    policy: &StationaryPolicy,
    p_tilde: &Kernel,
    p_true: &Kernel,
    reward: &Table,
) -> Result<Table> {
    let gb = gain_bias(policy, p_tilde, reward)?;
    Ok(bellman_error_with_bias(p_tilde, p_true, &gb.bias))
}

pub fn bellman_error_with_bias(p_tilde: &Kernel, p_true: &Kernel, bias: &[f64]) -> Table {
    p_tilde
        .iter()
        .zip(p_true)
        .map(|(bt, bp)| {
            bt.iter()
                .zip(bp)
                .map(|(rt, rp)| rt.iter().zip(rp).zip(bias).map(|((x, y), h)| (x - y) * h).sum())
                .collect()
        })
        .collect()
}

/// `|(gain under P_tilde - gain under P) - sum rho_P(s,a) B(s,a)|`.
///
/// The left side comes from two Poisson solves; the right side from the
/// stationary distribution under `p_true` and the Bellman error table.
pub fn verify_bellman_identity(
    policy: &StationaryPolicy,
    p_tilde: &Kernel,
    p_true: &Kernel,
    reward: &Table,
) -> Result<f64> {
    let optimistic = gain_bias(policy, p_tilde, reward)?;
    let actual = gain_bias(policy, p_true, reward)?;
    let b = bellman_error_with_bias(p_tilde, p_true, &optimistic.bias);
    let mu = stationary_distribution(&induced_chain(p_true, policy))?;
    let rho = OccupancyMeasure::from_stationary(&mu, policy)?;
    Ok(((optimistic.gain - actual.gain) - rho.dot(&b)).abs())
}

/// Expected number of steps to reach `target` from `source` under `policy`.
pub fn hitting_time(policy: &StationaryPolicy, kernel: &Kernel, source: usize, target: usize) -> Result<f64> {
    hitting_time_of_chain(&induced_chain(kernel, policy), source, target)
}

pub fn hitting_time_of_chain(chain: &[Vec<f64>], source: usize, target: usize) -> Result<f64> {
    let n = check_square(chain)?;
    if source >= n || target >= n {
        return Err(Error::InvalidModel(format!("state index out of range for {n} states")));
    }
    if source == target {
        return Ok(0.0);
    }
    // States visited before the first arrival at target.
    let visited = reachable_from(chain, source, Some(target));
    if !visited[target] {
        return Err(Error::NonErgodicChain(format!("state {target} unreachable from {source}")));
    }
    for s in (0..n).filter(|&s| visited[s] && s != target) {
        if !reachable_from(chain, s, None)[target] {
            return Err(Error::NonErgodicChain(format!(
                "state {target} is not reached almost surely from {source}"
            )));
        }
    }
    let states: Vec<usize> = (0..n).filter(|&s| visited[s] && s != target).collect();
    let index = |s: usize| states.iter().position(|&x| x == s);
    let k = states.len();
    let mut a = DMatrix::<f64>::identity(k, k);
    for (i, &s) in states.iter().enumerate() {
        for (sp, &p) in chain[s].iter().enumerate() {
            if let Some(j) = index(sp) {
                a[(i, j)] -= p;
            }
        }
    }
    let b = DVector::from_element(k, 1.0);
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonErgodicChain(format!("state {target} is not reached almost surely")))?;
    let value = h[index(source).expect("source is visited")];
    if !value.is_finite() || h.iter().any(|v| *v < 0.0) {
        return Err(Error::NonErgodicChain(format!("state {target} is not reached almost surely")));
    }
    Ok(value)
}

/// Largest expected hitting time over all ordered state pairs.
pub fn max_hitting_time(policy: &StationaryPolicy, kernel: &Kernel) -> Result<f64> {
    let chain = induced_chain(kernel, policy);
    let n = chain.len();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for t in 0..n {
            worst = worst.max(hitting_time_of_chain(&chain, s, t)?);
        }
    }
    Ok(worst)
}

/// `(1 - eps/delta) rho_star + (eps/delta) rho_slater`.
pub fn mixture_occupancy(
    rho_star: &OccupancyMeasure,
    rho_slater: &OccupancyMeasure,
    eps: f64,
    delta: f64,
) -> Result<OccupancyMeasure> {
    if eps < 0.0 || eps > delta {
        return Err(Error::InvalidMixture { eps, delta });
    }
    if rho_star.n_states() != rho_slater.n_states() || rho_star.n_actions() != rho_slater.n_actions() {
        return Err(Error::InvalidModel("occupancy measures have different shapes".into()));
    }
    let w = if delta > 0.0 { eps / delta } else { 0.0 };
    let rho = rho_star
        .table()
        .iter()
        .zip(rho_slater.table())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
        .collect();
    OccupancyMeasure::new(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_action(chain: &[Vec<f64>]) -> Kernel {
        chain.iter().map(|row| vec![row.clone()]).collect()
    }

    #[test]
    fn two_state_stationary() {
        let mu = stationary_distribution(&[vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        assert!((mu[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((mu[1] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let chain = vec![vec![0.2, 0.3, 0.5], vec![0.5, 0.2, 0.3], vec![0.3, 0.5, 0.2]];
        for v in stationary_distribution(&chain).unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn reducible_chain_rejected() {
        let err = stationary_distribution(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::NonErgodicChain(_)));
    }

    #[test]
    fn constant_reward_has_flat_bias() {
        let k = single_action(&[vec![0.3, 0.7], vec![0.6, 0.4]]);
        let gb = gain_bias(&StationaryPolicy::uniform(2, 1), &k, &vec![vec![2.5], vec![2.5]]).unwrap();
        assert!((gb.gain - 2.5).abs() < 1e-14);
        assert!(gb.bias.iter().all(|h| h.abs() < 1e-14));
    }

    #[test]
    fn two_state_gain_and_bias() {
        // h1 - 0.5 h1 = 0 - 5/6 with h0 = 0 gives h1 = -5/3.
        let chain = vec![vec![0.9, 0.1], vec![0.5, 0.5]];
        let gb = gain_bias(&StationaryPolicy::uniform(2, 1), &single_action(&chain), &vec![vec![1.0], vec![0.0]])
            .unwrap();
        assert!((gb.gain - 5.0 / 6.0).abs() < 1e-14);
        assert_eq!(gb.bias[0], 0.0);
        assert!((gb.bias[1] + 5.0 / 3.0).abs() < 1e-14);
        assert!(bellman_residual(&gb, &chain, &[1.0, 0.0]) < 1e-14);
    }

    #[test]
    fn bellman_error_vanishes_on_true_model_and_ignores_bias_shift() {
        let p: Kernel = vec![
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![vec![0.4, 0.6], vec![0.9, 0.1]],
        ];
        let q: Kernel = vec![
            vec![vec![0.5, 0.5], vec![0.1, 0.9]],
            vec![vec![0.6, 0.4], vec![0.7, 0.3]],
        ];
        let r = vec![vec![1.0, 0.2], vec![0.0, 0.6]];
        let pi = StationaryPolicy::new(vec![vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
        let zero = bellman_error(&pi, &p, &p, &r).unwrap();
        assert!(zero.iter().flatten().all(|b| *b == 0.0));

        let h = gain_bias(&pi, &q, &r).unwrap().bias;
        let shifted: Vec<f64> = h.iter().map(|v| v + 10.0).collect();
        let b1 = bellman_error_with_bias(&q, &p, &h);
        let b2 = bellman_error_with_bias(&q, &p, &shifted);
        for (x, y) in b1.iter().flatten().zip(b2.iter().flatten()) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!(verify_bellman_identity(&pi, &q, &p, &r).unwrap() < 1e-12);
        assert!(verify_bellman_identity(&pi, &p, &p, &r).unwrap() < 1e-15);
    }

    #[test]
    fn hitting_times() {
        let chain = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(hitting_time_of_chain(&chain, 1, 1).unwrap(), 0.0);
        assert!((hitting_time_of_chain(&chain, 0, 1).unwrap() - 2.0).abs() < 1e-14);
        let stuck = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        assert!(hitting_time_of_chain(&stuck, 0, 1).is_err());
        assert!((hitting_time_of_chain(&stuck, 1, 0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hitting_time_errors_when_target_may_be_missed() {
        // From 0 the chain may fall into the absorbing state 2 and never reach 1.
        let chain = vec![vec![0.0, 0.5, 0.5], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(hitting_time_of_chain(&chain, 0, 1).is_err());
    }

    #[test]
    fn mixture_endpoints() {
        let a = OccupancyMeasure::new(vec![vec![0.5, 0.5]]).unwrap();
        let b = OccupancyMeasure::new(vec![vec![0.0, 1.0]]).unwrap();
        assert_eq!(mixture_occupancy(&a, &b, 0.0, 0.2).unwrap(), a);
        assert_eq!(mixture_occupancy(&a, &b, 0.2, 0.2).unwrap(), b);
        assert!(matches!(mixture_occupancy(&a, &b, 0.3, 0.2), Err(Error::InvalidMixture { .. })));
    }
}
