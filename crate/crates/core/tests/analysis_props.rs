use cmdp_lab::analysis::{gain_bias, mixture_occupancy, verify_bellman_identity};
use cmdp_lab::envs::{build_queue, random_cmdp, QueueSpec};
use cmdp_lab::learner::{empirical_phat, Learner, LearnerConfig};
use cmdp_lab::model::{StationaryPolicy, Table};
use cmdp_lab::occupancy::solve_true_model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn random_policy(ns: usize, na: usize, seed: u64) -> StationaryPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Table = (0..ns)
        .map(|_| {
            let raw: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 0.01).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        })
        .collect();
    StationaryPolicy::new(rows).unwrap()
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn bellman_identity_holds(s in 1usize..=4, a in 1usize..=3, seed in any::<u64>()) {
        let m = random_cmdp(s, a, 0, seed, 0.02).unwrap().model;
        let p_tilde = random_cmdp(s, a, 0, seed.wrapping_add(1), 0.02).unwrap().model.transition;
        let pi = random_policy(s, a, seed);
        let residual = verify_bellman_identity(&pi, &p_tilde, &m.transition, &m.reward).unwrap();
        prop_assert!(residual <= 1e-8, "residual {}", residual);
    }

    #[test]
    fn bias_is_shift_invariant_in_its_use(s in 2usize..=4, a in 1usize..=3, seed in any::<u64>(), shift in -10.0f64..10.0) {
        let m = random_cmdp(s, a, 0, seed, 0.02).unwrap().model;
        let pi = random_policy(s, a, seed);
        let gb = gain_bias(&pi, &m.transition, &m.reward).unwrap();
        let shifted: Vec<f64> = gb.bias.iter().map(|h| h + shift).collect();
        // Poisson equation: gain + h(s) = r_pi(s) + sum_s' P_pi(s'|s) h(s'), for h and h + c.
        for st in 0..s {
            for h in [&gb.bias, &shifted] {
                let rhs: f64 = (0..a).map(|ac| pi.prob(st, ac) * (m.reward[st][ac]
                    + m.transition[st][ac].iter().zip(h.iter()).map(|(p, v)| p * v).sum::<f64>())).sum();
                prop_assert!((gb.gain + h[st] - rhs).abs() <= 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn mixture_is_tight_feasible_with_bounded_gap(s in 1usize..=4, a in 1usize..=3, d in 1usize..=3, seed in any::<u64>()) {
        let g = random_cmdp(s, a, d, seed, 0.02).unwrap();
        let delta = g.slack;
        let eps = delta / 2.0;
        let star = solve_true_model(&g.model, 0.0).unwrap();
        let mix = mixture_occupancy(&star.rho, &g.slater_occupancy, eps, delta).unwrap();
        for c in &g.model.costs {
            prop_assert!(mix.dot(c) <= -eps + 1e-9);
        }
        prop_assert!(mix.flow_residual(&g.model.transition) <= 1e-9);
        let lipschitz = 1.0;
        let gap = star.objective_value - mix.dot(&g.model.reward);
        prop_assert!(gap <= 2.0 * lipschitz * eps / delta + 1e-9);
    }
}

#[test]
fn bellman_identity_on_queue_estimate() {
    let model = build_queue(&QueueSpec::default()).unwrap();
    let config = LearnerConfig { k: 1.0, horizon: 5_000, seed: 3, ..LearnerConfig::default() };
    let mut learner = Learner::new(&model, config).unwrap();
    for step in learner.by_ref() {
        step.unwrap();
    }
    let p_hat = empirical_phat(learner.counts());
    let policy = learner.current_epoch().unwrap().policy.clone();
    let residual = verify_bellman_identity(&policy, &p_hat, &model.transition, &model.reward).unwrap();
    assert!(residual <= 1e-8, "residual {residual}");
}

#[test]
fn mixture_rejects_eps_above_delta() {
    let g = random_cmdp(2, 2, 1, 1, 0.05).unwrap();
    let rho = g.slater_occupancy.clone();
    assert!(mixture_occupancy(&rho, &rho, 0.6, 0.5).is_err());
    assert!(mixture_occupancy(&rho, &rho, 0.5, 0.5).is_ok());
}
