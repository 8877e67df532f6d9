use cmdp_lab::envs::{build_queue, random_cmdp, QueueSpec};
use cmdp_lab::learner::{run, run_with_planner, KnownModelPlanner, Learner, LearnerConfig};
use cmdp_lab::occupancy::solve_true_model;
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn epochs_bounded_and_counts_consistent(
        s in 1usize..=4, a in 1usize..=3, seed in any::<u64>(), horizon in 1u64..3_000, k in 0.0f64..2.0,
    ) {
        let m = random_cmdp(s, a, 1, seed, 0.02).unwrap().model;
        let cfg = LearnerConfig { k, horizon, seed, ..LearnerConfig::default() };
        let mut learner = Learner::new(&m, cfg).unwrap();
        let mut steps = 0u64;
        for step in learner.by_ref() {
            let step = step.unwrap();
            steps += 1;
            prop_assert_eq!(step.t, steps);
        }
        prop_assert_eq!(steps, horizon);
        let counts = learner.counts();
        prop_assert!(counts.is_consistent());
        prop_assert_eq!(counts.steps(), horizon);
        let bound = (s * a) as f64 * ((horizon as f64).log2() + 2.0);
        prop_assert!((learner.epochs().len() as f64) <= bound);
        for e in learner.epochs() {
            prop_assert!(e.epsilon_used <= e.epsilon);
        }
    }
}

#[test]
fn same_seed_same_trajectory() {
    let m = build_queue(&QueueSpec::default()).unwrap();
    let cfg = LearnerConfig { k: 2.0, horizon: 2_000, seed: 11, ..LearnerConfig::default() };
    let a = run(&m, &cfg).unwrap();
    let b = run(&m, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run(&m, &LearnerConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn known_model_planner_reproduces_oracle() {
    for seed in 0..10 {
        let g = random_cmdp(3, 3, 2, seed, 0.02).unwrap();
        let oracle = solve_true_model(&g.model, 0.0).unwrap().objective_value;
        let cfg = LearnerConfig { k: 0.0, horizon: 300, seed, ..LearnerConfig::default() };
        let rec = run_with_planner(&g.model, &cfg, KnownModelPlanner(g.model.transition.clone())).unwrap();
        for e in &rec.epochs {
            assert!((e.objective - oracle).abs() <= 1e-7, "epoch {} objective {} vs {}", e.index, e.objective, oracle);
        }
    }
}

#[test]
fn queue_doubling_epochs_within_bound() {
    let m = build_queue(&QueueSpec::default()).unwrap();
    let horizon = 20_000u64;
    let rec = run(&m, &LearnerConfig { k: 1.0, horizon, seed: 2, ..LearnerConfig::default() }).unwrap();
    let bound = (6 * 16) as f64 * ((horizon as f64).log2() + 2.0);
    assert!((rec.epoch_count() as f64) <= bound);
    assert_eq!(rec.steps.last().unwrap().epoch + 1, rec.epoch_count());
}

#[test]
fn run_record_serializes() {
    let m = random_cmdp(2, 2, 1, 3, 0.1).unwrap().model;
    let rec = run(&m, &LearnerConfig { horizon: 20, ..LearnerConfig::default() }).unwrap();
    let json: serde_json::Value = serde_json::from_str(&rec.to_json()).unwrap();
    assert_eq!(json["steps"].as_array().unwrap().len(), 20);
}
