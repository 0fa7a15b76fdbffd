use approx::assert_abs_diff_eq;
use prefgap_core::bandit::{optimal_policy, Distribution, FeatureMap, FiniteBandit, RewardVector};
use prefgap_core::classes::{
    class_relation, log_ratio_coordinate, policy_distribution, project_into_class, surrogate_reward, ClassRelation,
    LogLinearPolicy, PolicyClassSpec, RewardClassSpec,
};
use prefgap_core::constructions::env_three_arm_midpoint;
use proptest::prelude::*;

fn canonical(r: &[f64], w: &Distribution) -> Vec<f64> {
    RewardVector::tabular(r.to_vec()).centered(w)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_env(vectors: Vec<Vec<f64>>, w: Vec<f64>, r: Vec<f64>, beta: f64) -> FiniteBandit {
    FiniteBandit::new(FeatureMap::new(vectors, 10.0).unwrap(), RewardVector::tabular(r), Distribution::from_weights(&w).unwrap(), beta)
        .unwrap()
}

#[test]
fn zero_parameter_gives_reference() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.3).unwrap();
    let pi = policy_distribution(&LogLinearPolicy { theta: vec![0.0, 0.0] }, &env).unwrap();
    assert!(pi.total_variation(&env.pi_ref) < 1e-15);
}

#[test]
fn midpoint_policy_weights() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1).unwrap();
    let pi = policy_distribution(&LogLinearPolicy { theta: vec![1.0, -1.0] }, &env).unwrap();
    let w = [1f64.exp(), (-1f64).exp(), 1.0];
    let z: f64 = w.iter().sum();
    for (p, v) in pi.probs().iter().zip(w) {
        assert_abs_diff_eq!(*p, v / z, epsilon = 1e-15);
    }
}

#[test]
fn log_odds_scale_linearly() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1).unwrap();
    let base = [0.7, -0.2];
    let odds = |t: f64| {
        let pi = policy_distribution(&LogLinearPolicy { theta: base.iter().map(|v| v * t).collect() }, &env).unwrap();
        (pi.probs()[0] / pi.probs()[1]).ln()
    };
    let one = odds(1.0);
    for t in [2.0, 4.0] {
        assert_abs_diff_eq!(odds(t), t * one, epsilon = 1e-12);
    }
}

#[test]
fn surrogate_examples() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.4).unwrap();
    let s = surrogate_reward(&env.pi_ref, &env).unwrap();
    assert!(s.values.iter().all(|v| v.abs() < 1e-15));

    let theta = [0.3, 1.1];
    let pi = policy_distribution(&LogLinearPolicy { theta: theta.to_vec() }, &env).unwrap();
    let s = surrogate_reward(&pi, &env).unwrap();
    let psi = &env.features.vectors;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let want = env.beta * (theta[0] * (psi[i][0] - psi[j][0]) + theta[1] * (psi[i][1] - psi[j][1]));
        assert_abs_diff_eq!(s.values[i] - s.values[j], want, epsilon = 1e-12);
    }

    let star = optimal_policy(&env, &env.r_star.values);
    let s = surrogate_reward(&star, &env).unwrap();
    let d = max_abs_diff(&canonical(&s.values, &env.pi_ref), &canonical(&env.r_star.values, &env.pi_ref));
    assert!(d < 1e-9, "{d}");
}

#[test]
fn relation_examples() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1).unwrap();
    let rel = class_relation(&RewardClassSpec::Linear { scale_by_beta: true }, &PolicyClassSpec::LogLinear, &env).unwrap();
    assert_eq!(rel, ClassRelation::Isomorphic);

    let single = RewardClassSpec::Singleton { reward: RewardVector::linear(&env.features, &[1.0, -1.0], env.beta) };
    assert_eq!(class_relation(&single, &PolicyClassSpec::LogLinear, &env).unwrap(), ClassRelation::PolicyStronger);

    let half = PolicyClassSpec::LogLinearHalfspace { a: vec![1.0, -1.0], b: 20.0 };
    let aug = RewardClassSpec::Augmented {
        base: Box::new(RewardClassSpec::Surrogate { policy: half.clone() }),
        extra: RewardVector::tabular(vec![2.0, 2.0, 0.0]),
    };
    assert_eq!(class_relation(&aug, &half, &env).unwrap(), ClassRelation::RewardStronger);
}

#[test]
fn projection_examples() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 1.0).unwrap();
    let half = PolicyClassSpec::LogLinearHalfspace { a: vec![1.0, -1.0], b: 20.0 };
    assert_eq!(project_into_class(&[0.0, 0.0], &half, &env).unwrap(), vec![10.0, -10.0]);
    assert_eq!(project_into_class(&[30.0, 0.0], &half, &env).unwrap(), vec![30.0, 0.0]);

    let boxed = PolicyClassSpec::LogLinearLogRatioBox { pair: (0, 1), bound: 4.0 };
    let p = project_into_class(&[2.5, -2.5], &boxed, &env).unwrap();
    let x = log_ratio_coordinate(&boxed.distribution(&env, &p), &env, (0, 1));
    assert_abs_diff_eq!(x, 4.0, epsilon = 1e-12);
}

fn env_strategy() -> impl Strategy<Value = FiniteBandit> {
    (3usize..6, 1usize..4)
        .prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
                prop::collection::vec(0.05f64..1.0, n),
                prop::collection::vec(-2.0f64..2.0, n),
                0.1f64..2.0,
            )
        })
        .prop_map(|(v, w, r, b)| random_env(v, w, r, b))
}

proptest! {
    #[test]
    fn surrogate_inverts_optimal_policy(env in env_strategy()) {
        let star = optimal_policy(&env, &env.r_star.values);
        let s = surrogate_reward(&star, &env).unwrap();
        let d = max_abs_diff(&canonical(&s.values, &env.pi_ref), &canonical(&env.r_star.values, &env.pi_ref));
        prop_assert!(d < 1e-9);
    }

    #[test]
    fn isomorphic_round_trips(env in env_strategy(), phis in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 100)) {
        let f = RewardClassSpec::Linear { scale_by_beta: true };
        prop_assume!(class_relation(&f, &PolicyClassSpec::LogLinear, &env).unwrap() == ClassRelation::Isomorphic);
        let dim = env.features.dim;
        for phi in &phis {
            let r = RewardVector::linear(&env.features, &phi[..dim], env.beta);
            let pi = policy_distribution(&LogLinearPolicy { theta: phi[..dim].to_vec() }, &env).unwrap();
            let s = surrogate_reward(&pi, &env).unwrap();
            prop_assert!(max_abs_diff(&canonical(&s.values, &env.pi_ref), &canonical(&r.values, &env.pi_ref)) < 1e-9);
        }
    }

    #[test]
    fn projections_are_feasible(theta in prop::collection::vec(-50.0f64..50.0, 2), b in -10.0f64..30.0, bound in 0.0f64..6.0) {
        let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.5).unwrap();
        for spec in [
            PolicyClassSpec::LogLinearHalfspace { a: vec![1.0, -1.0], b },
            PolicyClassSpec::LogLinearLogRatioBox { pair: (0, 1), bound },
            PolicyClassSpec::LogLinear,
        ] {
            let p = project_into_class(&theta, &spec, &env).unwrap();
            prop_assert!(spec.is_feasible(&env, &p, 1e-9));
            let again = project_into_class(&p, &spec, &env).unwrap();
            prop_assert!(max_abs_diff(&p, &again) < 1e-9);
        }
    }
}
