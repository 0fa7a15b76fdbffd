use approx::assert_abs_diff_eq;
use prefgap_core::bandit::{Distribution, FeatureMap, FiniteBandit, RewardVector};
use prefgap_core::classes::PolicyClassSpec;
use prefgap_core::constructions::{
    env_three_arm_midpoint, grid_oracle_1d, run_condition, scenario_b5, GridObjective, CONDITION_LABELS,
};
use prefgap_core::exact::{policy_stage, PairSampler};
use prefgap_core::optim::OptimizerConfig;

#[test]
fn every_condition_reproduces() {
    for label in CONDITION_LABELS {
        let results = run_condition(label, 3).unwrap();
        assert!(!results.is_empty());
        for r in &results {
            let bad: Vec<_> = r.checks.iter().filter(|c| !c.passed).collect();
            assert!(bad.is_empty(), "{label} {}: {bad:?}", r.name);
            assert_eq!(r.condition_label, label);
            let cap = r.v_star_class.unwrap_or(r.v_star) + 1e-8;
            assert!(r.v_rlhf <= cap && r.v_dpo <= cap, "{label} {}", r.name);
            if let Some(v) = r.v_online_dpo {
                assert!(v <= cap);
            }
            assert!(r.v_star_class.is_none_or(|c| c <= r.v_star + 1e-8));
        }
        assert_eq!(results, run_condition(label, 3).unwrap());
    }
    assert!(run_condition("9.9", 0).is_err());
}

#[test]
fn construction_two_numbers() {
    let results = scenario_b5().unwrap();
    let c2 = results.iter().find(|r| r.name.ends_with("construction-2")).unwrap();
    assert_abs_diff_eq!(c2.v_rlhf, 0.729, epsilon = 1e-3);
    assert_abs_diff_eq!(c2.v_dpo, 2.0 / 3.0, epsilon = 1e-9);
}

#[test]
fn midpoint_env_shape() {
    let env = env_three_arm_midpoint([12.0, 12.0, 0.0], 1.0).unwrap();
    assert_eq!(env.features.vectors, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
    assert_eq!(env.r_star.values, vec![12.0, 12.0, 0.0]);
    assert!(env.pi_ref.total_variation(&Distribution::uniform(3)) < 1e-15);
    assert!(env_three_arm_midpoint([1.0, 1.0, 0.0], 0.0).is_err());
}

#[test]
fn symmetric_grids() {
    let env = env_three_arm_midpoint([12.0, 12.0, 0.0], 1.0).unwrap();
    for obj in [GridObjective::RlValue, GridObjective::DpoLoss] {
        let g = grid_oracle_1d(&env, obj, (-4.0, 4.0), 4001).unwrap();
        let n = g.values.len();
        for i in 0..n {
            assert!((g.values[i] - g.values[n - 1 - i]).abs() < 1e-9);
        }
    }
    let g = grid_oracle_1d(&env, GridObjective::DpoLoss, (-4.0, 4.0), 4001).unwrap();
    assert_abs_diff_eq!(g.best_x, 0.0, epsilon = 1e-12);
    let g = grid_oracle_1d(&env, GridObjective::OnlineResidual(PairSampler::Pilaf), (-4.0, 4.0), 4001).unwrap();
    assert!(g.values[g.best_index].abs() < 1e-9);
}

#[test]
fn grid_agrees_with_projected_ascent() {
    for r in [[12.0, 12.0, 0.0], [24.0, 12.0, 0.0], [3.0, 0.5, 1.0]] {
        let env = env_three_arm_midpoint(r, 1.0).unwrap();
        let spec = PolicyClassSpec::LogLinearLogRatioBox { pair: (0, 1), bound: 4.0 };
        let fit = policy_stage(&env.r_star.values, &spec, &env, &OptimizerConfig::default()).unwrap();
        let g = grid_oracle_1d(&env, GridObjective::RlValue, (-4.0, 4.0), 4001).unwrap();
        let x = env.beta * (fit.theta[0] - fit.theta[1]);
        let best = g.values[g.best_index];
        assert!((fit.value - best).abs() < 1e-6, "{r:?}");
        // Symmetric rewards have two maximizers; accept either.
        let near = g.xs.iter().zip(&g.values).any(|(gx, v)| (gx - x).abs() <= g.spacing && best - v < 1e-9);
        assert!(near, "{r:?}: {x} vs {}", g.best_x);
    }
}

#[test]
fn grid_rejects_other_envs() {
    let env = FiniteBandit::new(FeatureMap::one_hot(4), RewardVector::tabular(vec![0.0; 4]), Distribution::uniform(4), 1.0)
        .unwrap();
    assert!(grid_oracle_1d(&env, GridObjective::RlValue, (-1.0, 1.0), 11).is_err());
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 1.0).unwrap();
    assert!(grid_oracle_1d(&env, GridObjective::RlValue, (1.0, 1.0), 11).is_err());
    assert!(grid_oracle_1d(&env, GridObjective::RlValue, (0.0, 1.0), 1).is_err());
}
