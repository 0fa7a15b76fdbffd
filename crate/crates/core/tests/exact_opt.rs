use approx::assert_abs_diff_eq;
use prefgap_core::bandit::{
    optimal_policy, regularized_value, Distribution, FeatureMap, FiniteBandit, PairDistribution, RewardVector,
};
use prefgap_core::classes::{surrogate_reward, PolicyClassSpec, RewardClassSpec};
use prefgap_core::constructions::{
    env_three_arm_midpoint, grid_oracle_1d, identity_env, identity_theta, perturb_reward, GridObjective,
};
use prefgap_core::exact::{
    dpo_loss_and_grad, fit_dpo, fit_reward_mle, gradient_identity_check, new_objective_loss, online_dpo,
    online_dpo_gradient, online_ipo_loss, pilaf_mixture, pilaf_sigma_prime_form, policy_stage, population_bt_loss,
    value_and_grad, PairSampler,
};
use prefgap_core::optim::OptimizerConfig;
use proptest::prelude::*;

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn ref_pairs(env: &FiniteBandit) -> PairDistribution {
    PairDistribution::product(&env.pi_ref, &env.pi_ref)
}

fn env_from(vectors: Vec<Vec<f64>>, r: Vec<f64>, w: Vec<f64>, beta: f64) -> FiniteBandit {
    FiniteBandit::new(FeatureMap::new(vectors, 10.0).unwrap(), RewardVector::tabular(r), Distribution::from_weights(&w).unwrap(), beta)
        .unwrap()
}

fn four_arm(seed: u64) -> FiniteBandit {
    // Small deterministic generator so the test does not depend on library sampling.
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let vectors = (0..4).map(|_| vec![2.0 * next() - 1.0, 2.0 * next() - 1.0]).collect();
    let r = (0..4).map(|_| 2.0 * next()).collect();
    let w = (0..4).map(|_| 0.2 + next()).collect();
    env_from(vectors, r, w, 0.5 + next())
}

/// Central differences with `h = 1e-5`, error relative to `max(|g|_inf, 1e-8)`.
fn fd_error(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> f64 {
    let h = 1e-5;
    let scale = g.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    let mut y = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let a = f(&y);
        y[i] = x[i] - h;
        let b = f(&y);
        y[i] = x[i];
        worst = worst.max(((a - b) / (2.0 * h) - g[i]).abs() / scale);
    }
    worst
}

fn bt_entropy(env: &FiniteBandit, mu: &PairDistribution) -> f64 {
    let r = &env.r_star.values;
    let mut h = 0.0;
    for i in 0..env.n() {
        for j in 0..env.n() {
            let p = sigmoid(r[i] - r[j]);
            let w = mu.get(i, j);
            if p > 0.0 && p < 1.0 {
                h -= w * (p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            }
        }
    }
    h
}

#[test]
fn bt_loss_examples() {
    let env = four_arm(1);
    let mu = ref_pairs(&env);
    let l = population_bt_loss(&env.r_star.values, &env, &mu).unwrap();
    assert_abs_diff_eq!(l, bt_entropy(&env, &mu), epsilon = 1e-12);

    let flat = env_from(vec![vec![0.0]; 3], vec![0.5; 3], vec![1.0; 3], 1.0);
    let l = population_bt_loss(&[0.0; 3], &flat, &ref_pairs(&flat)).unwrap();
    assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 1e-15);
}

#[test]
fn midpoint_loss_prefers_zero_gap() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1).unwrap();
    let mu = ref_pairs(&env);
    let at = |phi: [f64; 2]| population_bt_loss(&RewardVector::linear(&env.features, &phi, 1.0).values, &env, &mu).unwrap();
    let base = at([0.8, 0.8]);
    for dx in [-1.0, -0.1, 0.05, 0.7] {
        assert!(base < at([0.8 + dx, 0.8 - dx]));
    }
}

#[test]
fn realizable_linear_reward_is_recovered() {
    let env = four_arm(2);
    let phi = [0.7, -1.2];
    let r = RewardVector::linear(&env.features, &phi, 1.0);
    let env = FiniteBandit::new(env.features.clone(), r.clone(), env.pi_ref.clone(), env.beta).unwrap();
    let fit = fit_reward_mle(&RewardClassSpec::Linear { scale_by_beta: false }, &env, &ref_pairs(&env), &OptimizerConfig::default())
        .unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_abs_diff_eq!(fit.values[i] - fit.values[j], r.values[i] - r.values[j], epsilon = 1e-6);
        }
    }
}

#[test]
fn midpoint_reward_is_constant() {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1).unwrap();
    let fit = fit_reward_mle(&RewardClassSpec::Linear { scale_by_beta: false }, &env, &ref_pairs(&env), &OptimizerConfig::default())
        .unwrap();
    let c = RewardVector::tabular(fit.values).centered(&env.pi_ref);
    assert!(c.iter().all(|v| v.abs() < 1e-6), "{c:?}");
}

#[test]
fn tabular_policy_stage_is_closed_form() {
    let env = four_arm(3);
    let r = [0.3, -0.4, 1.0, 0.2];
    let fit = policy_stage(&r, &PolicyClassSpec::FullTabular, &env, &OptimizerConfig::default()).unwrap();
    assert!(fit.distribution.total_variation(&optimal_policy(&env, &r)) < 1e-12);
}

#[test]
fn box_policy_stage_matches_grid() {
    let env = env_three_arm_midpoint([12.0, 12.0, 0.0], 1.0).unwrap();
    let spec = PolicyClassSpec::LogLinearLogRatioBox { pair: (0, 1), bound: 4.0 };
    let fit = policy_stage(&env.r_star.values, &spec, &env, &OptimizerConfig::default()).unwrap();
    let grid = grid_oracle_1d(&env, GridObjective::RlValue, (-4.0, 4.0), 80001).unwrap();
    assert!(fit.value >= grid.values[grid.best_index] - 1e-9);
    assert!((fit.value - grid.values[grid.best_index]).abs() < 1e-6);
}

#[test]
fn dpo_examples() {
    let env = four_arm(4);
    let fit = fit_dpo(&PolicyClassSpec::FullTabular, &env, &ref_pairs(&env), &OptimizerConfig::default()).unwrap();
    assert!(fit.distribution.total_variation(&optimal_policy(&env, &env.r_star.values)) < 1e-6);

    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.01).unwrap();
    let fit = fit_dpo(&PolicyClassSpec::LogLinear, &env, &ref_pairs(&env), &OptimizerConfig::default()).unwrap();
    assert!(fit.distribution.total_variation(&Distribution::uniform(3)) < 1e-6);

    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1).unwrap();
    let half = PolicyClassSpec::LogLinearHalfspace { a: vec![1.0, -1.0], b: 20.0 };
    let fit = fit_dpo(&half, &env, &ref_pairs(&env), &OptimizerConfig::default()).unwrap();
    assert_abs_diff_eq!(fit.theta[0] - fit.theta[1], 20.0, epsilon = 1e-6);
}

#[test]
fn pilaf_at_reference_is_product() {
    let env = four_arm(5);
    let m = pilaf_mixture(&env.pi_ref, &env).unwrap();
    assert_abs_diff_eq!(m.alpha2, 1.0, epsilon = 1e-12);
    let prod = PairDistribution::product(&env.pi_ref, &env.pi_ref);
    for (a, b) in m.mixture.weights.iter().zip(&prod.weights) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }
}

#[test]
fn realizable_online_dpo_reaches_optimum() {
    let env = four_arm(6);
    let fit = online_dpo(&PolicyClassSpec::FullTabular, &env, PairSampler::Pilaf, &OptimizerConfig::default()).unwrap();
    assert!(fit.fit.distribution.total_variation(&optimal_policy(&env, &env.r_star.values)) < 1e-4);
}

#[test]
fn box_env_online_matches_offline() {
    let env = env_three_arm_midpoint([12.0, 12.0, 0.0], 1.0).unwrap();
    let spec = PolicyClassSpec::LogLinearLogRatioBox { pair: (0, 1), bound: 4.0 };
    let cfg = OptimizerConfig::default();
    let on = online_dpo(&spec, &env, PairSampler::Pilaf, &cfg).unwrap();
    let off = fit_dpo(&spec, &env, &ref_pairs(&env), &cfg).unwrap();
    let x = |t: &[f64]| env.beta * (t[0] - t[1]);
    assert!((x(&on.fit.theta) - x(&off.theta)).abs() < 1e-3);

    let env = env_three_arm_midpoint([24.0, 12.0, 0.0], 1.0).unwrap();
    let on = online_dpo(&spec, &env, PairSampler::OnPolicy, &cfg).unwrap();
    let off = fit_dpo(&spec, &env, &ref_pairs(&env), &cfg).unwrap();
    assert!(on.fit.value > off.value);
}

#[test]
fn identity_holds_when_realizable() {
    let rep = gradient_identity_check(&identity_theta(3), &identity_env(3).unwrap()).unwrap();
    assert!(rep.max_abs_diff < 1e-8);
    let perturbed = perturb_reward(&identity_env(3).unwrap(), 0.01, 3).unwrap();
    let rep = gradient_identity_check(&identity_theta(3), &perturbed).unwrap();
    assert!(rep.max_abs_diff <= rep.residual_bound);
}

#[test]
fn online_pilaf_is_stationary_when_realizable() {
    let env = identity_env(9).unwrap();
    let (_, g) = online_dpo_gradient(&PolicyClassSpec::LogLinear, &env, PairSampler::Pilaf, &identity_theta(9)).unwrap();
    assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
}

#[test]
fn new_objective_vanishes_at_truth() {
    let env = four_arm(7);
    let phi = [0.4, -0.9];
    let r = RewardVector::linear(&env.features, &phi, 1.0);
    let env = FiniteBandit::new(env.features.clone(), r, env.pi_ref.clone(), env.beta).unwrap();
    let (l, g) = new_objective_loss(&phi, false, &env).unwrap();
    assert!(l.abs() < 1e-15);
    assert!(g.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn new_objective_descent_improves_value() {
    let env = four_arm(8);
    let phi = [0.1, 0.2];
    let induced = |p: &[f64]| {
        let r = RewardVector::linear(&env.features, p, 1.0);
        regularized_value(&env, &optimal_policy(&env, &r.values)).unwrap()
    };
    let (_, g) = new_objective_loss(&phi, false, &env).unwrap();
    let step: Vec<f64> = phi.iter().zip(&g).map(|(p, gi)| p - 1e-3 * gi).collect();
    assert!(induced(&step) > induced(&phi));
}

#[test]
fn online_ipo_zero_at_target() {
    // Constant reward, so every pairwise target is zero.
    let flat = env_from(vec![vec![0.0]; 3], vec![1.0; 3], vec![1.0, 2.0, 3.0], 0.7);
    let (l, _) = online_ipo_loss(&PolicyClassSpec::FullTabular, &flat, PairSampler::OnPolicy, &[0.0; 3]).unwrap();
    assert!(l.abs() < 1e-15);
    let (l2, _) = online_ipo_loss(&PolicyClassSpec::FullTabular, &flat, PairSampler::OnPolicy, &[0.3, 0.0, 0.0]).unwrap();
    assert!(l2 > l);
}

fn four_arm_strategy() -> impl Strategy<Value = (FiniteBandit, Vec<f64>)> {
    (0u64..1000, prop::collection::vec(-1.5f64..1.5, 2)).prop_map(|(s, t)| (four_arm(s), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pilaf_forms_agree(env_theta in four_arm_strategy()) {
        let (env, theta) = env_theta;
        let pi = PolicyClassSpec::LogLinear.distribution(&env, &theta);
        let m = pilaf_mixture(&pi, &env).unwrap();
        let (direct, z) = pilaf_sigma_prime_form(&pi, &env).unwrap();
        // The mixture draws ordered pairs; the reweighted form is its symmetrization.
        let n = env.n();
        for i in 0..n {
            for j in 0..n {
                let sym = 0.5 * (m.mixture.get(i, j) + m.mixture.get(j, i));
                prop_assert!((sym - direct.get(i, j)).abs() < 1e-10);
            }
        }
        prop_assert!((z - 2.0 - 2.0 * m.alpha2).abs() < 1e-9 * z);
        prop_assert!(m.alpha2 >= 1.0 - 1e-12);
        prop_assert!(z >= 4.0 - 1e-12);
        prop_assert!((m.mixture.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_differences(env_theta in four_arm_strategy()) {
        let (env, theta) = env_theta;
        let spec = PolicyClassSpec::LogLinear;
        let mu = ref_pairs(&env);
        let r = env.r_star.values.clone();
        let (_, g) = value_and_grad(&spec, &env, &r, &theta);
        prop_assert!(fd_error(|t| value_and_grad(&spec, &env, &r, t).0, &theta, &g) < 1e-4);
        let (_, g) = dpo_loss_and_grad(&spec, &env, &mu, &theta);
        prop_assert!(fd_error(|t| dpo_loss_and_grad(&spec, &env, &mu, t).0, &theta, &g) < 1e-4);
        let frozen = prefgap_core::exact::pair_distribution(PairSampler::Pilaf, &spec.distribution(&env, &theta), &env).unwrap();
        let (_, g) = online_dpo_gradient(&spec, &env, PairSampler::Pilaf, &theta).unwrap();
        prop_assert!(fd_error(|t| dpo_loss_and_grad(&spec, &env, &frozen, t).0, &theta, &g) < 1e-4);
        let rep = gradient_identity_check(&theta, &env).unwrap();
        prop_assert!(fd_error(|t| dpo_loss_and_grad(&spec, &env, &pilaf_sigma_prime_form(&spec.distribution(&env, &theta), &env).unwrap().0, t).0, &theta, &rep.lhs_grad) < 1e-4);
    }

    #[test]
    fn new_objective_and_ipo_gradients(env_theta in four_arm_strategy()) {
        let (env, theta) = env_theta;
        // Frozen sampler: differentiate with the policy held at `theta`.
        let (_, g) = new_objective_loss(&theta, false, &env).unwrap();
        let r0 = RewardVector::linear(&env.features, &theta, 1.0);
        let p = optimal_policy(&env, &r0.values);
        let frozen = |phi: &[f64]| {
            let r = RewardVector::linear(&env.features, phi, 1.0).values;
            let rs = &env.r_star.values;
            let mut l = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let d = (rs[i] - rs[j]) - (r[i] - r[j]);
                    l += 0.25 * p.probs()[i] * p.probs()[j] * d * d;
                }
            }
            l
        };
        prop_assert!(fd_error(frozen, &theta, &g) < 1e-4);

        let spec = PolicyClassSpec::LogLinear;
        let (_, g) = online_ipo_loss(&spec, &env, PairSampler::FixedRef, &theta).unwrap();
        prop_assert!(fd_error(|t| online_ipo_loss(&spec, &env, PairSampler::FixedRef, t).unwrap().0, &theta, &g) < 1e-4);
    }

    #[test]
    fn tabular_pipelines_reach_the_optimum(seed in 0u64..500) {
        let env = four_arm(seed);
        let cfg = OptimizerConfig::default();
        let mu = ref_pairs(&env);
        let r = fit_reward_mle(&RewardClassSpec::Tabular, &env, &mu, &cfg).unwrap();
        let rl = policy_stage(&r.values, &PolicyClassSpec::FullTabular, &env, &cfg).unwrap();
        let v_star = regularized_value(&env, &optimal_policy(&env, &env.r_star.values)).unwrap();
        prop_assert!((rl.value - v_star).abs() < 1e-6);
    }

    #[test]
    fn isomorphic_classes_learn_the_same_reward(seed in 0u64..500) {
        let env = four_arm(seed);
        let cfg = OptimizerConfig::default();
        let mu = ref_pairs(&env);
        let r = fit_reward_mle(&RewardClassSpec::Linear { scale_by_beta: true }, &env, &mu, &cfg).unwrap();
        let dpo = fit_dpo(&PolicyClassSpec::LogLinear, &env, &mu, &cfg).unwrap();
        let s = surrogate_reward(&dpo.distribution, &env).unwrap();
        let a = RewardVector::tabular(r.values).centered(&env.pi_ref);
        let b = RewardVector::tabular(s.values).centered(&env.pi_ref);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6));
    }
}
