use approx::assert_abs_diff_eq;
use prefgap_core::token_mdp::{
    compute_q_star, compute_v_star, evaluate_policy, global_optimal_policy, make_dtsp_env, random_token_mdp,
    sequence_kl, tokenwise_optimal_policy, DtspConfig, TerminalRule, TokenMdp,
};
use proptest::prelude::*;

fn uniform(v: usize) -> impl FnMut(&[usize]) -> Vec<f64> {
    move |_| vec![1.0 / v as f64; v]
}

fn dtsp(d: usize, k: usize, dense_norm: f64, seed: u64) -> DtspConfig {
    DtspConfig {
        d,
        k,
        vocab: None,
        feature_bound: 3.0,
        ball: 1.5,
        beta: 0.8,
        sparse_scale: 0.3,
        dense_norm,
        seed,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn single_token_q_is_the_reward() {
    let r = [0.4, -1.2, 2.0];
    let mdp = TokenMdp::from_token_rewards(3, 1, TerminalRule::FixedLength, 0.5, uniform(3), |s| r[s[0]]).unwrap();
    let q = compute_q_star(&mdp);
    for a in 0..3 {
        assert_eq!(q.0[1 + a], r[a]);
    }
}

#[test]
fn constant_second_token_reward_collapses() {
    let r1 = [0.3, -0.7];
    let c = 1.25;
    let refs = |p: &[usize]| if p.is_empty() { vec![0.5, 0.5] } else { vec![0.2, 0.8] };
    let mdp = TokenMdp::from_token_rewards(2, 2, TerminalRule::FixedLength, 0.9, refs, |s| match s {
        [a] => r1[*a],
        _ => c,
    })
    .unwrap();
    let q = compute_q_star(&mdp);
    for a in 0..2 {
        assert_abs_diff_eq!(q.0[1 + a], r1[a] + c, epsilon = 1e-12);
    }
}

#[test]
fn large_beta_q_is_reference_mean() {
    let mdp = random_token_mdp(3, 3, TerminalRule::FixedLength, 1e6, 11).unwrap();
    let q = compute_q_star(&mdp);
    let mean: f64 =
        mdp.terminals().map(|t| mdp.path_probability(&mdp.ref_prob, t) * mdp.terminal_reward[t]).sum();
    assert!((q.0[0] - mean).abs() < 1e-3);
}

#[test]
fn v_star_vanishes_at_terminals_and_splits_q() {
    let mdp = random_token_mdp(3, 3, TerminalRule::TerminalToken { token: 1 }, 0.6, 4).unwrap();
    let q = compute_q_star(&mdp);
    let v = compute_v_star(&mdp).unwrap();
    for i in 1..mdp.len() {
        if mdp.nodes[i].terminal {
            assert_eq!(v.0[i], 0.0);
        }
        assert!((q.0[i] - mdp.prefix_reward(i).unwrap() - v.0[i]).abs() < 1e-10);
    }
}

#[test]
fn terminal_only_reward_has_no_value_function() {
    let mdp =
        TokenMdp::from_terminal_rewards(2, 2, TerminalRule::FixedLength, 1.0, uniform(2), |s| (s[0] * s[1]) as f64)
            .unwrap();
    assert!(compute_v_star(&mdp).is_err());
}

#[test]
fn flat_q_keeps_the_reference() {
    let refs = |_: &[usize]| vec![0.1, 0.3, 0.6];
    let mdp = TokenMdp::from_token_rewards(3, 1, TerminalRule::FixedLength, 0.3, refs, |_| 2.0).unwrap();
    let cond = tokenwise_optimal_policy(&mdp, &compute_q_star(&mdp));
    for a in 0..3 {
        assert_abs_diff_eq!(cond[1 + a], mdp.ref_prob[1 + a], epsilon = 1e-15);
    }
}

#[test]
fn rejects_bad_reference() {
    let bad = TokenMdp::from_token_rewards(2, 1, TerminalRule::FixedLength, 1.0, |_| vec![1.0, 0.0], |_| 0.0);
    assert!(bad.is_err());
    assert!(random_token_mdp(2, 0, TerminalRule::FixedLength, 1.0, 0).is_err());
    assert!(random_token_mdp(2, 2, TerminalRule::TerminalToken { token: 5 }, 1.0, 0).is_err());
}

#[test]
fn dtsp_value_function_is_the_dense_reward() {
    let env = make_dtsp_env(&dtsp(6, 2, 0.4, 3)).unwrap();
    let mdp = env.token_mdp(&env.reward_target()).unwrap();
    let v = compute_v_star(&mdp).unwrap();
    let beta = env.beta();
    let shift: Vec<f64> = (0..env.vocab).map(|a| v.0[1 + a] - beta * dot(&env.r_dense, &env.psi[a])).collect();
    for s in &shift {
        assert_abs_diff_eq!(*s, shift[0], epsilon = 1e-10);
    }
}

#[test]
fn dtsp_first_token_marginal_follows_the_policy_target() {
    let env = make_dtsp_env(&dtsp(6, 2, 0.4, 8)).unwrap();
    let mdp = env.token_mdp(&env.reward_target()).unwrap();
    let cond = tokenwise_optimal_policy(&mdp, &compute_q_star(&mdp));
    let target = env.policy_target();
    let logit = |a: usize| cond[1 + a].ln() - dot(&target, &env.psi[a]);
    for a in 1..env.vocab {
        assert_abs_diff_eq!(logit(a), logit(0), epsilon = 1e-10);
    }

    // The log-linear policy at the target is the optimum itself.
    let lin = env.loglinear_policy(&mdp, &target);
    for i in 1..mdp.len() {
        assert_abs_diff_eq!(lin[i], cond[i], epsilon = 1e-10);
    }
}

#[test]
fn dtsp_env_invariants() {
    for seed in 0..10 {
        let cfg = dtsp(8, 3, 0.3, seed);
        let env = make_dtsp_env(&cfg).unwrap();
        let norm = |v: &[f64]| dot(v, v).sqrt();
        assert_eq!(env.r_sparse.iter().filter(|x| **x != 0.0).count(), 3);
        assert_eq!(env.vocab, 16);
        assert!(env.psi.iter().all(|p| norm(p) <= cfg.feature_bound + 1e-12));
        for v in [env.r_sparse.clone(), env.r_dense.clone(), env.theta_total()] {
            assert!(norm(&v) <= cfg.ball + 1e-12);
        }
        for a in 0..env.vocab {
            for b in 0..env.vocab {
                let want = env.psi[b][0] + dot(&env.r_dense, &env.psi[a]);
                assert_abs_diff_eq!(env.pair_feature(a, b)[0], want, epsilon = 1e-12);
            }
        }
        assert!(env.gram.min_eigenvalue > 0.0);
        assert_eq!(env, make_dtsp_env(&cfg).unwrap());
    }
    assert_ne!(make_dtsp_env(&dtsp(8, 3, 0.3, 0)).unwrap(), make_dtsp_env(&dtsp(8, 3, 0.3, 1)).unwrap());
}

#[test]
fn dtsp_degenerate_settings() {
    let env = make_dtsp_env(&dtsp(5, 5, 0.3, 2)).unwrap();
    assert!(env.r_sparse.iter().all(|x| *x != 0.0));
    let diff: Vec<f64> = env.policy_target().iter().zip(env.reward_target()).map(|(p, r)| p - r).collect();
    for (a, b) in diff.iter().zip(&env.r_dense) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    }

    let env = make_dtsp_env(&dtsp(6, 2, 0.0, 2)).unwrap();
    assert_eq!(env.policy_target(), env.reward_target());
    let v = compute_v_star(&env.token_mdp(&env.reward_target()).unwrap()).unwrap();
    for a in 1..env.vocab {
        assert_abs_diff_eq!(v.0[1 + a], v.0[1], epsilon = 1e-12);
    }

    assert!(make_dtsp_env(&dtsp(4, 5, 0.3, 0)).is_err());
}

fn mdp_strategy() -> impl Strategy<Value = TokenMdp> {
    (2usize..5, 1usize..4, any::<bool>(), 0.1f64..3.0, 0u64..1000).prop_map(|(v, h, stop, beta, seed)| {
        let rule = if stop { TerminalRule::TerminalToken { token: 0 } } else { TerminalRule::FixedLength };
        random_token_mdp(v, h, rule, beta, seed).unwrap()
    })
}

proptest! {
    #[test]
    fn tokenwise_product_matches_global_optimum(mdp in mdp_strategy()) {
        let cond = tokenwise_optimal_policy(&mdp, &compute_q_star(&mdp));
        for (t, p) in global_optimal_policy(&mdp) {
            prop_assert!((mdp.path_probability(&cond, t) - p).abs() < 1e-10);
        }
    }

    #[test]
    fn reward_shift_moves_q_only(mdp in mdp_strategy(), c in -3.0f64..3.0) {
        let mut shifted = mdp.clone();
        for t in mdp.terminals() {
            shifted.terminal_reward[t] += c;
        }
        let q = compute_q_star(&mdp);
        let qs = compute_q_star(&shifted);
        prop_assert!((qs.0[0] - q.0[0] - c).abs() < 1e-10);
        let a = tokenwise_optimal_policy(&mdp, &q);
        let b = tokenwise_optimal_policy(&shifted, &qs);
        for i in 1..mdp.len() {
            prop_assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_value_and_gap(mdp in mdp_strategy(), seed in 0u64..1000) {
        let q = compute_q_star(&mdp);
        let star = tokenwise_optimal_policy(&mdp, &q);
        prop_assert!((evaluate_policy(&mdp, &star) - q.0[0]).abs() < 1e-10);
        // Any other policy loses exactly beta KL to the optimum.
        let other = tokenwise_optimal_policy(&random_token_mdp(mdp.vocab, mdp.horizon, mdp.rule, mdp.beta, seed).unwrap(), &q);
        let gap = q.0[0] - evaluate_policy(&mdp, &other);
        prop_assert!(gap >= -1e-12);
        prop_assert!((gap - mdp.beta * sequence_kl(&mdp, &other, &star)).abs() < 1e-9);
    }
}
