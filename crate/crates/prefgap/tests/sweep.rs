use prefgap::sweep::{
    error_summary, gap_summary, run_sweep, separation_checks, summarize, SweepConfig, DPO_MLE, RLHF_L0, RM_L0, RM_L1,
    RM_MLE,
};

fn small() -> SweepConfig {
    SweepConfig {
        d: 8,
        k: 2,
        feature_bound: 6.0,
        n_grid: vec![100, 400],
        seeds: 3,
        base_seed: 5,
        suboptimality: true,
        ..SweepConfig::default()
    }
}

#[test]
fn summary_statistics() {
    let rows = [(10, "A", None, 1.0), (10, "A", None, 3.0), (10, "B", Some(0.5), 2.0), (20, "A", None, 4.0)];
    let s = summarize(rows.iter().copied(), 9);
    assert_eq!(s.len(), 3);
    assert_eq!((s[0].n, s[0].method.as_str(), s[0].mean, s[0].seeds), (10, "A", 2.0, 2));
    assert!((s[0].std - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(s[1].gamma_c, Some(0.5));
    assert_eq!(s[2].std, 0.0);
    assert!(s.iter().all(|r| r.base_seed == 9));
}

#[test]
fn sweep_is_complete_and_thread_independent() {
    let cfg = small();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_sweep(&cfg)).unwrap();
    let two = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap().install(|| run_sweep(&cfg)).unwrap();
    assert_eq!(one.errors, two.errors);
    assert_eq!(one.gaps, two.gaps);
    // L0, one L1, RM-MLE and DPO-MLE per cell.
    assert_eq!(one.errors.len(), 2 * 3 * 4);
    assert_eq!(one.envs.len(), 3);
    assert!(one.errors.iter().all(|r| r.error >= 0.0 && !r.singular));
    for g in &one.gaps {
        assert!(g.gap >= -1e-8);
        assert!((g.gap - g.kl_gap).abs() <= 1e-8 * (1.0 + g.gap.abs()));
    }
    let gaps = gap_summary(&one, cfg.base_seed);
    assert!(gaps.iter().any(|r| r.method == RLHF_L0));
    let errs = error_summary(&one, cfg.base_seed);
    for n in cfg.n_grid.iter() {
        let m = |name: &str| errs.iter().find(|r| r.n == *n && r.method == name).unwrap().mean;
        assert_eq!(m(RM_MLE), m(DPO_MLE));
        assert!(m(RM_L0).is_finite() && m(RM_L1).is_finite());
    }
}

#[test]
fn without_dense_reward_the_targets_coincide() {
    let cfg = SweepConfig { dense_norm: 0.0, suboptimality: false, ..small() };
    let out = run_sweep(&cfg).unwrap();
    let pick = |m: &str| out.errors.iter().filter(|r| r.method == m).map(|r| r.error).collect::<Vec<_>>();
    let (a, b) = (pick(RM_MLE), pick(DPO_MLE));
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!(mean.abs() <= 2.0 * sd + 1e-12);
}

#[test]
fn separation_checks_flag_bad_orderings() {
    let cfg = SweepConfig { n_grid: vec![100, 200], gamma_c: vec![1.0], ..SweepConfig::default() };
    let rows = |l1_at_200: f64| {
        vec![
            (100, RM_L0, None, 0.1),
            (100, RM_L1, Some(1.0), 0.5),
            (100, DPO_MLE, None, 1.0),
            (200, RM_L0, None, 0.05),
            (200, RM_L1, Some(1.0), l1_at_200),
            (200, DPO_MLE, None, 0.5),
        ]
    };
    let good = separation_checks(&summarize(rows(0.2), 0), &cfg);
    assert!(good.iter().all(|c| c.passed), "{good:?}");
    let bad = separation_checks(&summarize(rows(0.7), 0), &cfg);
    assert!(!bad[0].passed);
    assert!(bad[1].passed);
}
