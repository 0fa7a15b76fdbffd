//! The acceptance suite behind `verify-all`: numbered criteria, each checked
//! against an oracle that does not share code with the solver it checks.

use std::path::Path;
use std::time::Instant;

use prefgap_core::bandit::PairDistribution;
use prefgap_core::classes::PolicyClassSpec;
use prefgap_core::constructions::{identity_env, identity_theta, ScenarioResult};
use prefgap_core::estimators::{
    empirical_bt_loss, fit, sample_gaussian_design, semi_norm_sq, EstimatorSpec, FitConfig, PreferenceDesign,
};
use prefgap_core::exact::{bt_loss_and_grad, dpo_loss_and_grad, pair_distribution, value_and_grad, PairSampler};
use prefgap_core::token_mdp::{
    compute_q_star, compute_v_star, global_optimal_policy, random_token_mdp, tokenwise_optimal_policy, TerminalRule,
};
use serde::{Deserialize, Serialize};

use crate::error::AppError;
use crate::output::{write_csv, write_json, Manifest};
use crate::reproduce::{reproduce, run_named, NAMES};
use crate::sweep::{
    error_summary, gap_summary, run_sweep, separation_checks, suboptimality_checks, ClaimCheck, SweepConfig,
};

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl Criterion {
    pub fn within_budget(&self) -> bool {
        self.seconds < self.budget_seconds
    }

    pub fn line(&self) -> String {
        let status = if self.passed && self.within_budget() { "PASS" } else { "FAIL" };
        format!(
            "criterion {:>2} {status}: {} [{:.2}s / {}s] {}",
            self.id, self.name, self.seconds, self.budget_seconds, self.detail
        )
    }
}

fn timed<F>(id: u32, name: &str, budget: f64, f: F) -> Result<Criterion, AppError>
where
    F: FnOnce() -> Result<(bool, String), AppError>,
{
    let t = Instant::now();
    let (passed, detail) = f()?;
    Ok(Criterion { id, name: name.into(), passed, detail, seconds: t.elapsed().as_secs_f64(), budget_seconds: budget })
}

fn failures(results: &[ScenarioResult]) -> Vec<String> {
    results
        .iter()
        .flat_map(|r| r.checks.iter().filter(|c| !c.passed).map(move |c| format!("{}: {}", r.name, c.name)))
        .collect()
}

fn scenarios(names: &[&str], seed: u64) -> Result<Vec<ScenarioResult>, AppError> {
    let mut all = Vec::new();
    for n in names {
        all.extend(run_named(n, seed)?);
    }
    Ok(all)
}

fn artifact(results: &[ScenarioResult], key: &str) -> Option<f64> {
    results.iter().find_map(|r| r.artifacts.get(key).copied())
}

pub fn criterion_1() -> Result<Criterion, AppError> {
    timed(1, "construction-2 values", 1.0, || {
        let rs = scenarios(&["b5", "b6"], 0)?;
        let hit = rs.iter().find(|r| (r.v_rlhf - 0.729).abs() < 1e-3 && (r.v_dpo - 2.0 / 3.0).abs() < 1e-9);
        let bad = failures(&rs);
        let detail = match hit {
            Some(r) => format!("{}: V_RLHF {} V_DPO {}", r.name, r.v_rlhf, r.v_dpo),
            None => "no scenario with V_RLHF 0.729 and V_DPO 2/3".into(),
        };
        Ok((hit.is_some() && bad.is_empty(), join(detail, &bad)))
    })
}

pub fn criterion_2() -> Result<Criterion, AppError> {
    timed(2, "reward-stronger construction", 1.0, || {
        let rs = scenarios(&["b3"], 0)?;
        let r = &rs[0];
        let detail = format!(
            "TV {:e}, pi(a3) {:e}, margin {}",
            artifact(&rs, "dpo_tv_to_uniform").unwrap_or(f64::NAN),
            artifact(&rs, "rlhf_pi_a3").unwrap_or(f64::NAN),
            r.v_rlhf - r.v_dpo
        );
        let bad = failures(&rs);
        Ok((bad.is_empty(), join(detail, &bad)))
    })
}

/// Largest `|fd - g|` over the coordinates, relative to `max(1e-8, |g|_inf)`.
pub fn fd_relative_error<F>(f: F, x: &[f64], g: &[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let h = 1e-5;
    let scale = g.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y);
        y[i] = x[i] - h;
        let down = f(&y);
        y[i] = x[i];
        worst = worst.max(((up - down) / (2.0 * h) - g[i]).abs() / scale);
    }
    worst
}

/// Finite-difference errors of the analytic gradients on the five-arm identity
/// env, away from its stationary point.
pub fn gradient_fd_errors(seed: u64) -> Result<Vec<(&'static str, f64)>, AppError> {
    let env = identity_env(seed)?;
    let theta: Vec<f64> = identity_theta(seed).iter().zip([0.3, -0.2, 0.1]).map(|(t, s)| t + s).collect();
    let spec = PolicyClassSpec::LogLinear;
    let refs = PairDistribution::product(&env.pi_ref, &env.pi_ref);
    let frozen = pair_distribution(PairSampler::Pilaf, &spec.distribution(&env, &theta), &env)?;
    let r = &env.r_star.values;
    let mut out = Vec::new();
    let (_, g) = value_and_grad(&spec, &env, r, &theta);
    out.push(("value", fd_relative_error(|t| value_and_grad(&spec, &env, r, t).0, &theta, &g)));
    let (_, g) = dpo_loss_and_grad(&spec, &env, &refs, &theta);
    out.push(("dpo loss", fd_relative_error(|t| dpo_loss_and_grad(&spec, &env, &refs, t).0, &theta, &g)));
    let (_, g) = dpo_loss_and_grad(&spec, &env, &frozen, &theta);
    out.push(("online loss, frozen sampler", fd_relative_error(|t| dpo_loss_and_grad(&spec, &env, &frozen, t).0, &theta, &g)));
    let w: Vec<f64> = r.iter().map(|v| 0.5 * v + 0.1).collect();
    let (_, g) = bt_loss_and_grad(&env, &w, &refs);
    out.push(("bt loss", fd_relative_error(|x| bt_loss_and_grad(&env, x, &refs).0, &w, &g)));
    Ok(out)
}

pub fn criterion_3(seed: u64) -> Result<Criterion, AppError> {
    timed(3, "online gradient identity", 5.0, || {
        let rs = scenarios(&["ss-thm32"], seed)?;
        let diff = artifact(&rs, "identity_max_abs_diff").unwrap_or(f64::INFINITY);
        let fd = gradient_fd_errors(seed)?;
        let fd_ok = fd.iter().all(|(_, e)| *e < 1e-4);
        let bad = failures(&rs);
        let detail = format!(
            "identity diff {diff:e}; fd {}",
            fd.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ")
        );
        Ok((diff < 1e-8 && fd_ok && bad.is_empty(), join(detail, &bad)))
    })
}

pub fn criterion_4() -> Result<Criterion, AppError> {
    timed(4, "online DPO stuck with offline DPO", 10.0, || {
        let rs = scenarios(&["b7"], 0)?;
        let r = &rs[0];
        let detail = format!("V_RLHF - V_online {}", r.v_rlhf - r.v_online_dpo.unwrap_or(f64::NAN));
        let bad = failures(&rs);
        Ok((bad.is_empty(), join(detail, &bad)))
    })
}

pub fn criterion_5() -> Result<Criterion, AppError> {
    timed(5, "online DPO above offline DPO", 10.0, || {
        let rs = scenarios(&["b8"], 0)?;
        let r = &rs[0];
        let detail = format!("V_online - V_offline {}", r.v_online_dpo.unwrap_or(f64::NAN) - r.v_dpo);
        let bad = failures(&rs);
        Ok((bad.is_empty(), join(detail, &bad)))
    })
}

pub fn criterion_6(seed: u64) -> Result<Criterion, AppError> {
    timed(6, "isomorphic classes and both-direction constructions", 5.0, || {
        let rs = scenarios(&["iso", "b5", "b6"], seed)?;
        let iso = &rs[0];
        let detail = format!(
            "|V_RLHF - V_DPO| {:e}; {}",
            (iso.v_rlhf - iso.v_dpo).abs(),
            rs[1..].iter().map(|r| format!("{} {}", r.name, r.v_dpo - r.v_rlhf)).collect::<Vec<_>>().join(", ")
        );
        let bad = failures(&rs);
        Ok((bad.is_empty(), join(detail, &bad)))
    })
}

fn join(detail: String, bad: &[String]) -> String {
    if bad.is_empty() {
        detail
    } else {
        format!("{detail}; failed: {}", bad.join("; "))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorRow {
    pub seed: u64,
    pub vocab: usize,
    pub horizon: usize,
    pub terminal_token: bool,
    pub max_policy_diff: f64,
    pub max_q_diff: f64,
}

/// Compares the product of token-wise optimal conditionals with the
/// sequence-level closed form, and `q*` with prefix reward plus `v*`.
pub fn token_factorization(seed: u64, count: usize) -> Result<Vec<FactorRow>, AppError> {
    let mut rows = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let s = seed.wrapping_mul(1000).wrapping_add(i);
        let vocab = 2 + (i % 5) as usize;
        let horizon = 1 + ((i / 5) % 3) as usize;
        let terminal_token = i % 2 == 1;
        let rule = if terminal_token { TerminalRule::TerminalToken { token: 0 } } else { TerminalRule::FixedLength };
        let beta = 0.25 + 0.25 * (i % 4) as f64;
        let mdp = random_token_mdp(vocab, horizon, rule, beta, s)?;
        let q = compute_q_star(&mdp);
        let cond = tokenwise_optimal_policy(&mdp, &q);
        let max_policy_diff = global_optimal_policy(&mdp)
            .into_iter()
            .map(|(t, p)| (mdp.path_probability(&cond, t) - p).abs())
            .fold(0.0, f64::max);
        let v = compute_v_star(&mdp)?;
        let mut max_q_diff: f64 = 0.0;
        for n in 0..mdp.len() {
            max_q_diff = max_q_diff.max((q.0[n] - (mdp.prefix_reward(n)? + v.0[n])).abs());
        }
        rows.push(FactorRow { seed: s, vocab, horizon, terminal_token, max_policy_diff, max_q_diff });
    }
    Ok(rows)
}

pub fn criterion_7(seed: u64) -> Result<(Criterion, Vec<FactorRow>), AppError> {
    let mut rows = Vec::new();
    let c = timed(7, "token-wise factorization", 30.0, || {
        rows = token_factorization(seed, 50)?;
        let p = rows.iter().map(|r| r.max_policy_diff).fold(0.0, f64::max);
        let q = rows.iter().map(|r| r.max_q_diff).fold(0.0, f64::max);
        Ok((p < 1e-10 && q < 1e-10, format!("{} MDPs, policy {p:e}, q {q:e}", rows.len())))
    })?;
    Ok((c, rows))
}

/// Minimizes the empirical loss over `theta` supported on `support` within the
/// ball of radius `bound`, by repeatedly refining a grid around the best point.
pub fn grid_support_oracle(design: &PreferenceDesign, support: &[usize], bound: f64) -> (Vec<f64>, f64) {
    let d = design.d;
    let k = support.len();
    let points = 41usize;
    let mut center = vec![0.0; k];
    let mut half = bound;
    let mut best = (vec![0.0; d], empirical_bt_loss(&vec![0.0; d], design).0);
    let total = points.pow(k as u32);
    for _ in 0..48 {
        let mut improved = best.clone();
        for idx in 0..total {
            let mut theta = vec![0.0; d];
            let mut rest = idx;
            for (j, &coord) in support.iter().enumerate() {
                let step = rest % points;
                rest /= points;
                theta[coord] = center[j] - half + 2.0 * half * step as f64 / (points - 1) as f64;
            }
            if theta.iter().map(|v| v * v).sum::<f64>() > bound * bound {
                continue;
            }
            let l = empirical_bt_loss(&theta, design).0;
            if l < improved.1 {
                improved = (theta, l);
            }
        }
        best = improved;
        center = support.iter().map(|c| best.0[*c]).collect();
        half *= 0.5;
    }
    best
}

/// Cyclic coordinate search with a refined 1-D grid on every coordinate.
pub fn grid_mle_oracle(design: &PreferenceDesign, bound: f64) -> Vec<f64> {
    let d = design.d;
    let mut theta = vec![0.0; d];
    let mut loss = empirical_bt_loss(&theta, design).0;
    for _ in 0..2000 {
        let before = loss;
        for j in 0..d {
            let others: f64 = theta.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v * v).sum();
            let reach = (bound * bound - others).max(0.0).sqrt();
            let mut center = theta[j];
            let mut half = reach;
            for _ in 0..40 {
                let mut best = (center, f64::INFINITY);
                for s in 0..=20 {
                    let x = (center - half + half * s as f64 / 10.0).clamp(-reach, reach);
                    let mut t = theta.clone();
                    t[j] = x;
                    let l = empirical_bt_loss(&t, design).0;
                    if l < best.1 {
                        best = (x, l);
                    }
                }
                center = best.0;
                half *= 0.5;
            }
            let mut t = theta.clone();
            t[j] = center;
            let l = empirical_bt_loss(&t, design).0;
            if l <= loss {
                theta = t;
                loss = l;
            }
        }
        if before - loss <= 1e-15 * (1.0 + loss.abs()) {
            break;
        }
    }
    theta
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub seed: u64,
    pub estimator: String,
    pub support: String,
    pub solver_loss: f64,
    pub oracle_loss: f64,
    pub semi_norm_diff: f64,
    pub max_abs_diff: f64,
}

/// Best subset against per-support grid search, and the MLE against a
/// coordinate grid search, at `d = 6, k = 2, n = 200`.
pub fn estimator_oracle(seed: u64) -> Result<Vec<OracleRow>, AppError> {
    let (d, k, n, bound) = (6usize, 2usize, 200usize, 4.0);
    let mut theta_star = vec![0.0; d];
    theta_star[1] = 1.5;
    theta_star[4] = -1.0;
    let design = sample_gaussian_design(&theta_star, n, 1.0, seed)?;
    let cfg = FitConfig::default();
    let mut rows = Vec::new();

    let l0 = fit(&EstimatorSpec::L0 { bound, k }, &design, &cfg)?;
    // Every support of size at most k: 6 singletons and 15 pairs.
    let supports = (0..d).map(|a| vec![a]).chain((0..d).flat_map(|a| (a + 1..d).map(move |b| vec![a, b])));
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    for s in supports {
        let (t, l) = grid_support_oracle(&design, &s, bound);
        if best.as_ref().is_none_or(|x| l < x.2) {
            best = Some((s, t, l));
        }
    }
    let (support, t, l) = best.expect("at least one support");
    rows.push(OracleRow {
        seed,
        estimator: "L0".into(),
        support: support.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" "),
        solver_loss: l0.loss,
        oracle_loss: l,
        semi_norm_diff: semi_norm_sq(&l0.theta, &t, &design),
        max_abs_diff: max_abs(&l0.theta, &t),
    });

    let mle = fit(&EstimatorSpec::Mle { bound }, &design, &cfg)?;
    let t = grid_mle_oracle(&design, bound);
    rows.push(OracleRow {
        seed,
        estimator: "MLE".into(),
        support: String::new(),
        solver_loss: mle.loss,
        oracle_loss: empirical_bt_loss(&t, &design).0,
        semi_norm_diff: semi_norm_sq(&mle.theta, &t, &design),
        max_abs_diff: max_abs(&mle.theta, &t),
    });
    Ok(rows)
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn criterion_8(seed: u64) -> Result<(Criterion, Vec<OracleRow>), AppError> {
    let mut rows = Vec::new();
    let c = timed(8, "estimator oracle equivalence", 60.0, || {
        rows = estimator_oracle(seed)?;
        let l0 = &rows[0];
        let mle = &rows[1];
        Ok((
            l0.semi_norm_diff < 1e-6 && mle.max_abs_diff < 1e-3,
            format!("L0 semi-norm diff {:e}; MLE max diff {:e}", l0.semi_norm_diff, mle.max_abs_diff),
        ))
    })?;
    Ok((c, rows))
}

#[derive(Debug, Serialize)]
struct CheckRow<'a> {
    seed: u64,
    criterion: u32,
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    seed: u64,
    passed: bool,
    criteria: &'a [Criterion],
}

/// Runs every criterion, writing scenario outputs, oracle tables, sweep tables
/// and plots under `dir`. The sweep is shared by criteria 9 and 10.
fn sweep_criterion(id: u32, name: &str, checks: &[ClaimCheck], seconds: f64) -> Criterion {
    let bad: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
    Criterion {
        id,
        name: name.into(),
        passed: bad.is_empty(),
        detail: join(format!("{} checks", checks.len()), &bad),
        seconds,
        budget_seconds: 900.0,
    }
}

/// The two sweeps behind criteria 9 and 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub separation: SweepConfig,
    pub suboptimality: SweepConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            separation: SweepConfig { gamma_c: vec![0.5, 1.0, 2.0], ..SweepConfig::default() },
            suboptimality: SweepConfig::suboptimality_default(),
        }
    }
}

impl VerifyConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.separation.base_seed = seed;
        self.suboptimality.base_seed = seed;
        self
    }
}

pub fn verify_all(seed: u64, dir: &Path, cfg: &VerifyConfig) -> Result<Vec<Criterion>, AppError> {
    let mut crit = Vec::new();
    let rdir = dir.join("reproduce");
    for name in NAMES {
        match reproduce(name, seed, &rdir) {
            Ok(_) | Err(AppError::Claim(_)) => {}
            Err(e) => return Err(e),
        }
    }
    crit.push(criterion_1()?);
    crit.push(criterion_2()?);
    crit.push(criterion_3(seed)?);
    crit.push(criterion_4()?);
    crit.push(criterion_5()?);
    crit.push(criterion_6(seed)?);
    let (c, rows) = criterion_7(seed)?;
    write_csv(&dir.join("token_factorization.csv"), &rows)?;
    crit.push(c);
    let (c, rows) = criterion_8(seed)?;
    write_csv(&dir.join("estimator_oracle.csv"), &rows)?;
    crit.push(c);

    let t = Instant::now();
    let out = run_sweep(&cfg.separation)?;
    let secs = t.elapsed().as_secs_f64();
    let errs = error_summary(&out, cfg.separation.base_seed);
    let mut artifacts = crate::cli::write_sweep_tables(dir, &out, &errs, &[])?;
    let checks = separation_checks(&errs, &cfg.separation);
    crit.push(sweep_criterion(9, "estimation separation", &checks, secs));

    let t = Instant::now();
    let out = run_sweep(&cfg.suboptimality)?;
    let secs = t.elapsed().as_secs_f64();
    let errs = error_summary(&out, cfg.suboptimality.base_seed);
    let gaps = gap_summary(&out, cfg.suboptimality.base_seed);
    let sdir = dir.join("subopt");
    let written = crate::cli::write_sweep_tables(&sdir, &out, &errs, &gaps)?;
    artifacts.extend(written.into_iter().map(|a| format!("subopt/{a}")));
    let checks = suboptimality_checks(&out, &gaps, &cfg.suboptimality);
    crit.push(sweep_criterion(10, "sub-optimality ordering", &checks, secs));

    let rows: Vec<CheckRow> =
        crit.iter().map(|c| CheckRow { seed, criterion: c.id, name: &c.name, passed: c.passed, detail: &c.detail }).collect();
    write_csv(&dir.join("checks.csv"), &rows)?;
    let passed = crit.iter().all(|c| c.passed && c.within_budget());
    write_json(&dir.join("report.json"), &Report { seed, passed, criteria: &crit })?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest::new(
            "verify-all",
            cfg,
            seed,
            ["checks.csv", "report.json", "token_factorization.csv", "estimator_oracle.csv"]
                .into_iter()
                .map(String::from)
                .chain(artifacts)
                .collect(),
        ),
    )?;
    Ok(crit)
}
