//! Finite-sample sweeps on the dense-to-sparse env: estimation error of the
//! reward-model and direct estimators, and the sub-optimality of the policies
//! they induce.

use std::collections::BTreeMap;

use prefgap_core::estimators::{fit, gamma_schedule, semi_norm_sq, EstimatorSpec, FitConfig};
use prefgap_core::token_mdp::{
    compute_q_star, evaluate_policy, make_dtsp_env, sequence_kl, tokenwise_optimal_policy, DtspConfig, DtspEnv,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::AppError;

/// Everything needed to rerun a sweep bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub d: usize,
    pub k: usize,
    pub vocab: Option<usize>,
    pub feature_bound: f64,
    pub ball: f64,
    pub beta: f64,
    pub sparse_scale: f64,
    pub dense_norm: f64,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    /// Run `i` uses env and data seed `base_seed + i`.
    pub base_seed: u64,
    pub gamma_c: Vec<f64>,
    pub delta: f64,
    /// Compute policy gaps as well as estimation errors.
    pub suboptimality: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            d: 60,
            k: 3,
            vocab: None,
            feature_bound: 108.0,
            ball: 1.5,
            beta: 1.0,
            sparse_scale: 0.3,
            dense_norm: 0.3,
            n_grid: vec![100, 200, 400, 800, 1600, 3200],
            seeds: 20,
            base_seed: 0,
            gamma_c: vec![1.0],
            delta: 0.05,
            suboptimality: false,
        }
    }
}

impl SweepConfig {
    /// Defaults for the sub-optimality sweep. Shorter features keep the
    /// labels less saturated, so a rare wrong support costs a bounded gap.
    pub fn suboptimality_default() -> Self {
        SweepConfig { feature_bound: 36.0, suboptimality: true, ..SweepConfig::default() }
    }

    pub fn env_config(&self, seed: u64) -> DtspConfig {
        DtspConfig {
            d: self.d,
            k: self.k,
            vocab: self.vocab,
            feature_bound: self.feature_bound,
            ball: self.ball,
            beta: self.beta,
            sparse_scale: self.sparse_scale,
            dense_norm: self.dense_norm,
            seed,
        }
    }

    fn validate(&self) -> Result<(), AppError> {
        if self.n_grid.is_empty() || self.seeds == 0 {
            return Err(AppError::Usage("need a nonempty n grid and at least one seed".into()));
        }
        if self.gamma_c.iter().any(|c| !(*c > 0.0)) {
            return Err(AppError::Usage("gamma constants must be positive".into()));
        }
        Ok(())
    }
}

/// One estimation-error record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub seed: u64,
    pub n: usize,
    pub method: String,
    /// Empty for the unregularized estimators.
    pub gamma_c: Option<f64>,
    pub gamma: Option<f64>,
    pub error: f64,
    pub gram_min_eig: f64,
    pub singular: bool,
}

/// One sub-optimality record. `kl_gap` is `beta KL(pi || pi*)`, which must
/// agree with `gap` by the performance-difference identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub seed: u64,
    pub n: usize,
    pub method: String,
    pub gamma_c: Option<f64>,
    pub gap: f64,
    pub kl_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub method: String,
    pub gamma_c: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub base_seed: u64,
}

/// Per-seed env diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRow {
    pub seed: u64,
    pub support: String,
    pub gram_min_eig: f64,
    pub gram_max_eig: f64,
    pub worst_condition_number: f64,
    pub supports_checked: usize,
    pub exhaustive: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub errors: Vec<ErrorRow>,
    pub gaps: Vec<GapRow>,
    pub envs: Vec<EnvRow>,
}

pub const RM_L0: &str = "RM-L0";
pub const RM_L1: &str = "RM-L1";
pub const RM_MLE: &str = "RM-MLE";
pub const DPO_MLE: &str = "DPO-MLE";
pub const RLHF_L0: &str = "RLHF-L0";
pub const RLHF_L1: &str = "RLHF-L1";
pub const RLHF_MLE: &str = "RLHF-MLE";

struct Cell {
    errors: Vec<ErrorRow>,
    gaps: Vec<GapRow>,
}

/// First-token parameter of the policy whose duplicated-pair surrogate is `theta`.
fn policy_first_token(theta: &[f64]) -> Vec<f64> {
    let mut t = theta.to_vec();
    t[0] -= 1.0;
    t
}

fn gaps_for(env: &DtspEnv, estimates: &[(String, Option<f64>, Vec<f64>, bool)], seed: u64, n: usize) -> Result<Vec<GapRow>, AppError> {
    let truth = env.token_mdp(&env.reward_target())?;
    let q = compute_q_star(&truth);
    let v_star = q.0[0];
    let star = tokenwise_optimal_policy(&truth, &q);
    let tau = env.reward_offset();
    let mut rows = Vec::new();
    for (method, c, theta, rlhf) in estimates {
        let cond = if *rlhf {
            let theta0: Vec<f64> = theta.iter().zip(&tau).map(|(t, o)| t - o).collect();
            let model = env.token_mdp(&theta0)?;
            let qm = compute_q_star(&model);
            tokenwise_optimal_policy(&model, &qm)
        } else {
            env.loglinear_policy(&truth, &policy_first_token(theta))
        };
        let gap = v_star - evaluate_policy(&truth, &cond);
        let kl_gap = env.beta() * sequence_kl(&truth, &cond, &star);
        rows.push(GapRow { seed, n, method: method.clone(), gamma_c: *c, gap, kl_gap });
    }
    Ok(rows)
}

fn run_cell(cfg: &SweepConfig, env: &DtspEnv, seed: u64, n: usize) -> Result<Cell, AppError> {
    let design = env.sample_design(n, seed, n as u64)?;
    let gram_min_eig = design.gram().min_eigenvalue();
    let singular = !(gram_min_eig > 1e-12);
    let truth = env.theta_total();
    let tau = env.reward_offset();
    let fc = FitConfig::default();
    let b = cfg.ball;
    let row = |method: &str, c: Option<f64>, g: Option<f64>, theta: &[f64]| ErrorRow {
        seed,
        n,
        method: method.to_string(),
        gamma_c: c,
        gamma: g,
        error: semi_norm_sq(theta, &truth, &design),
        gram_min_eig,
        singular,
    };
    let mut errors = Vec::new();
    let mut estimates = Vec::new();

    let l0 = fit(&EstimatorSpec::RelL0 { bound: b, k: cfg.k, tau: tau.clone() }, &design, &fc)?;
    errors.push(row(RM_L0, None, None, &l0.theta));
    estimates.push((RLHF_L0.to_string(), None, l0.theta, true));
    for &c in &cfg.gamma_c {
        let g = gamma_schedule(n, cfg.d, cfg.delta, c);
        let l1 = fit(&EstimatorSpec::RelL1 { bound: b, gamma: g, tau: tau.clone() }, &design, &fc)?;
        errors.push(row(RM_L1, Some(c), Some(g), &l1.theta));
        estimates.push((RLHF_L1.to_string(), Some(c), l1.theta, true));
    }
    // With the second-token parameter pinned, the reward-model MLE and the
    // direct MLE solve the same problem on the duplicated pairs.
    let mle = fit(&EstimatorSpec::Mle { bound: b }, &design, &fc)?;
    errors.push(row(RM_MLE, None, None, &mle.theta));
    errors.push(row(DPO_MLE, None, None, &mle.theta));
    estimates.push((RLHF_MLE.to_string(), None, mle.theta.clone(), true));
    estimates.push((DPO_MLE.to_string(), None, mle.theta, false));

    let gaps = if cfg.suboptimality { gaps_for(env, &estimates, seed, n)? } else { Vec::new() };
    Ok(Cell { errors, gaps })
}

/// Runs every `(seed, n)` cell. Cells are independent and merged in sorted
/// order, so the output does not depend on the thread count.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput, AppError> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.base_seed + i).collect();
    let envs: Vec<DtspEnv> =
        seeds.par_iter().map(|s| make_dtsp_env(&cfg.env_config(*s)).map_err(AppError::from)).collect::<Result<_, _>>()?;
    let cells: Vec<(usize, usize)> =
        (0..seeds.len()).flat_map(|i| cfg.n_grid.iter().map(move |n| (i, *n))).collect();
    let results: Vec<Cell> =
        cells.par_iter().map(|(i, n)| run_cell(cfg, &envs[*i], seeds[*i], *n)).collect::<Result<_, _>>()?;
    let mut out = SweepOutput::default();
    for c in results {
        out.errors.extend(c.errors);
        out.gaps.extend(c.gaps);
    }
    out.errors.sort_by(|a, b| (a.n, &a.method, key(a.gamma_c), a.seed).cmp(&(b.n, &b.method, key(b.gamma_c), b.seed)));
    out.gaps.sort_by(|a, b| (a.n, &a.method, key(a.gamma_c), a.seed).cmp(&(b.n, &b.method, key(b.gamma_c), b.seed)));
    out.envs = seeds
        .iter()
        .zip(&envs)
        .map(|(s, e)| EnvRow {
            seed: *s,
            support: e.support.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" "),
            gram_min_eig: e.gram.min_eigenvalue,
            gram_max_eig: e.gram.max_eigenvalue,
            worst_condition_number: e.gram.worst_condition_number,
            supports_checked: e.gram.supports_checked,
            exhaustive: e.gram.exhaustive,
        })
        .collect();
    Ok(out)
}

/// Orders optional gamma constants; bit patterns of positive floats sort like the floats.
fn key(c: Option<f64>) -> u64 {
    c.map_or(0, |v| v.to_bits())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Mean and sample standard deviation over seeds for each `(n, method, c)`.
pub fn summarize<'a, I>(rows: I, base_seed: u64) -> Vec<SummaryRow>
where
    I: IntoIterator<Item = (usize, &'a str, Option<f64>, f64)>,
{
    let mut groups: BTreeMap<(usize, String, u64), (Option<f64>, Vec<f64>)> = BTreeMap::new();
    for (n, m, c, v) in rows {
        groups.entry((n, m.to_string(), key(c))).or_insert_with(|| (c, Vec::new())).1.push(v);
    }
    groups
        .into_iter()
        .map(|((n, method, _), (gamma_c, vs))| {
            let (mean, std) = mean_std(&vs);
            SummaryRow { n, method, gamma_c, mean, std, seeds: vs.len(), base_seed }
        })
        .collect()
}

pub fn error_summary(out: &SweepOutput, base_seed: u64) -> Vec<SummaryRow> {
    summarize(out.errors.iter().map(|r| (r.n, r.method.as_str(), r.gamma_c, r.error)), base_seed)
}

pub fn gap_summary(out: &SweepOutput, base_seed: u64) -> Vec<SummaryRow> {
    summarize(out.gaps.iter().map(|r| (r.n, r.method.as_str(), r.gamma_c, r.gap)), base_seed)
}

fn mean_of(summary: &[SummaryRow], n: usize, method: &str, c: Option<f64>) -> Option<f64> {
    summary.iter().find(|r| r.n == n && r.method == method && key(r.gamma_c) == key(c)).map(|r| r.mean)
}

/// A named pass/fail outcome with a human-readable detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Orderings and scaling expected from the estimation sweep.
pub fn separation_checks(summary: &[SummaryRow], cfg: &SweepConfig) -> Vec<ClaimCheck> {
    let mut checks = Vec::new();
    let ns: Vec<usize> = cfg.n_grid.iter().copied().filter(|n| *n >= 200).collect();
    for &c in &cfg.gamma_c {
        let mut ok = true;
        let mut detail = String::new();
        for &n in &ns {
            let (Some(l0), Some(l1), Some(mle)) =
                (mean_of(summary, n, RM_L0, None), mean_of(summary, n, RM_L1, Some(c)), mean_of(summary, n, DPO_MLE, None))
            else {
                ok = false;
                continue;
            };
            if !(l0 < l1 && l1 < mle) {
                ok = false;
            }
            detail.push_str(&format!("n={n}: {l0:.4} < {l1:.4} < {mle:.4}; "));
        }
        checks.push(ClaimCheck { name: format!("RM-L0 < RM-L1(c={c}) < DPO-MLE for n >= 200"), passed: ok, detail });
    }
    let lo = cfg.n_grid.iter().min().copied();
    let hi = cfg.n_grid.iter().max().copied();
    if let (Some(lo), Some(hi)) = (lo, hi) {
        if let (Some(a), Some(b)) = (mean_of(summary, lo, DPO_MLE, None), mean_of(summary, hi, DPO_MLE, None)) {
            let ratio = (b * hi as f64) / (a * lo as f64);
            checks.push(ClaimCheck {
                name: "DPO-MLE error times n stable within a factor 3".into(),
                passed: (1.0 / 3.0..=3.0).contains(&ratio),
                detail: format!("ratio {ratio:.3} between n={hi} and n={lo}"),
            });
        }
    }
    checks
}

/// Orderings expected from the sub-optimality sweep.
pub fn suboptimality_checks(out: &SweepOutput, summary: &[SummaryRow], cfg: &SweepConfig) -> Vec<ClaimCheck> {
    let mut checks = Vec::new();
    let worst = out.gaps.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    checks.push(ClaimCheck { name: "gaps nonnegative".into(), passed: worst >= -1e-8, detail: format!("min gap {worst:e}") });
    let pd = out.gaps.iter().map(|r| (r.gap - r.kl_gap).abs() / (1.0 + r.gap.abs())).fold(0.0, f64::max);
    checks.push(ClaimCheck {
        name: "gap equals beta KL to the optimum".into(),
        passed: pd <= 1e-8,
        detail: format!("max relative mismatch {pd:e}"),
    });
    let mut ok = true;
    let mut detail = String::new();
    for &n in cfg.n_grid.iter().filter(|n| **n >= 400) {
        let (Some(a), Some(b)) = (mean_of(summary, n, RLHF_L0, None), mean_of(summary, n, DPO_MLE, None)) else {
            ok = false;
            continue;
        };
        ok &= a < b;
        detail.push_str(&format!("n={n}: {a:.3e} < {b:.3e}; "));
    }
    checks.push(ClaimCheck { name: "gap(RLHF-L0) < gap(DPO-MLE) for n >= 400".into(), passed: ok, detail });
    let mut grid = cfg.n_grid.clone();
    grid.sort_unstable();
    for method in [RLHF_L0, DPO_MLE] {
        let means: Vec<f64> = grid.iter().filter_map(|n| mean_of(summary, *n, method, None)).collect();
        let mono = means.len() == grid.len() && means.windows(2).all(|w| w[1] < w[0]);
        checks.push(ClaimCheck {
            name: format!("mean gap of {method} decreases in n"),
            passed: mono,
            detail: means.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(" > "),
        });
    }
    checks
}
