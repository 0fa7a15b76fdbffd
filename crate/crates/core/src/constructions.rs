//! The three-arm constructions that separate the two pipelines, each run end to
//! end, plus a one-dimensional grid oracle over the log-ratio coordinate.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{
    optimal_policy, optimal_value, seeded_rng, Distribution, FeatureMap, FiniteBandit,
    PairDistribution, RewardVector,
};
use crate::classes::{class_relation, log_ratio_coordinate, ClassRelation, PolicyClassSpec, RewardClassSpec};
use crate::error::{domain, Result};
use crate::exact::{
    fit_dpo, fit_reward_mle, gradient_identity_check, online_dpo, policy_stage, PairSampler, PolicyFit,
};
use crate::math::{log_sigmoid, sigmoid, sigmoid_prime};
use crate::optim::OptimizerConfig;

/// One named claim and whether it held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub condition_label: String,
    pub relation: Option<ClassRelation>,
    pub v_rlhf: f64,
    pub v_dpo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_online_dpo: Option<f64>,
    /// Best value attainable inside the policy class, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star_class: Option<f64>,
    pub v_star: f64,
    pub artifacts: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl ScenarioResult {
    fn new(name: &str, label: &str, env: &FiniteBandit) -> Self {
        ScenarioResult {
            name: name.to_string(),
            condition_label: label.to_string(),
            relation: None,
            v_rlhf: f64::NAN,
            v_dpo: f64::NAN,
            v_online_dpo: None,
            v_star_class: None,
            v_star: optimal_value(env, &env.r_star.values),
            artifacts: BTreeMap::new(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    fn put(&mut self, key: &str, v: f64) {
        self.artifacts.insert(key.to_string(), v);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Features `e1, e2, (e1 + e2)/2`, uniform reference.
pub fn env_three_arm_midpoint(r: [f64; 3], beta: f64) -> Result<FiniteBandit> {
    let features = FeatureMap::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]], 1.0)?;
    FiniteBandit::new(features, RewardVector::tabular(r.to_vec()), Distribution::uniform(3), beta)
}

fn ref_pairs(env: &FiniteBandit) -> PairDistribution {
    PairDistribution::product(&env.pi_ref, &env.pi_ref)
}

fn uniform_tv(pi: &Distribution) -> f64 {
    pi.total_variation(&Distribution::uniform(pi.len()))
}

const AB: (usize, usize) = (0, 1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridObjective {
    /// `V_{r*}` of the policy at `x` (maximized).
    RlValue,
    /// Offline DPO loss under `pi_ref x pi_ref` (minimized).
    DpoLoss,
    /// Derivative in `x` of the DPO loss with the sampler frozen at `x` (zeroed).
    OnlineResidual(PairSampler),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub best_index: usize,
    pub best_x: f64,
    pub spacing: f64,
}

/// Policy of the three-arm midpoint family at log-ratio `x`, from first principles.
fn grid_policy(env: &FiniteBandit, x: f64) -> Vec<f64> {
    let s = grid_logits(env, x);
    let w: Vec<f64> = (0..3).map(|y| env.pi_ref.probs()[y] * libm::exp(s[y])).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn grid_logits(env: &FiniteBandit, x: f64) -> [f64; 3] {
    let h = x / (2.0 * env.beta);
    [h, -h, 0.0]
}

fn grid_value(env: &FiniteBandit, x: f64) -> f64 {
    let p = grid_policy(env, x);
    let q = env.pi_ref.probs();
    (0..3).map(|y| p[y] * (env.r_star.values[y] - env.beta * libm::log(p[y] / q[y]))).sum()
}

fn grid_pair_loss(env: &FiniteBandit, x: f64, w: &dyn Fn(usize, usize) -> f64) -> f64 {
    let s = grid_logits(env, x);
    let r = &env.r_star.values;
    let mut l = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let p = sigmoid(r[i] - r[j]);
            let d = env.beta * (s[i] - s[j]);
            l -= w(i, j) * (p * log_sigmoid(d) + (1.0 - p) * log_sigmoid(-d));
        }
    }
    l
}

fn grid_dpo_loss(env: &FiniteBandit, x: f64) -> f64 {
    let q = env.pi_ref.probs().to_vec();
    grid_pair_loss(env, x, &|i, j| q[i] * q[j])
}

fn grid_online_residual(env: &FiniteBandit, x: f64, sampler: PairSampler) -> f64 {
    let p = grid_policy(env, x);
    let s = grid_logits(env, x);
    let q = env.pi_ref.probs();
    let mut w = [[0.0; 3]; 3];
    let mut z = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            w[i][j] = match sampler {
                PairSampler::FixedRef => q[i] * q[j],
                PairSampler::OnPolicy => p[i] * p[j],
                PairSampler::Pilaf => p[i] * p[j] / sigmoid_prime(env.beta * (s[i] - s[j])),
            };
            z += w[i][j];
        }
    }
    let c = [0.5, -0.5, 0.0];
    let r = &env.r_star.values;
    let mut g = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = env.beta * (s[i] - s[j]);
            g -= w[i][j] / z * (sigmoid(r[i] - r[j]) - sigmoid(d)) * (c[i] - c[j]);
        }
    }
    g
}

/// Evaluates one objective on an evenly spaced grid and locates its optimum.
pub fn grid_oracle_1d(env: &FiniteBandit, objective: GridObjective, range: (f64, f64), resolution: usize) -> Result<GridResult> {
    if env.n() != 3 || resolution < 2 || !(range.1 > range.0) {
        return Err(domain("grid oracle needs a three-arm env, two points and a nonempty range"));
    }
    let spacing = (range.1 - range.0) / (resolution - 1) as f64;
    let xs: Vec<f64> = (0..resolution).map(|i| range.0 + spacing * i as f64).collect();
    let values: Vec<f64> = xs
        .iter()
        .map(|x| match objective {
            GridObjective::RlValue => grid_value(env, *x),
            GridObjective::DpoLoss => grid_dpo_loss(env, *x),
            GridObjective::OnlineResidual(s) => grid_online_residual(env, *x, s),
        })
        .collect();
    let key = |v: f64| match objective {
        GridObjective::RlValue => -v,
        GridObjective::DpoLoss => v,
        GridObjective::OnlineResidual(_) => v.abs(),
    };
    let mut best_index = 0;
    for i in 1..values.len() {
        if key(values[i]) < key(values[best_index]) - 1e-15 {
            best_index = i;
        }
    }
    Ok(GridResult { best_x: xs[best_index], xs, values, best_index, spacing })
}

/// Central differences of the three grid objectives; columns are `x`, the value
/// gradient, the offline DPO gradient and the online residual.
pub fn gradient_curves(env: &FiniteBandit, sampler: PairSampler, range: (f64, f64), resolution: usize) -> Result<Vec<[f64; 4]>> {
    let g = grid_oracle_1d(env, GridObjective::RlValue, range, resolution)?;
    let h = 1e-5;
    Ok(g.xs
        .iter()
        .map(|x| {
            let rl = (grid_value(env, x + h) - grid_value(env, x - h)) / (2.0 * h);
            let dpo = (grid_dpo_loss(env, x + h) - grid_dpo_loss(env, x - h)) / (2.0 * h);
            [*x, rl, dpo, grid_online_residual(env, *x, sampler)]
        })
        .collect())
}

fn cfg() -> OptimizerConfig {
    OptimizerConfig::default()
}

fn rlhf(f: &RewardClassSpec, pi: &PolicyClassSpec, env: &FiniteBandit) -> Result<(RewardVector, PolicyFit)> {
    let reward = fit_reward_mle(f, env, &ref_pairs(env), &cfg())?;
    let fit = policy_stage(&reward.values, pi, env, &cfg())?;
    Ok((reward, fit))
}

fn relation(res: &mut ScenarioResult, f: &RewardClassSpec, pi: &PolicyClassSpec, env: &FiniteBandit, want: ClassRelation) -> Result<()> {
    let rel = class_relation(f, pi, env)?;
    res.relation = Some(rel);
    res.check("class relation", rel == want, alloc::format!("{rel:?}, expected {want:?}"));
    Ok(())
}

/// Strong reward class, weak (log-linear) policy class.
pub fn scenario_b3() -> Result<Vec<ScenarioResult>> {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.01)?;
    let f = RewardClassSpec::Tabular;
    let pi = PolicyClassSpec::LogLinear;
    let mut res = ScenarioResult::new("b3", "3.2", &env);
    relation(&mut res, &f, &pi, &env, ClassRelation::RewardStronger)?;
    let (_, rl) = rlhf(&f, &pi, &env)?;
    let dpo = fit_dpo(&pi, &env, &ref_pairs(&env), &cfg())?;
    res.v_rlhf = rl.value;
    res.v_dpo = dpo.value;
    let tv = uniform_tv(&dpo.distribution);
    let a3 = rl.distribution.probs()[2];
    res.put("dpo_tv_to_uniform", tv);
    res.put("rlhf_pi_a3", a3);
    res.put("x_rlhf", log_ratio_coordinate(&rl.distribution, &env, AB));
    res.check("DPO policy is uniform", tv < 1e-6, alloc::format!("TV {tv:e}"));
    res.check("RLHF avoids the midpoint arm", a3 < 1e-3, alloc::format!("pi(a3) = {a3:e}"));
    res.check("RLHF beats DPO", rl.value - dpo.value > 0.0, alloc::format!("{} vs {}", rl.value, dpo.value));
    let grid = grid_oracle_1d(&env, GridObjective::DpoLoss, (-4.0, 4.0), 4001)?;
    res.check("grid DPO minimizer at zero", grid.best_x.abs() <= grid.spacing, alloc::format!("x = {}", grid.best_x));
    Ok(vec![res])
}

/// Weak (linear) reward class, strong (tabular) policy class.
pub fn scenario_b4() -> Result<Vec<ScenarioResult>> {
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1)?;
    let f = RewardClassSpec::Linear { scale_by_beta: false };
    let pi = PolicyClassSpec::FullTabular;
    let mut res = ScenarioResult::new("b4", "3.3", &env);
    relation(&mut res, &f, &pi, &env, ClassRelation::PolicyStronger)?;
    let (reward, rl) = rlhf(&f, &pi, &env)?;
    let dpo = fit_dpo(&pi, &env, &ref_pairs(&env), &cfg())?;
    res.v_rlhf = rl.value;
    res.v_dpo = dpo.value;
    let spread = reward.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - reward.values.iter().copied().fold(f64::INFINITY, f64::min);
    res.put("learned_reward_spread", spread);
    res.check("learned reward is constant", spread < 1e-6, alloc::format!("spread {spread:e}"));
    res.check("DPO reaches the optimum", (dpo.value - res.v_star).abs() < 1e-6, alloc::format!("{} vs {}", dpo.value, res.v_star));
    res.check("DPO beats RLHF", dpo.value - rl.value > 0.0, alloc::format!("{} vs {}", dpo.value, rl.value));
    Ok(vec![res])
}

/// Policy class strictly richer than the reward class, in both directions.
pub fn scenario_b5() -> Result<Vec<ScenarioResult>> {
    let beta = 0.1;
    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], beta)?;
    let star = optimal_policy(&env, &env.r_star.values);

    let f1 = RewardClassSpec::Linear { scale_by_beta: false };
    let pi1 = PolicyClassSpec::TabularMinusPoint { excluded: star.clone() };
    let mut a = ScenarioResult::new("b5-construction-1", "3.6-two-envs", &env);
    relation(&mut a, &f1, &pi1, &env, ClassRelation::PolicyStronger)?;
    let (_, rl) = rlhf(&f1, &pi1, &env)?;
    let dpo = fit_dpo(&pi1, &env, &ref_pairs(&env), &cfg())?;
    a.v_rlhf = rl.value;
    a.v_dpo = dpo.value;
    a.v_star_class = Some(a.v_star);
    a.put("dpo_distance_to_excluded", dpo.distribution.total_variation(&star));
    a.put("dpo_attained", if dpo.attained { 1.0 } else { 0.0 });
    a.check("RLHF policy is uniform", uniform_tv(&rl.distribution) < 1e-6, alloc::format!("TV {:e}", uniform_tv(&rl.distribution)));
    a.check("DPO approaches the excluded optimum", !dpo.attained && dpo.distribution.total_variation(&star) <= crate::classes::EPS_OPEN, String::new());
    a.check("RLHF below DPO", dpo.value - rl.value > 0.0, alloc::format!("{} vs {}", rl.value, dpo.value));

    let theta_r = [1.0, -1.0];
    let r_theta = RewardVector::linear(&env.features, &theta_r, beta);
    let f2 = RewardClassSpec::Singleton { reward: r_theta };
    let pi2 = PolicyClassSpec::LogLinear;
    let mut b = ScenarioResult::new("b5-construction-2", "3.6-two-envs", &env);
    relation(&mut b, &f2, &pi2, &env, ClassRelation::PolicyStronger)?;
    let (_, rl) = rlhf(&f2, &pi2, &env)?;
    let dpo = fit_dpo(&pi2, &env, &ref_pairs(&env), &cfg())?;
    b.v_rlhf = rl.value;
    b.v_dpo = dpo.value;
    b.check("RLHF value", (rl.value - 0.729).abs() < 1e-3, alloc::format!("{}", rl.value));
    b.check("DPO value", (dpo.value - 2.0 / 3.0).abs() < 1e-9, alloc::format!("{}", dpo.value));
    b.check("RLHF above DPO", rl.value - dpo.value > 0.0, alloc::format!("{} vs {}", rl.value, dpo.value));
    Ok(vec![a, b])
}

/// Best likelihood of the surrogate family on a fine grid in the log-ratio
/// coordinate; the family is one-dimensional modulo constants.
fn surrogate_family_grid_loss(env: &FiniteBandit, range: (f64, f64), resolution: usize) -> f64 {
    let q = env.pi_ref.probs().to_vec();
    let step = (range.1 - range.0) / (resolution - 1) as f64;
    (0..resolution)
        .map(|i| grid_pair_loss(env, range.0 + step * i as f64, &|a, b| q[a] * q[b]))
        .fold(f64::INFINITY, f64::min)
}

/// Reward class strictly richer than the policy surrogates, in both directions.
pub fn scenario_b6() -> Result<Vec<ScenarioResult>> {
    let r_bar = RewardVector::tabular(vec![2.0, 2.0, 0.0]);

    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.01)?;
    let pi1 = PolicyClassSpec::LogLinear;
    let f1 = RewardClassSpec::Augmented {
        base: Box::new(RewardClassSpec::Surrogate { policy: pi1.clone() }),
        extra: r_bar.clone(),
    };
    let mut a = ScenarioResult::new("b6-construction-1", "3.7-two-envs", &env);
    relation(&mut a, &f1, &pi1, &env, ClassRelation::RewardStronger)?;
    let (reward, rl) = rlhf(&f1, &pi1, &env)?;
    let dpo = fit_dpo(&pi1, &env, &ref_pairs(&env), &cfg())?;
    a.v_rlhf = rl.value;
    a.v_dpo = dpo.value;
    let l_bar = crate::exact::population_bt_loss(&r_bar.values, &env, &ref_pairs(&env))?;
    let l_grid = surrogate_family_grid_loss(&env, (-20.0, 20.0), 40001);
    a.put("loss_r_bar", l_bar);
    a.put("loss_family_grid", l_grid);
    a.check("likelihood selects the extra reward", reward == r_bar && l_bar < l_grid, alloc::format!("{l_bar} vs grid {l_grid}"));
    a.check("RLHF above DPO", rl.value - dpo.value > 0.0, alloc::format!("{} vs {}", rl.value, dpo.value));

    let env = env_three_arm_midpoint([1.0, 1.0, 0.0], 0.1)?;
    let pi2 = PolicyClassSpec::LogLinearHalfspace { a: vec![1.0, -1.0], b: 20.0 };
    let f2 = RewardClassSpec::Augmented {
        base: Box::new(RewardClassSpec::Surrogate { policy: pi2.clone() }),
        extra: r_bar.clone(),
    };
    let mut b = ScenarioResult::new("b6-construction-2", "3.7-two-envs", &env);
    relation(&mut b, &f2, &pi2, &env, ClassRelation::RewardStronger)?;
    let (reward, rl) = rlhf(&f2, &pi2, &env)?;
    let dpo = fit_dpo(&pi2, &env, &ref_pairs(&env), &cfg())?;
    b.v_rlhf = rl.value;
    b.v_dpo = dpo.value;
    let x_rl = rl.theta[0] - rl.theta[1];
    let x_dpo = dpo.theta[0] - dpo.theta[1];
    b.put("theta_gap_rlhf", x_rl);
    b.put("theta_gap_dpo", x_dpo);
    b.check("likelihood selects the extra reward", reward == r_bar, String::new());
    b.check("DPO on the halfspace boundary", (x_dpo - 20.0).abs() < 1e-6, alloc::format!("{x_dpo}"));
    b.check("RLHF moves past the boundary", x_rl > 20.0, alloc::format!("{x_rl}"));
    b.check("RLHF below DPO", dpo.value - rl.value > 0.0, alloc::format!("{} vs {}", rl.value, dpo.value));
    // The value under r* decreases along the feasible ray, checked on a grid.
    let vals: Vec<f64> = (0..=400).map(|i| grid_value(&env, env.beta * (20.0 + 0.1 * i as f64))).collect();
    let decreasing = vals.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    b.check("value decreases beyond the boundary", decreasing, String::new());
    Ok(vec![a, b])
}

fn box_env(r: [f64; 3]) -> Result<(FiniteBandit, PolicyClassSpec)> {
    let env = env_three_arm_midpoint(r, 1.0)?;
    Ok((env, PolicyClassSpec::LogLinearLogRatioBox { pair: AB, bound: 4.0 }))
}

/// Realizable reward, restricted policies: offline and online DPO share a fixed point.
pub fn scenario_b7() -> Result<Vec<ScenarioResult>> {
    let (env, pi) = box_env([12.0, 12.0, 0.0])?;
    let f = RewardClassSpec::Tabular;
    let mut res = ScenarioResult::new("b7", "3.4-online", &env);
    relation(&mut res, &f, &pi, &env, ClassRelation::RewardStronger)?;
    let (_, rl) = rlhf(&f, &pi, &env)?;
    let dpo = fit_dpo(&pi, &env, &ref_pairs(&env), &cfg())?;
    let on = online_dpo(&pi, &env, PairSampler::Pilaf, &cfg())?;
    res.v_rlhf = rl.value;
    res.v_dpo = dpo.value;
    res.v_online_dpo = Some(on.fit.value);
    res.v_star_class = Some(rl.value);
    let x_rl = log_ratio_coordinate(&rl.distribution, &env, AB);
    let x_off = log_ratio_coordinate(&dpo.distribution, &env, AB);
    let x_on = log_ratio_coordinate(&on.fit.distribution, &env, AB);
    res.put("x_rlhf", x_rl);
    res.put("x_offline", x_off);
    res.put("x_online", x_on);
    res.check("online and offline DPO agree", (x_on - x_off).abs() < 1e-3, alloc::format!("{x_on} vs {x_off}"));
    res.check("RLHF above online DPO", rl.value - on.fit.value > 0.0, alloc::format!("{} vs {}", rl.value, on.fit.value));
    grid_checks(&mut res, &env, PairSampler::Pilaf, x_rl, x_off, x_on)?;
    Ok(vec![res])
}

/// Isomorphic classes with an off-class optimum: on-policy sampling helps.
pub fn scenario_b8() -> Result<Vec<ScenarioResult>> {
    let (env, pi) = box_env([24.0, 12.0, 0.0])?;
    let f = RewardClassSpec::Surrogate { policy: pi.clone() };
    let mut res = ScenarioResult::new("b8", "3.8-online", &env);
    relation(&mut res, &f, &pi, &env, ClassRelation::Isomorphic)?;
    let (_, rl) = rlhf(&f, &pi, &env)?;
    let dpo = fit_dpo(&pi, &env, &ref_pairs(&env), &cfg())?;
    let on = online_dpo(&pi, &env, PairSampler::OnPolicy, &cfg())?;
    res.v_rlhf = rl.value;
    res.v_dpo = dpo.value;
    res.v_online_dpo = Some(on.fit.value);
    let x_rl = log_ratio_coordinate(&rl.distribution, &env, AB);
    let x_off = log_ratio_coordinate(&dpo.distribution, &env, AB);
    let x_on = log_ratio_coordinate(&on.fit.distribution, &env, AB);
    res.put("x_rlhf", x_rl);
    res.put("x_offline", x_off);
    res.put("x_online", x_on);
    res.check("RLHF equals offline DPO", (rl.value - dpo.value).abs() < 1e-6, alloc::format!("{} vs {}", rl.value, dpo.value));
    res.check("online above offline DPO", on.fit.value - dpo.value > 0.0, alloc::format!("{} vs {}", on.fit.value, dpo.value));
    let grid = grid_oracle_1d(&env, GridObjective::DpoLoss, (-4.0, 4.0), 4001)?;
    res.check("grid offline minimizer", (grid.best_x - x_off).abs() <= grid.spacing, alloc::format!("{} vs {x_off}", grid.best_x));
    let grid = grid_oracle_1d(&env, GridObjective::OnlineResidual(PairSampler::OnPolicy), (-4.0, 4.0), 4001)?;
    res.check("grid online fixed point", (grid.best_x - x_on).abs() <= grid.spacing, alloc::format!("{} vs {x_on}", grid.best_x));
    let v_grid_on = grid_value(&env, grid.best_x);
    res.check("grid online value above offline", v_grid_on > grid_value(&env, x_off), String::new());
    Ok(vec![res])
}

fn grid_checks(res: &mut ScenarioResult, env: &FiniteBandit, sampler: PairSampler, x_rl: f64, x_off: f64, x_on: f64) -> Result<()> {
    let g = grid_oracle_1d(env, GridObjective::RlValue, (-4.0, 4.0), 4001)?;
    // Symmetric rewards give two mirrored maximizers.
    let mirrored = (g.best_x.abs() - x_rl.abs()).abs() <= g.spacing;
    res.check("grid value maximizer", mirrored, alloc::format!("{} vs {x_rl}", g.best_x));
    let g = grid_oracle_1d(env, GridObjective::DpoLoss, (-4.0, 4.0), 4001)?;
    res.check("grid offline minimizer", (g.best_x - x_off).abs() <= g.spacing, alloc::format!("{} vs {x_off}", g.best_x));
    let g = grid_oracle_1d(env, GridObjective::OnlineResidual(sampler), (-4.0, 4.0), 4001)?;
    res.check("grid online fixed point", (g.best_x - x_on).abs() <= g.spacing, alloc::format!("{} vs {x_on}", g.best_x));
    Ok(())
}

fn random_env(n: usize, d: usize, beta: f64, seed: u64) -> Result<FiniteBandit> {
    let mut rng = seeded_rng(seed, 11);
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| (2.0 * rng.random::<f64>() - 1.0) / libm::sqrt(d as f64)).collect())
        .collect();
    let r: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
    let w: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
    FiniteBandit::new(FeatureMap::new(vectors, 1.0)?, RewardVector::tabular(r), Distribution::from_weights(&w)?, beta)
}

/// Linear rewards against log-linear policies on the same features.
pub fn scenario_iso(seed: u64) -> Result<Vec<ScenarioResult>> {
    let env = random_env(4, 2, 0.5, seed)?;
    let f = RewardClassSpec::Linear { scale_by_beta: true };
    let pi = PolicyClassSpec::LogLinear;
    let mut res = ScenarioResult::new("iso", "3.5-iso", &env);
    relation(&mut res, &f, &pi, &env, ClassRelation::Isomorphic)?;
    let (_, rl) = rlhf(&f, &pi, &env)?;
    let dpo = fit_dpo(&pi, &env, &ref_pairs(&env), &cfg())?;
    res.v_rlhf = rl.value;
    res.v_dpo = dpo.value;
    let gap = (rl.value - dpo.value).abs();
    res.put("value_gap", gap);
    res.check("RLHF equals DPO", gap < 1e-8, alloc::format!("{gap:e}"));
    res.check("both below the optimum", res.v_star - rl.value >= -1e-8, String::new());
    Ok(vec![res])
}

/// Realizable tabular classes, plus the online-gradient identity on a random
/// five-arm log-linear env.
pub fn scenario_ss(seed: u64) -> Result<Vec<ScenarioResult>> {
    let env = random_env(5, 3, 0.5, seed)?;
    let f = RewardClassSpec::Tabular;
    let pi = PolicyClassSpec::FullTabular;
    let mut res = ScenarioResult::new("ss", "3.1", &env);
    relation(&mut res, &f, &pi, &env, ClassRelation::Isomorphic)?;
    let (_, rl) = rlhf(&f, &pi, &env)?;
    let dpo = fit_dpo(&pi, &env, &ref_pairs(&env), &cfg())?;
    let on = online_dpo(&pi, &env, PairSampler::Pilaf, &cfg())?;
    res.v_rlhf = rl.value;
    res.v_dpo = dpo.value;
    res.v_online_dpo = Some(on.fit.value);
    let star = optimal_policy(&env, &env.r_star.values);
    for (name, v) in [("RLHF", rl.value), ("DPO", dpo.value), ("online DPO", on.fit.value)] {
        res.check(&alloc::format!("{name} reaches the optimum"), (v - res.v_star).abs() < 1e-6, alloc::format!("{v} vs {}", res.v_star));
    }
    res.put("online_tv_to_optimum", on.fit.distribution.total_variation(&star));

    let id = identity_env(seed)?;
    let theta = identity_theta(seed);
    let rep = gradient_identity_check(&theta, &id)?;
    res.put("identity_max_abs_diff", rep.max_abs_diff);
    res.put("identity_z", rep.z_theta);
    res.check("gradient identity at zero gap", rep.max_abs_diff < 1e-8, alloc::format!("{:e}", rep.max_abs_diff));
    let perturbed = perturb_reward(&id, 0.01, seed)?;
    let rep = gradient_identity_check(&theta, &perturbed)?;
    res.put("identity_perturbed_diff", rep.max_abs_diff);
    res.put("identity_perturbed_bound", rep.residual_bound);
    res.check("gradient identity remainder bound", rep.max_abs_diff <= rep.residual_bound, alloc::format!("{:e} <= {:e}", rep.max_abs_diff, rep.residual_bound));
    Ok(vec![res])
}

/// Parameter used for the identity checks.
pub fn identity_theta(seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed, 13);
    (0..3).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
}

/// Five-arm log-linear env whose reward is exactly the surrogate of `identity_theta`.
pub fn identity_env(seed: u64) -> Result<FiniteBandit> {
    let base = random_env(5, 3, 0.5, seed ^ 0x5eed)?;
    let theta = identity_theta(seed);
    let s = base.features.apply(&theta);
    let m = s.iter().copied().fold(f64::INFINITY, f64::min);
    let r: Vec<f64> = s.iter().map(|v| base.beta * (v - m)).collect();
    FiniteBandit::new(base.features, RewardVector::tabular(r), base.pi_ref, base.beta)
}

/// Adds independent perturbations of size at most `delta / 2` to `r*`.
pub fn perturb_reward(env: &FiniteBandit, delta: f64, seed: u64) -> Result<FiniteBandit> {
    let mut rng = seeded_rng(seed, 17);
    let r: Vec<f64> = env.r_star.values.iter().map(|v| v + delta * (rng.random::<f64>() - 0.5)).collect();
    FiniteBandit::new(env.features.clone(), RewardVector::tabular(r), env.pi_ref.clone(), env.beta)
}

/// Runs the scenario registered under a condition label.
pub fn run_condition(label: &str, seed: u64) -> Result<Vec<ScenarioResult>> {
    match label {
        "3.1" => scenario_ss(seed),
        "3.2" => scenario_b3(),
        "3.3" => scenario_b4(),
        "3.4-online" => scenario_b7(),
        "3.5-iso" => scenario_iso(seed),
        "3.6-two-envs" => scenario_b5(),
        "3.7-two-envs" => scenario_b6(),
        "3.8-online" => scenario_b8(),
        other => Err(domain(alloc::format!("unknown condition label {other}"))),
    }
}

pub const CONDITION_LABELS: [&str; 8] =
    ["3.1", "3.2", "3.3", "3.4-online", "3.5-iso", "3.6-two-envs", "3.7-two-envs", "3.8-online"];

