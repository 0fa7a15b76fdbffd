//! Exact population-level solvers: reward fitting, the policy stage, offline
//! and online DPO, the PILAF sampler and the gradient identity it satisfies.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bandit::{
    kl_divergence, optimal_policy, regularized_value, Distribution, FiniteBandit, PairDistribution, RewardVector,
};
use crate::classes::{
    ball_project, log_probs, solve_in_span, PolicyClassSpec, RewardClassSpec, EPS_OPEN,
};
use crate::error::{domain, unsupported, Error, Result};
use crate::math::{dot, log_sigmoid, norm_inf, sigmoid, sigmoid_prime, sub};
use crate::optim::{minimize, projected_residual, OptimizerConfig};

/// How comparison pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSampler {
    /// `pi_ref x pi_ref`, independent of the current policy.
    FixedRef,
    /// `pi x pi`.
    OnPolicy,
    /// Mixture of `pi x pi` and the tilted pair `(pi^{1+b} pi_ref^{-b}, pi^{1-b} pi_ref^{b})`.
    Pilaf,
}

/// A fitted policy together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFit {
    pub theta: Vec<f64>,
    pub distribution: Distribution,
    /// `V_{r*}` of the returned policy.
    pub value: f64,
    /// False when the class is open and the optimum is only approached.
    pub attained: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub loss: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    pub fit: PolicyFit,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilafMixture {
    pub alpha1: f64,
    pub alpha2: f64,
    pub first: PairDistribution,
    pub second: PairDistribution,
    pub mixture: PairDistribution,
}

/// Both sides of the online-gradient identity at one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientIdentityReport {
    /// Gradient of the online DPO loss under the frozen PILAF sampler.
    pub lhs_grad: Vec<f64>,
    /// `(2 beta / Z) * grad(-V)`.
    pub rhs_grad: Vec<f64>,
    pub z_theta: f64,
    pub max_abs_diff: f64,
    /// Largest `|Δr* - Δr_hat|` over pairs.
    pub delta: f64,
    /// Bound on the relative Taylor remainder.
    pub eps_bound: f64,
    /// Bound on `max_abs_diff` implied by `eps_bound`.
    pub residual_bound: f64,
    pub rmax: f64,
}

/// Population Bradley-Terry negative log-likelihood of `reward` and its gradient
/// with respect to the reward values.
pub fn bt_loss_and_grad(env: &FiniteBandit, reward: &[f64], mu: &PairDistribution) -> (f64, Vec<f64>) {
    let n = env.n();
    let rs = &env.r_star.values;
    let mut loss = 0.0;
    let mut g = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let w = mu.get(i, j);
            if w == 0.0 {
                continue;
            }
            let p = sigmoid(rs[i] - rs[j]);
            let d = reward[i] - reward[j];
            loss -= w * (p * log_sigmoid(d) + (1.0 - p) * log_sigmoid(-d));
            let c = -w * (p - sigmoid(d));
            g[i] += c;
            g[j] -= c;
        }
    }
    (loss, g)
}

pub fn population_bt_loss(reward: &[f64], env: &FiniteBandit, mu: &PairDistribution) -> Result<f64> {
    if reward.len() != env.n() || mu.n != env.n() {
        return Err(domain("reward or pair distribution size does not match the bandit"));
    }
    Ok(bt_loss_and_grad(env, reward, mu).0)
}

/// Reward parameterization `r = scale * A phi` with `A` the features or the identity.
struct RewardMap {
    features: bool,
    scale: f64,
}

impl RewardMap {
    fn dim(&self, env: &FiniteBandit) -> usize {
        if self.features {
            env.features.dim
        } else {
            env.n()
        }
    }

    fn apply(&self, env: &FiniteBandit, phi: &[f64]) -> Vec<f64> {
        let raw = if self.features { env.features.apply(phi) } else { phi.to_vec() };
        raw.into_iter().map(|v| self.scale * v).collect()
    }

    fn pullback(&self, env: &FiniteBandit, g: &[f64]) -> Vec<f64> {
        let raw = if self.features { env.features.apply_transpose(g) } else { g.to_vec() };
        raw.into_iter().map(|v| self.scale * v).collect()
    }

    fn vector(&self, env: &FiniteBandit, phi: &[f64]) -> RewardVector {
        RewardVector { values: self.apply(env, phi), coefficients: self.features.then(|| phi.to_vec()) }
    }
}

fn fit_reward_map<P>(
    map: &RewardMap,
    project: P,
    env: &FiniteBandit,
    mu: &PairDistribution,
    cfg: &OptimizerConfig,
) -> Result<RewardVector>
where
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let x0 = vec![0.0; map.dim(env)];
    let out = minimize(
        |phi| {
            let (l, g) = bt_loss_and_grad(env, &map.apply(env, phi), mu);
            (l, map.pullback(env, &g))
        },
        &x0,
        project,
        cfg,
    )?;
    Ok(map.vector(env, &out.x))
}

/// Maximum-likelihood reward over a class under the population pair law `mu`.
pub fn fit_reward_mle(
    spec: &RewardClassSpec,
    env: &FiniteBandit,
    mu: &PairDistribution,
    cfg: &OptimizerConfig,
) -> Result<RewardVector> {
    if mu.n != env.n() {
        return Err(domain("pair distribution size does not match the bandit"));
    }
    let identity = |x: &[f64]| -> Result<Vec<f64>> { Ok(x.to_vec()) };
    match spec {
        RewardClassSpec::Tabular => fit_reward_map(&RewardMap { features: false, scale: 1.0 }, identity, env, mu, cfg),
        RewardClassSpec::Linear { scale_by_beta } => {
            let scale = if *scale_by_beta { env.beta } else { 1.0 };
            fit_reward_map(&RewardMap { features: true, scale }, identity, env, mu, cfg)
        }
        RewardClassSpec::LinearBounded { bound, scale_by_beta } => {
            if !(*bound >= 0.0) {
                return Err(domain("bound must be nonnegative"));
            }
            let scale = if *scale_by_beta { env.beta } else { 1.0 };
            let b = *bound;
            let proj = move |x: &[f64]| -> Result<Vec<f64>> { Ok(ball_project(x, b)) };
            fit_reward_map(&RewardMap { features: true, scale }, proj, env, mu, cfg)
        }
        RewardClassSpec::Singleton { reward } => {
            if reward.values.len() != env.n() {
                return Err(domain("singleton reward has the wrong length"));
            }
            Ok(reward.clone())
        }
        RewardClassSpec::Surrogate { policy } => {
            if matches!(policy, PolicyClassSpec::TabularMinusPoint { .. }) {
                return Err(unsupported("likelihood fit over the surrogate class of an open tabular class"));
            }
            let map = RewardMap { features: policy.uses_features(), scale: env.beta };
            fit_reward_map(&map, |x: &[f64]| policy.project(env, x), env, mu, cfg)
        }
        RewardClassSpec::Augmented { base, extra } => {
            let fitted = fit_reward_mle(base, env, mu, cfg)?;
            let l_base = bt_loss_and_grad(env, &fitted.values, mu).0;
            let l_extra = population_bt_loss(&extra.values, env, mu)?;
            Ok(if l_extra < l_base { extra.clone() } else { fitted })
        }
    }
}

/// `V_r(pi_theta)` and its gradient in `theta`.
pub fn value_and_grad(spec: &PolicyClassSpec, env: &FiniteBandit, reward: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let s = spec.logits(env, theta);
    let lp = log_probs(env, &s);
    let lref = env.log_ref();
    let pi: Vec<f64> = lp.iter().map(|v| libm::exp(*v)).collect();
    let a: Vec<f64> = (0..env.n()).map(|y| reward[y] - env.beta * (lp[y] - lref[y])).collect();
    let v = dot(&pi, &a);
    let gs: Vec<f64> = (0..env.n()).map(|y| pi[y] * (a[y] - v)).collect();
    (v, spec.pullback(env, &gs))
}

fn make_fit(spec: &PolicyClassSpec, env: &FiniteBandit, theta: Vec<f64>, iterations: usize) -> Result<PolicyFit> {
    let distribution = spec.distribution(env, &theta);
    let value = regularized_value(env, &distribution)?;
    Ok(PolicyFit { theta, distribution, value, attained: true, iterations })
}

/// Moves a policy that sits on the excluded point of an open class to a nearby
/// admissible one.
fn avoid_excluded(env: &FiniteBandit, fit: PolicyFit, excluded: &Distribution) -> Result<PolicyFit> {
    if fit.distribution.total_variation(excluded) > EPS_OPEN {
        return Ok(fit);
    }
    let gap = env.pi_ref.total_variation(excluded);
    if gap == 0.0 {
        return Err(unsupported("excluded point equals the reference policy"));
    }
    let lambda = 0.5 * EPS_OPEN / gap;
    let p: Vec<f64> = excluded
        .probs()
        .iter()
        .zip(env.pi_ref.probs())
        .map(|(e, q)| (1.0 - lambda) * e + lambda * q)
        .collect();
    let distribution = Distribution::from_weights(&p)?;
    let theta: Vec<f64> = p.iter().zip(env.pi_ref.probs()).map(|(a, q)| libm::log(a / q)).collect();
    let value = regularized_value(env, &distribution)?;
    Ok(PolicyFit { theta, distribution, value, attained: false, iterations: fit.iterations })
}

/// Maximizes `V_reward` over the policy class.
pub fn policy_stage(
    reward: &[f64],
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    cfg: &OptimizerConfig,
) -> Result<PolicyFit> {
    if reward.len() != env.n() {
        return Err(domain("reward has the wrong length"));
    }
    match spec {
        PolicyClassSpec::FullTabular => {
            let theta: Vec<f64> = reward.iter().map(|r| r / env.beta).collect();
            make_fit(spec, env, theta, 0)
        }
        PolicyClassSpec::TabularMinusPoint { excluded } => {
            let theta: Vec<f64> = reward.iter().map(|r| r / env.beta).collect();
            avoid_excluded(env, make_fit(spec, env, theta, 0)?, excluded)
        }
        PolicyClassSpec::LogLinear => match solve_in_span(&env.features, reward) {
            Some((sol, _)) => {
                let theta: Vec<f64> = sol.iter().map(|t| t / env.beta).collect();
                make_fit(spec, env, theta, 0)
            }
            None => ascend_multistart(reward, spec, env, cfg),
        },
        _ => ascend_multistart(reward, spec, env, cfg),
    }
}

/// Projected gradient ascent from the origin and from `±e_i`; the best value
/// wins, ties go to the policy closest to `pi_ref` in KL, then to the earliest start.
fn ascend_multistart(
    reward: &[f64],
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    cfg: &OptimizerConfig,
) -> Result<PolicyFit> {
    let d = spec.param_dim(env);
    let mut starts = vec![vec![0.0; d]];
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut x = vec![0.0; d];
            x[i] = s;
            starts.push(x);
        }
    }
    let mut best: Option<(f64, f64, PolicyFit)> = None;
    for x0 in starts {
        let out = minimize(
            |theta| {
                let (v, g) = value_and_grad(spec, env, reward, theta);
                (-v, g.into_iter().map(|x| -x).collect())
            },
            &x0,
            |x: &[f64]| spec.project(env, x),
            cfg,
        )?;
        let v_reward = -out.value;
        let fit = make_fit(spec, env, out.x, out.iterations)?;
        let kl = kl_divergence(&fit.distribution, &env.pi_ref)?;
        let better = match &best {
            None => true,
            Some((bv, bkl, _)) => {
                let tol = 1e-12 * (1.0 + bv.abs());
                v_reward > bv + tol || ((v_reward - bv).abs() <= tol && kl < bkl - 1e-12)
            }
        };
        if better {
            best = Some((v_reward, kl, fit));
        }
    }
    Ok(best.map(|b| b.2).expect("at least one start"))
}

/// Loss and gradient of the DPO objective at `theta` for a fixed pair law.
pub fn dpo_loss_and_grad(
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    mu: &PairDistribution,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let s = spec.logits(env, theta);
    let rhat: Vec<f64> = s.iter().map(|v| env.beta * v).collect();
    let (l, g) = bt_loss_and_grad(env, &rhat, mu);
    let g: Vec<f64> = g.into_iter().map(|v| env.beta * v).collect();
    (l, spec.pullback(env, &g))
}

fn tabular_view(spec: &PolicyClassSpec) -> &PolicyClassSpec {
    match spec {
        PolicyClassSpec::TabularMinusPoint { .. } => &PolicyClassSpec::FullTabular,
        other => other,
    }
}

/// Offline DPO: minimizes the population loss of the surrogate reward.
pub fn fit_dpo(
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    mu: &PairDistribution,
    cfg: &OptimizerConfig,
) -> Result<PolicyFit> {
    if mu.n != env.n() {
        return Err(domain("pair distribution size does not match the bandit"));
    }
    let base = tabular_view(spec);
    let x0 = vec![0.0; base.param_dim(env)];
    let out = minimize(
        |theta| dpo_loss_and_grad(base, env, mu, theta),
        &x0,
        |x: &[f64]| base.project(env, x),
        cfg,
    )?;
    let fit = make_fit(base, env, out.x, out.iterations)?;
    match spec {
        PolicyClassSpec::TabularMinusPoint { excluded } => avoid_excluded(env, fit, excluded),
        _ => Ok(fit),
    }
}

/// The PILAF mixture at `pi`, with `alpha1 = 1` and `alpha2 = E_{pi x pi} exp(Δr_hat)`.
pub fn pilaf_mixture(pi: &Distribution, env: &FiniteBandit) -> Result<PilafMixture> {
    if pi.probs().iter().any(|p| *p <= 0.0) {
        return Err(domain("PILAF needs a full-support policy"));
    }
    let b = env.beta;
    let lp: Vec<f64> = pi.probs().iter().map(|p| libm::log(*p)).collect();
    let lref = env.log_ref();
    let up: Vec<f64> = (0..env.n()).map(|y| (1.0 + b) * lp[y] - b * lref[y]).collect();
    let down: Vec<f64> = (0..env.n()).map(|y| (1.0 - b) * lp[y] + b * lref[y]).collect();
    let alpha2 = libm::exp(crate::math::log_sum_exp(&up) + crate::math::log_sum_exp(&down));
    let first = PairDistribution::product(pi, pi);
    let second = PairDistribution::product(&Distribution::from_logits(&up), &Distribution::from_logits(&down));
    let alpha1 = 1.0;
    let weights = first
        .weights
        .iter()
        .zip(&second.weights)
        .map(|(a, c)| (alpha1 * a + alpha2 * c) / (alpha1 + alpha2))
        .collect();
    let mixture = PairDistribution { n: env.n(), weights };
    Ok(PilafMixture { alpha1, alpha2, first, second, mixture })
}

/// `pi(y) pi(y') / σ'(Δr_hat)` normalized, with its normalizer `Z = 2 + 2 alpha2`.
/// This is the PILAF mixture with the order of each pair forgotten.
pub fn pilaf_sigma_prime_form(pi: &Distribution, env: &FiniteBandit) -> Result<(PairDistribution, f64)> {
    let rhat = crate::classes::surrogate_reward(pi, env)?.values;
    let p = pi.probs();
    let n = env.n();
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            weights.push(p[i] * p[j] / sigmoid_prime(rhat[i] - rhat[j]));
        }
    }
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    Ok((PairDistribution { n, weights }, z))
}

/// Alias kept for the sampler interface: the exact mixture law.
pub fn pilaf_pair_distribution(pi: &Distribution, env: &FiniteBandit) -> Result<PairDistribution> {
    Ok(pilaf_mixture(pi, env)?.mixture)
}

/// Pair law used by a sampler at policy `pi`.
pub fn pair_distribution(sampler: PairSampler, pi: &Distribution, env: &FiniteBandit) -> Result<PairDistribution> {
    match sampler {
        PairSampler::FixedRef => Ok(PairDistribution::product(&env.pi_ref, &env.pi_ref)),
        PairSampler::OnPolicy => Ok(PairDistribution::product(pi, pi)),
        PairSampler::Pilaf => pilaf_pair_distribution(pi, env),
    }
}

/// Gradient of the online DPO loss with the sampler frozen at `theta`.
pub fn online_dpo_gradient(
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    sampler: PairSampler,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let pi = spec.distribution(env, theta);
    let mu = pair_distribution(sampler, &pi, env)?;
    Ok(dpo_loss_and_grad(spec, env, &mu, theta))
}

/// Online DPO as freeze-then-step: each iteration recomputes the pair law at the
/// current policy, holds it fixed, and takes one projected Armijo step.
pub fn online_dpo(
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    sampler: PairSampler,
    cfg: &OptimizerConfig,
) -> Result<OnlineResult> {
    let base = tabular_view(spec);
    let project = |x: &[f64]| base.project(env, x);
    let mut theta = project(&vec![0.0; base.param_dim(env)])?;
    let mut trajectory = Vec::new();
    let mut t = cfg.step_size;
    let mut prev_excess = f64::INFINITY;
    let mut increases = 0usize;
    for iter in 0..cfg.max_iters {
        let pi = base.distribution(env, &theta);
        let mu = pair_distribution(sampler, &pi, env)?;
        let (loss, g) = dpo_loss_and_grad(base, env, &mu, &theta);
        trajectory.push(TrajectoryPoint { iter, theta: theta.clone(), loss, value: regularized_value(env, &pi)? });
        // The sampler moves, so compare losses net of the label entropy under it.
        let excess = loss - bt_loss_and_grad(env, &env.r_star.values, &mu).0;
        if excess > prev_excess {
            increases += 1;
            if increases >= cfg.divergence_window {
                return Err(Error::Divergence { iterations: iter });
            }
        } else {
            increases = 0;
        }
        prev_excess = excess;
        let r = projected_residual(&theta, &g, &project)?;
        if r <= cfg.grad_tol {
            let fit = make_fit(base, env, theta, iter)?;
            let fit = match spec {
                PolicyClassSpec::TabularMinusPoint { excluded } => avoid_excluded(env, fit, excluded)?,
                _ => fit,
            };
            return Ok(OnlineResult { fit, trajectory });
        }
        if iter > 0 {
            t = (t * cfg.grow).min(cfg.max_step);
        }
        let mut moved = false;
        while t >= 1e-30 {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let xn = project(&trial)?;
            let step = sub(&xn, &theta);
            let decrease = dot(&g, &step);
            if decrease >= 0.0 {
                break;
            }
            let (ln, _) = dpo_loss_and_grad(base, env, &mu, &xn);
            if ln <= loss + cfg.armijo * decrease {
                theta = xn;
                moved = true;
                break;
            }
            t *= cfg.shrink;
        }
        if !moved {
            let fit = make_fit(base, env, theta, iter)?;
            return Ok(OnlineResult { fit, trajectory });
        }
    }
    let pi = base.distribution(env, &theta);
    let mu = pair_distribution(sampler, &pi, env)?;
    let (_, g) = dpo_loss_and_grad(base, env, &mu, &theta);
    Err(Error::NonConvergence { iterations: cfg.max_iters, grad_norm: projected_residual(&theta, &g, &project)? })
}

/// Evaluates both sides of the identity linking the PILAF-sampled online DPO
/// gradient to the gradient of the regularized value, for a log-linear policy.
pub fn gradient_identity_check(theta: &[f64], env: &FiniteBandit) -> Result<GradientIdentityReport> {
    if theta.len() != env.features.dim {
        return Err(domain("theta has the wrong dimension"));
    }
    let spec = PolicyClassSpec::LogLinear;
    let pi = spec.distribution(env, theta);
    let (mu, z) = pilaf_sigma_prime_form(&pi, env)?;
    let (_, lhs) = dpo_loss_and_grad(&spec, env, &mu, theta);
    let (_, gv) = value_and_grad(&spec, env, &env.r_star.values, theta);
    let rhs: Vec<f64> = gv.iter().map(|g| -2.0 * env.beta / z * g).collect();
    let rhat = crate::classes::surrogate_reward(&pi, env)?.values;
    let rs = &env.r_star.values;
    let n = env.n();
    let mut delta: f64 = 0.0;
    let mut dpsi: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            delta = delta.max(((rs[i] - rs[j]) - (rhat[i] - rhat[j])).abs());
            dpsi = dpsi.max(norm_inf(&sub(&env.features.vectors[i], &env.features.vectors[j])));
        }
    }
    let rmax = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - rs.iter().copied().fold(f64::INFINITY, f64::min);
    let eps_bound = delta / (6.0 * libm::sqrt(3.0) * sigmoid_prime(rmax + delta));
    let residual_bound = env.beta / z * eps_bound * delta * dpsi;
    let max_abs_diff = norm_inf(&sub(&lhs, &rhs));
    Ok(GradientIdentityReport { lhs_grad: lhs, rhs_grad: rhs, z_theta: z, max_abs_diff, delta, eps_bound, residual_bound, rmax })
}

/// `V_{r*}` of the optimal policy for `reward`.
pub fn induced_value(reward: &[f64], env: &FiniteBandit) -> Result<f64> {
    regularized_value(env, &optimal_policy(env, reward))
}

/// Squared-gap objective `(1/4) E_{sg pi}[(Δr* - Δr_phi)^2]` with `pi` the optimal
/// policy of `r_phi`, for a linear reward; returns loss and frozen-sampler gradient.
pub fn new_objective_loss(phi: &[f64], scale_by_beta: bool, env: &FiniteBandit) -> Result<(f64, Vec<f64>)> {
    if phi.len() != env.features.dim {
        return Err(domain("phi has the wrong dimension"));
    }
    let map = RewardMap { features: true, scale: if scale_by_beta { env.beta } else { 1.0 } };
    let r = map.apply(env, phi);
    let pi = optimal_policy(env, &r);
    let p = pi.probs();
    let rs = &env.r_star.values;
    let n = env.n();
    let mut loss = 0.0;
    let mut gr = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let w = p[i] * p[j];
            let dd = (rs[i] - rs[j]) - (r[i] - r[j]);
            loss += 0.25 * w * dd * dd;
            gr[i] -= 0.5 * w * dd;
            gr[j] += 0.5 * w * dd;
        }
    }
    Ok((loss, map.pullback(env, &gr)))
}

/// `E_{sg mu}[(Δr_hat - (P(y1≻y2) - P(y2≻y1))/2)^2]` and its gradient.
pub fn online_ipo_loss(
    spec: &PolicyClassSpec,
    env: &FiniteBandit,
    sampler: PairSampler,
    theta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let pi = spec.distribution(env, theta);
    let mu = pair_distribution(sampler, &pi, env)?;
    let s = spec.logits(env, theta);
    let rs = &env.r_star.values;
    let n = env.n();
    let mut loss = 0.0;
    let mut gs = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let w = mu.get(i, j);
            if w == 0.0 {
                continue;
            }
            let target = 0.5 * (sigmoid(rs[i] - rs[j]) - sigmoid(rs[j] - rs[i]));
            let e = env.beta * (s[i] - s[j]) - target;
            loss += w * e * e;
            gs[i] += 2.0 * w * e * env.beta;
            gs[j] -= 2.0 * w * e * env.beta;
        }
    }
    Ok((loss, spec.pullback(env, &gs)))
}

/// Grid helper: a log-linear parameter on the three-arm midpoint family with
/// log-ratio coordinate `x`.
pub fn theta_for_log_ratio(x: f64, beta: f64) -> Vec<f64> {
    vec![x / (2.0 * beta), -x / (2.0 * beta)]
}
