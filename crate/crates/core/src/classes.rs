//! Reward and policy classes, their parameterizations and how they relate.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bandit::{optimal_policy, Distribution, FeatureMap, FiniteBandit, RewardVector};
use crate::error::{domain, unsupported, Result};
use crate::math::{dot, norm2, sub};

/// Distance at which a policy counts as touching an excluded point.
pub const EPS_OPEN: f64 = 1e-6;

/// `r_phi(y) = s * psi(y)^T phi` with `s = beta` when `scale_by_beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearReward {
    pub phi: Vec<f64>,
    pub scale_by_beta: bool,
}

impl LinearReward {
    pub fn values(&self, env: &FiniteBandit) -> RewardVector {
        let s = if self.scale_by_beta { env.beta } else { 1.0 };
        RewardVector::linear(&env.features, &self.phi, s)
    }
}

/// `pi_theta(y) ∝ pi_ref(y) exp(theta^T psi(y))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearPolicy {
    pub theta: Vec<f64>,
}

/// `beta log(pi / pi_ref)`, a reward modulo constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReward {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyClassSpec {
    /// Every full-support policy.
    FullTabular,
    /// Every policy except one, which is approached but never returned.
    TabularMinusPoint { excluded: Distribution },
    LogLinear,
    /// Log-linear with `theta^T a >= b`.
    LogLinearHalfspace { a: Vec<f64>, b: f64 },
    /// Log-linear with `|beta (log pi/pi_ref (y) - log pi/pi_ref (y'))| <= bound`.
    LogLinearLogRatioBox { pair: (usize, usize), bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardClassSpec {
    /// Every reward vector.
    Tabular,
    Linear { scale_by_beta: bool },
    LinearBounded { bound: f64, scale_by_beta: bool },
    Singleton { reward: RewardVector },
    /// The surrogate class `F_Pi` of a policy class.
    Surrogate { policy: PolicyClassSpec },
    /// `base ∪ {extra}`.
    Augmented { base: Box<RewardClassSpec>, extra: RewardVector },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRelation {
    Isomorphic,
    PolicyStronger,
    RewardStronger,
    Incomparable,
}

impl PolicyClassSpec {
    /// Log-linear classes act through features; the tabular ones through raw logits.
    pub fn uses_features(&self) -> bool {
        !matches!(self, PolicyClassSpec::FullTabular | PolicyClassSpec::TabularMinusPoint { .. })
    }

    pub fn param_dim(&self, env: &FiniteBandit) -> usize {
        if self.uses_features() {
            env.features.dim
        } else {
            env.n()
        }
    }

    /// Logits relative to `pi_ref`, so that `pi ∝ pi_ref exp(logits)`.
    pub fn logits(&self, env: &FiniteBandit, theta: &[f64]) -> Vec<f64> {
        if self.uses_features() {
            env.features.apply(theta)
        } else {
            theta.to_vec()
        }
    }

    /// Pulls a gradient with respect to logits back to the parameter.
    pub fn pullback(&self, env: &FiniteBandit, g: &[f64]) -> Vec<f64> {
        if self.uses_features() {
            env.features.apply_transpose(g)
        } else {
            g.to_vec()
        }
    }

    pub fn distribution(&self, env: &FiniteBandit, theta: &[f64]) -> Distribution {
        distribution_from_logits(env, &self.logits(env, theta))
    }

    /// Euclidean projection onto the parameter constraint set.
    pub fn project(&self, env: &FiniteBandit, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            PolicyClassSpec::LogLinearHalfspace { a, b } => {
                if a.len() != theta.len() {
                    return Err(domain("halfspace normal has the wrong dimension"));
                }
                let aa = dot(a, a);
                if aa == 0.0 {
                    return if *b <= 0.0 {
                        Ok(theta.to_vec())
                    } else {
                        Err(domain("halfspace constraint is infeasible"))
                    };
                }
                let slack = b - dot(a, theta);
                let mut out = theta.to_vec();
                if slack > 0.0 {
                    crate::math::axpy(slack / aa, a, &mut out);
                }
                Ok(out)
            }
            PolicyClassSpec::LogLinearLogRatioBox { pair, bound } => {
                if !(*bound >= 0.0) {
                    return Err(domain("log-ratio box bound must be nonnegative"));
                }
                let g = box_direction(env, *pair)?;
                if g.len() != theta.len() {
                    return Err(domain("theta has the wrong dimension"));
                }
                let gg = dot(&g, &g);
                let x = env.beta * dot(&g, theta);
                let mut out = theta.to_vec();
                if gg > 0.0 && x.abs() > *bound {
                    let target = bound * x.signum();
                    crate::math::axpy(-(x - target) / (env.beta * gg), &g, &mut out);
                }
                Ok(out)
            }
            _ => Ok(theta.to_vec()),
        }
    }

    /// Whether `theta` satisfies the constraint up to `tol`.
    pub fn is_feasible(&self, env: &FiniteBandit, theta: &[f64], tol: f64) -> bool {
        match self {
            PolicyClassSpec::LogLinearHalfspace { a, b } => dot(a, theta) >= b - tol,
            PolicyClassSpec::LogLinearLogRatioBox { pair, bound } => match box_direction(env, *pair) {
                Ok(g) => (env.beta * dot(&g, theta)).abs() <= bound + tol,
                Err(_) => false,
            },
            _ => true,
        }
    }
}

fn box_direction(env: &FiniteBandit, pair: (usize, usize)) -> Result<Vec<f64>> {
    let n = env.n();
    if pair.0 >= n || pair.1 >= n {
        return Err(domain("log-ratio pair out of range"));
    }
    Ok(sub(&env.features.vectors[pair.0], &env.features.vectors[pair.1]))
}

pub(crate) fn distribution_from_logits(env: &FiniteBandit, logits: &[f64]) -> Distribution {
    let z: Vec<f64> = env.log_ref().iter().zip(logits).map(|(l, s)| l + s).collect();
    Distribution::from_logits(&z)
}

/// Log-probabilities of `pi ∝ pi_ref exp(logits)` without forming `pi` first.
pub(crate) fn log_probs(env: &FiniteBandit, logits: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = env.log_ref().iter().zip(logits).map(|(l, s)| l + s).collect();
    let lse = crate::math::log_sum_exp(&z);
    z.iter().map(|v| v - lse).collect()
}

/// `pi_theta` for a log-linear parameter.
pub fn policy_distribution(policy: &LogLinearPolicy, env: &FiniteBandit) -> Result<Distribution> {
    if policy.theta.len() != env.features.dim {
        return Err(domain("theta has the wrong dimension"));
    }
    Ok(distribution_from_logits(env, &env.features.apply(&policy.theta)))
}

/// `beta log(pi/pi_ref)`; the policy must have full support.
pub fn surrogate_reward(pi: &Distribution, env: &FiniteBandit) -> Result<SurrogateReward> {
    if pi.len() != env.n() {
        return Err(domain("policy size does not match the bandit"));
    }
    if pi.probs().iter().any(|p| *p <= 0.0) {
        return Err(domain("surrogate reward needs a full-support policy"));
    }
    let values = pi
        .probs()
        .iter()
        .zip(env.pi_ref.probs())
        .map(|(p, q)| env.beta * libm::log(p / q))
        .collect();
    Ok(SurrogateReward { values })
}

fn design_with_constant(features: &FeatureMap) -> DMatrix<f64> {
    let d = features.dim;
    DMatrix::from_fn(features.len(), d + 1, |i, j| if j < d { features.vectors[i][j] } else { 1.0 })
}

/// Least-squares solve of `Psi theta + c 1 = r`; `None` when the residual is not
/// numerically zero. The flag reports whether `theta` is unique.
pub(crate) fn solve_in_span(features: &FeatureMap, r: &[f64]) -> Option<(Vec<f64>, bool)> {
    let d = features.dim;
    let m = design_with_constant(features);
    let rhs = DVector::from_column_slice(r);
    let svd = m.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let sol = svd.solve(&rhs, tol).ok()?;
    let resid = (&m * &sol - &rhs).amax();
    let scale = r.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if resid > 1e-9 * scale {
        return None;
    }
    Some((sol.as_slice()[..d].to_vec(), rank == d + 1))
}

/// Whether the features span every reward vector modulo constants.
fn features_full_span(features: &FeatureMap) -> bool {
    design_with_constant(features).rank(1e-10) == features.len()
}

/// Whether `r` (modulo constants) is the surrogate of some policy in the class.
pub fn surrogate_class_contains(spec: &PolicyClassSpec, env: &FiniteBandit, r: &[f64]) -> Result<bool> {
    match spec {
        PolicyClassSpec::FullTabular => Ok(true),
        PolicyClassSpec::TabularMinusPoint { excluded } => {
            Ok(optimal_policy(env, r).total_variation(excluded) > EPS_OPEN)
        }
        PolicyClassSpec::LogLinear => Ok(solve_in_span(&env.features, r).is_some()),
        PolicyClassSpec::LogLinearHalfspace { .. } => match solve_in_span(&env.features, r) {
            None => Ok(false),
            Some((theta, true)) => {
                let theta: Vec<f64> = theta.iter().map(|t| t / env.beta).collect();
                Ok(spec.is_feasible(env, &theta, 1e-9))
            }
            Some((_, false)) => Err(unsupported("halfspace membership with rank-deficient features")),
        },
        PolicyClassSpec::LogLinearLogRatioBox { pair, bound } => {
            if solve_in_span(&env.features, r).is_none() {
                return Ok(false);
            }
            Ok((r[pair.0] - r[pair.1]).abs() <= bound + 1e-9)
        }
    }
}

fn reward_in_policy_surrogates(f: &RewardClassSpec, pi: &PolicyClassSpec, env: &FiniteBandit) -> Result<bool> {
    use PolicyClassSpec as P;
    use RewardClassSpec as R;
    match f {
        R::Tabular => match pi {
            P::FullTabular => Ok(true),
            P::LogLinear => Ok(features_full_span(&env.features)),
            _ => Ok(false),
        },
        R::Linear { .. } | R::LinearBounded { .. } => match pi {
            P::FullTabular | P::LogLinear => Ok(true),
            P::TabularMinusPoint { excluded } => {
                let s = surrogate_reward(excluded, env)?;
                Ok(solve_in_span(&env.features, &s.values).is_none())
            }
            _ if matches!(f, R::Linear { .. }) => Ok(false),
            _ => Err(unsupported("bounded linear class against a constrained policy class")),
        },
        R::Singleton { reward } => surrogate_class_contains(pi, env, &reward.values),
        R::Surrogate { policy } => policy_class_subset(policy, pi),
        R::Augmented { base, extra } => Ok(reward_in_policy_surrogates(base, pi, env)?
            && surrogate_class_contains(pi, env, &extra.values)?),
    }
}

fn policy_surrogates_in_reward(pi: &PolicyClassSpec, f: &RewardClassSpec, env: &FiniteBandit) -> Result<bool> {
    use PolicyClassSpec as P;
    use RewardClassSpec as R;
    match f {
        R::Tabular => Ok(true),
        R::Linear { .. } => match pi {
            P::FullTabular | P::TabularMinusPoint { .. } => Ok(features_full_span(&env.features)),
            _ => Ok(true),
        },
        R::LinearBounded { .. } => match pi {
            P::LogLinearLogRatioBox { .. } => Err(unsupported("bounded linear class against a log-ratio box")),
            _ => Ok(false),
        },
        R::Singleton { .. } => Ok(env.n() <= 1),
        R::Surrogate { policy } => policy_class_subset(pi, policy),
        R::Augmented { base, .. } => policy_surrogates_in_reward(pi, base, env),
    }
}

/// `a ⊆ b` for policy classes over the same features.
fn policy_class_subset(a: &PolicyClassSpec, b: &PolicyClassSpec) -> Result<bool> {
    use PolicyClassSpec as P;
    if a == b {
        return Ok(true);
    }
    match (a, b) {
        (_, P::FullTabular) => Ok(true),
        (P::LogLinearHalfspace { .. } | P::LogLinearLogRatioBox { .. }, P::LogLinear) => Ok(true),
        (P::LogLinear, P::LogLinearHalfspace { .. } | P::LogLinearLogRatioBox { .. }) => Ok(false),
        _ => Err(unsupported(format!("cannot compare policy classes {a:?} and {b:?}"))),
    }
}

/// How a reward class compares with the surrogate class of a policy class.
pub fn class_relation(f: &RewardClassSpec, pi: &PolicyClassSpec, env: &FiniteBandit) -> Result<ClassRelation> {
    let f_in_pi = reward_in_policy_surrogates(f, pi, env)?;
    let pi_in_f = policy_surrogates_in_reward(pi, f, env)?;
    Ok(match (f_in_pi, pi_in_f) {
        (true, true) => ClassRelation::Isomorphic,
        (true, false) => ClassRelation::PolicyStronger,
        (false, true) => ClassRelation::RewardStronger,
        (false, false) => ClassRelation::Incomparable,
    })
}

/// Projection of a policy parameter onto its class constraint.
pub fn project_into_class(theta: &[f64], spec: &PolicyClassSpec, env: &FiniteBandit) -> Result<Vec<f64>> {
    spec.project(env, theta)
}

/// `beta (log pi/pi_ref (y) - log pi/pi_ref (y'))`.
pub fn log_ratio_coordinate(pi: &Distribution, env: &FiniteBandit, pair: (usize, usize)) -> f64 {
    let p = pi.probs();
    let q = env.pi_ref.probs();
    env.beta * (libm::log(p[pair.0] / q[pair.0]) - libm::log(p[pair.1] / q[pair.1]))
}

pub(crate) fn ball_project(theta: &[f64], bound: f64) -> Vec<f64> {
    let n = norm2(theta);
    if n <= bound {
        theta.to_vec()
    } else {
        theta.iter().map(|t| t * bound / n).collect()
    }
}
