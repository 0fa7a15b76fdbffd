//! Finite single-prompt bandits with a KL-regularized objective and
//! Bradley-Terry preferences.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::math::{log_sum_exp, sigmoid};

/// Tolerance on `sum(p) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Feature vectors `psi(y)`, one per response, with `|psi(y)| <= norm_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
}

fn default_norm_bound() -> f64 {
    1.0
}

impl FeatureMap {
    pub fn new(vectors: Vec<Vec<f64>>, norm_bound: f64) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let fm = FeatureMap { dim, vectors, norm_bound };
        fm.validate()?;
        Ok(fm)
    }

    /// Indicator features; the induced linear class is every reward vector.
    pub fn one_hot(n: usize) -> Self {
        let vectors = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        FeatureMap { dim: n, vectors, norm_bound: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(domain(format!("feature {i} has length {} != {}", v.len(), self.dim)));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(domain(format!("feature {i} is not finite")));
            }
            if crate::math::norm2(v) > self.norm_bound + 1e-12 {
                return Err(domain(format!("feature {i} exceeds norm bound {}", self.norm_bound)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `psi(y)^T theta` for every response.
    pub fn apply(&self, theta: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|v| crate::math::dot(v, theta)).collect()
    }

    /// `sum_y w(y) psi(y)`, the transpose action.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        for (v, wi) in self.vectors.iter().zip(w) {
            crate::math::axpy(*wi, v, &mut out);
        }
        out
    }
}

/// A probability vector over responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(domain("empty distribution"));
        }
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(domain("distribution has negative or non-finite entries"));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL * (p.len() as f64).max(1.0) {
            return Err(domain(format!("distribution sums to {s}")));
        }
        Ok(Distribution(p))
    }

    /// Renormalizes a nonnegative vector.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) || w.iter().any(|x| *x < 0.0) {
            return Err(domain("weights must be nonnegative with positive sum"));
        }
        Ok(Distribution(w.iter().map(|x| x / s).collect()))
    }

    /// Softmax of log-weights.
    pub fn from_logits(z: &[f64]) -> Self {
        Distribution(crate::math::softmax(z))
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(alloc::vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_variation(&self, other: &Distribution) -> f64 {
        0.5 * self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = crate::Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Distribution::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Vec<f64> {
        d.0
    }
}

/// Reward values per response, optionally backed by linear coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
}

impl RewardVector {
    pub fn tabular(values: Vec<f64>) -> Self {
        RewardVector { values, coefficients: None }
    }

    /// `scale * psi(y)^T phi`.
    pub fn linear(features: &FeatureMap, phi: &[f64], scale: f64) -> Self {
        let values = features.apply(phi).into_iter().map(|v| scale * v).collect();
        RewardVector { values, coefficients: Some(phi.to_vec()) }
    }

    /// Shifted to zero mean under `weights`; rewards are defined modulo constants.
    pub fn centered(&self, weights: &Distribution) -> Vec<f64> {
        let m: f64 = self.values.iter().zip(weights.probs()).map(|(r, w)| r * w).sum();
        self.values.iter().map(|r| r - m).collect()
    }
}

/// A finite bandit: responses `0..n`, true reward, reference policy and `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteBandit {
    pub features: FeatureMap,
    pub r_star: RewardVector,
    pub pi_ref: Distribution,
    pub beta: f64,
}

impl FiniteBandit {
    pub fn new(features: FeatureMap, r_star: RewardVector, pi_ref: Distribution, beta: f64) -> Result<Self> {
        let env = FiniteBandit { features, r_star, pi_ref, beta };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let n = self.features.len();
        if n == 0 {
            return Err(domain("bandit has no responses"));
        }
        if self.r_star.values.len() != n || self.pi_ref.len() != n {
            return Err(domain("reward, reference and features disagree on the number of responses"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(domain("beta must be positive"));
        }
        if self.pi_ref.probs().iter().any(|p| *p <= 0.0) {
            return Err(domain("reference policy must have full support"));
        }
        if self.r_star.values.iter().any(|r| !r.is_finite()) {
            return Err(domain("reward is not finite"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn log_ref(&self) -> Vec<f64> {
        self.pi_ref.probs().iter().map(|p| libm::log(*p)).collect()
    }
}

/// An ordered comparison outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: usize,
    pub loser: usize,
}

impl PreferencePair {
    pub fn new(winner: usize, loser: usize) -> Result<Self> {
        if winner == loser {
            return Err(domain("a preference pair needs two distinct responses"));
        }
        Ok(PreferencePair { winner, loser })
    }
}

/// Weights over ordered pairs `(y, y')`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistribution {
    pub n: usize,
    pub weights: Vec<f64>,
}

impl PairDistribution {
    pub fn new(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(domain("pair weights must be n*n"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(domain("pair weights must be nonnegative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(domain(format!("pair weights sum to {s}")));
        }
        Ok(PairDistribution { n, weights })
    }

    /// `p(y) q(y')`.
    pub fn product(p: &Distribution, q: &Distribution) -> Self {
        let n = p.len();
        let mut weights = Vec::with_capacity(n * n);
        for a in p.probs() {
            for b in q.probs() {
                weights.push(a * b);
            }
        }
        PairDistribution { n, weights }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// `(mu + mu^T) / 2`; the pairwise losses only see this part.
    pub fn symmetrized(&self) -> Self {
        let n = self.n;
        let mut weights = alloc::vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weights[i * n + j] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        PairDistribution { n, weights }
    }
}

/// `KL(p || q)`; fails when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(domain("distributions have different lengths"));
    }
    let mut kl = 0.0;
    for (a, b) in p.probs().iter().zip(q.probs()) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return Err(domain("support of p is not contained in support of q"));
            }
            kl += a * libm::log(a / b);
        }
    }
    Ok(kl.max(0.0))
}

/// `E_pi[r] - beta KL(pi || pi_ref)` for an arbitrary reward vector.
pub fn value_under(env: &FiniteBandit, reward: &[f64], pi: &Distribution) -> Result<f64> {
    let mean: f64 = pi.probs().iter().zip(reward).map(|(p, r)| p * r).sum();
    Ok(mean - env.beta * kl_divergence(pi, &env.pi_ref)?)
}

/// `V_{r*}(pi)`.
pub fn regularized_value(env: &FiniteBandit, pi: &Distribution) -> Result<f64> {
    value_under(env, &env.r_star.values, pi)
}

/// `pi(y) ∝ pi_ref(y) exp(r(y)/beta)`.
pub fn optimal_policy(env: &FiniteBandit, reward: &[f64]) -> Distribution {
    let z: Vec<f64> = env
        .log_ref()
        .iter()
        .zip(reward)
        .map(|(l, r)| l + r / env.beta)
        .collect();
    Distribution::from_logits(&z)
}

/// `beta log E_{pi_ref} exp(r/beta)`, the optimal regularized value.
pub fn optimal_value(env: &FiniteBandit, reward: &[f64]) -> f64 {
    let z: Vec<f64> = env
        .log_ref()
        .iter()
        .zip(reward)
        .map(|(l, r)| l + r / env.beta)
        .collect();
    env.beta * log_sum_exp(&z)
}

/// `P(y ≻ y') = σ(r(y) - r(y'))`.
pub fn bt_preference_prob(reward: &[f64], y: usize, y_prime: usize) -> f64 {
    sigmoid(reward[y] - reward[y_prime])
}

/// Seeded generator for stream `stream` of run `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` labelled comparisons: `(y, y') ~ mu`, then a Bradley-Terry coin under `r*`.
pub fn sample_preferences(
    env: &FiniteBandit,
    mu: &PairDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if mu.n != env.n() {
        return Err(domain("pair distribution size does not match the bandit"));
    }
    if (0..mu.n).any(|i| mu.get(i, i) > 0.0) {
        return Err(domain("pair distribution places mass on identical responses"));
    }
    let mut cdf = Vec::with_capacity(mu.weights.len());
    let mut acc = 0.0;
    for w in &mu.weights {
        acc += w;
        cdf.push(acc);
    }
    let mut rng = seeded_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
        let (y, yp) = (idx / mu.n, idx % mu.n);
        let p = bt_preference_prob(&env.r_star.values, y, yp);
        let pair = if rng.random::<f64>() < p {
            PreferencePair { winner: y, loser: yp }
        } else {
            PreferencePair { winner: yp, loser: y }
        };
        out.push(pair);
    }
    Ok(out)
}
