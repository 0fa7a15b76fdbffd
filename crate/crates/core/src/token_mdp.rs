//! Deterministic token-level MDPs over a prefix tree, soft backward induction,
//! and the dense-to-sparse bandit used in the estimation experiments.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::seeded_rng;
use crate::error::{domain, unsupported, Error, Result};
use crate::estimators::PreferenceDesign;
use crate::math::{binomial, dot, log_sum_exp, norm2, sigmoid};

/// Largest prefix tree that will be materialized.
pub const MAX_NODES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalRule {
    /// Every sequence has exactly `horizon` tokens.
    FixedLength,
    /// Sequences end at `token` or after `horizon` tokens.
    TerminalToken { token: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    /// `usize::MAX` for the root.
    pub parent: usize,
    pub token: usize,
    pub depth: usize,
    /// Index of the first child; children are contiguous, one per token.
    pub first_child: usize,
    pub terminal: bool,
}

/// A prefix tree with reference conditionals on edges and rewards at leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMdp {
    pub vocab: usize,
    pub horizon: usize,
    pub rule: TerminalRule,
    pub beta: f64,
    pub nodes: Vec<Node>,
    /// `pi_ref(token | parent prefix)` for every non-root node.
    pub ref_prob: Vec<f64>,
    /// `r*(y)` at terminal nodes, zero elsewhere.
    pub terminal_reward: Vec<f64>,
    /// Per-token rewards whose path sums give `terminal_reward`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_reward: Option<Vec<f64>>,
}

/// `q*` per node; the root entry holds the optimal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable(pub Vec<f64>);

/// `v*` per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VTable(pub Vec<f64>);

fn build_tree(vocab: usize, horizon: usize, rule: TerminalRule) -> Result<Vec<Node>> {
    if vocab == 0 || horizon == 0 {
        return Err(domain("vocabulary and horizon must be positive"));
    }
    if let TerminalRule::TerminalToken { token } = rule {
        if token >= vocab {
            return Err(domain("terminal token out of range"));
        }
    }
    let mut nodes = vec![Node { parent: usize::MAX, token: 0, depth: 0, first_child: 0, terminal: false }];
    let mut i = 0;
    while i < nodes.len() {
        if !nodes[i].terminal {
            if nodes.len() + vocab > MAX_NODES {
                return Err(Error::Resource(format!("prefix tree exceeds {MAX_NODES} nodes")));
            }
            let first = nodes.len();
            nodes[i].first_child = first;
            let depth = nodes[i].depth + 1;
            for token in 0..vocab {
                let terminal = depth == horizon
                    || matches!(rule, TerminalRule::TerminalToken { token: t } if t == token);
                nodes.push(Node { parent: i, token, depth, first_child: 0, terminal });
            }
        }
        i += 1;
    }
    Ok(nodes)
}

impl TokenMdp {
    /// Builds the tree and fills in `pi_ref` and per-token rewards from callbacks
    /// that receive the prefix (for `reference`) or the prefix ending in the token.
    pub fn from_token_rewards<R, T>(
        vocab: usize,
        horizon: usize,
        rule: TerminalRule,
        beta: f64,
        mut reference: R,
        mut token_reward: T,
    ) -> Result<Self>
    where
        R: FnMut(&[usize]) -> Vec<f64>,
        T: FnMut(&[usize]) -> f64,
    {
        let nodes = build_tree(vocab, horizon, rule)?;
        let mut mdp = TokenMdp {
            vocab,
            horizon,
            rule,
            beta,
            ref_prob: vec![1.0; nodes.len()],
            terminal_reward: vec![0.0; nodes.len()],
            token_reward: None,
            nodes,
        };
        let mut tok = vec![0.0; mdp.nodes.len()];
        let mut cum = vec![0.0; mdp.nodes.len()];
        for i in 0..mdp.nodes.len() {
            let node = mdp.nodes[i];
            if i > 0 {
                let seq = mdp.sequence(i);
                tok[i] = token_reward(&seq);
                cum[i] = cum[node.parent] + tok[i];
                if node.terminal {
                    mdp.terminal_reward[i] = cum[i];
                }
            }
            if !node.terminal {
                let probs = reference(&mdp.sequence(i));
                if probs.len() != vocab {
                    return Err(domain("reference conditional has the wrong length"));
                }
                for (t, p) in probs.into_iter().enumerate() {
                    mdp.ref_prob[node.first_child + t] = p;
                }
            }
        }
        mdp.token_reward = Some(tok);
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds the tree with rewards given only on complete sequences.
    pub fn from_terminal_rewards<R, T>(
        vocab: usize,
        horizon: usize,
        rule: TerminalRule,
        beta: f64,
        reference: R,
        mut reward: T,
    ) -> Result<Self>
    where
        R: FnMut(&[usize]) -> Vec<f64>,
        T: FnMut(&[usize]) -> f64,
    {
        let mut mdp = Self::from_token_rewards(vocab, horizon, rule, beta, reference, |_| 0.0)?;
        for i in 0..mdp.nodes.len() {
            if mdp.nodes[i].terminal {
                mdp.terminal_reward[i] = reward(&mdp.sequence(i));
            }
        }
        mdp.token_reward = None;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(domain("beta must be positive"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.terminal {
                continue;
            }
            let kids = &self.ref_prob[node.first_child..node.first_child + self.vocab];
            let s: f64 = kids.iter().sum();
            if kids.iter().any(|p| !(*p > 0.0)) || (s - 1.0).abs() > 1e-10 {
                return Err(domain(format!("reference conditional at node {i} is not a full-support distribution")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tokens on the path from the root to `node`.
    pub fn sequence(&self, mut node: usize) -> Vec<usize> {
        let mut seq = Vec::with_capacity(self.nodes[node].depth);
        while node != 0 {
            seq.push(self.nodes[node].token);
            node = self.nodes[node].parent;
        }
        seq.reverse();
        seq
    }

    pub fn terminals(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|i| self.nodes[*i].terminal)
    }

    fn children(&self, node: usize) -> core::ops::Range<usize> {
        let f = self.nodes[node].first_child;
        f..f + self.vocab
    }

    /// Product of `cond` along the path to `node`.
    pub fn path_probability(&self, cond: &[f64], mut node: usize) -> f64 {
        let mut p = 1.0;
        while node != 0 {
            p *= cond[node];
            node = self.nodes[node].parent;
        }
        p
    }

    /// Sum of per-token rewards on the path to `node`.
    pub fn prefix_reward(&self, mut node: usize) -> Result<f64> {
        let tok = self.token_reward.as_ref().ok_or_else(|| unsupported("reward is not given per token"))?;
        let mut s = 0.0;
        while node != 0 {
            s += tok[node];
            node = self.nodes[node].parent;
        }
        Ok(s)
    }
}

/// Soft backward induction on `q*`.
pub fn compute_q_star(mdp: &TokenMdp) -> QTable {
    let b = mdp.beta;
    let mut q = vec![0.0; mdp.len()];
    let mut buf = Vec::with_capacity(mdp.vocab);
    for i in (0..mdp.len()).rev() {
        let node = mdp.nodes[i];
        if node.terminal {
            q[i] = mdp.terminal_reward[i];
        } else {
            buf.clear();
            buf.extend(mdp.children(i).map(|c| libm::log(mdp.ref_prob[c]) + q[c] / b));
            q[i] = b * log_sum_exp(&buf);
        }
    }
    QTable(q)
}

/// Soft backward induction on `v*`; needs per-token rewards.
pub fn compute_v_star(mdp: &TokenMdp) -> Result<VTable> {
    let tok = mdp.token_reward.as_ref().ok_or_else(|| unsupported("reward does not decompose over tokens"))?;
    let b = mdp.beta;
    let mut v = vec![0.0; mdp.len()];
    let mut buf = Vec::with_capacity(mdp.vocab);
    for i in (0..mdp.len()).rev() {
        if !mdp.nodes[i].terminal {
            buf.clear();
            buf.extend(mdp.children(i).map(|c| libm::log(mdp.ref_prob[c]) + (tok[c] + v[c]) / b));
            v[i] = b * log_sum_exp(&buf);
        }
    }
    Ok(VTable(v))
}

/// `pi*(token | prefix) ∝ pi_ref exp(q*/beta)`, one entry per non-root node.
pub fn tokenwise_optimal_policy(mdp: &TokenMdp, q: &QTable) -> Vec<f64> {
    let mut cond = vec![1.0; mdp.len()];
    let mut buf = Vec::with_capacity(mdp.vocab);
    for i in 0..mdp.len() {
        if mdp.nodes[i].terminal {
            continue;
        }
        buf.clear();
        buf.extend(mdp.children(i).map(|c| libm::log(mdp.ref_prob[c]) + q.0[c] / mdp.beta));
        let lse = log_sum_exp(&buf);
        for (k, c) in mdp.children(i).enumerate() {
            cond[c] = libm::exp(buf[k] - lse);
        }
    }
    cond
}

/// `V(pi) = E_pi[r*] - beta KL(pi || pi_ref)` for a policy given by conditionals.
pub fn evaluate_policy(mdp: &TokenMdp, cond: &[f64]) -> f64 {
    let mut prob = vec![0.0; mdp.len()];
    let mut logratio = vec![0.0; mdp.len()];
    prob[0] = 1.0;
    let mut v = 0.0;
    for i in 1..mdp.len() {
        let p = mdp.nodes[i].parent;
        prob[i] = prob[p] * cond[i];
        logratio[i] = logratio[p] + if cond[i] > 0.0 { libm::log(cond[i] / mdp.ref_prob[i]) } else { 0.0 };
        if mdp.nodes[i].terminal && prob[i] > 0.0 {
            v += prob[i] * (mdp.terminal_reward[i] - mdp.beta * logratio[i]);
        }
    }
    v
}

/// `KL(pi || pi')` between sequence laws given by conditionals.
pub fn sequence_kl(mdp: &TokenMdp, cond: &[f64], other: &[f64]) -> f64 {
    let mut prob = vec![0.0; mdp.len()];
    prob[0] = 1.0;
    let mut kl = 0.0;
    for i in 1..mdp.len() {
        let p = mdp.nodes[i].parent;
        prob[i] = prob[p] * cond[i];
        if cond[i] > 0.0 {
            kl += prob[i] * libm::log(cond[i] / other[i]);
        }
    }
    kl
}

/// Sequence-level optimum `pi_ref(y) exp(r*(y)/beta) / Z` at every terminal node.
pub fn global_optimal_policy(mdp: &TokenMdp) -> Vec<(usize, f64)> {
    let terms: Vec<usize> = mdp.terminals().collect();
    let logits: Vec<f64> = terms
        .iter()
        .map(|t| libm::log(mdp.path_probability(&mdp.ref_prob, *t)) + mdp.terminal_reward[*t] / mdp.beta)
        .collect();
    let lse = log_sum_exp(&logits);
    terms.into_iter().zip(logits).map(|(t, l)| (t, libm::exp(l - lse))).collect()
}

/// A random tree with Dirichlet-like reference conditionals and per-token rewards.
pub fn random_token_mdp(vocab: usize, horizon: usize, rule: TerminalRule, beta: f64, seed: u64) -> Result<TokenMdp> {
    let mut rng = seeded_rng(seed, 1);
    let mut refs = Vec::new();
    let mut rewards = Vec::new();
    let probe = build_tree(vocab, horizon, rule)?;
    for node in &probe {
        if !node.terminal {
            let w: Vec<f64> = (0..vocab).map(|_| 0.05 + rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            refs.push(w.into_iter().map(|x| x / s).collect::<Vec<f64>>());
        }
    }
    for _ in 1..probe.len() {
        rewards.push(2.0 * rng.random::<f64>() - 1.0);
    }
    let mut ri = 0;
    let mut ti = 0;
    TokenMdp::from_token_rewards(
        vocab,
        horizon,
        rule,
        beta,
        |_| {
            ri += 1;
            refs[ri - 1].clone()
        },
        |_| {
            ti += 1;
            rewards[ti - 1]
        },
    )
}

/// Knobs of the dense-to-sparse environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtspConfig {
    pub d: usize,
    pub k: usize,
    /// Vocabulary size; `2d` when absent.
    #[serde(default)]
    pub vocab: Option<usize>,
    /// Feature norms are `L u` with `u ~ U(0.5, 1)`.
    pub feature_bound: f64,
    /// Radius of the parameter ball.
    pub ball: f64,
    pub beta: f64,
    /// Standard deviation of the nonzero entries of `r_sparse`.
    pub sparse_scale: f64,
    /// Target norm of `r_dense`.
    pub dense_norm: f64,
    pub seed: u64,
}

/// Smallest and largest eigenvalues of `Sigma_D` restricted to sampled supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub support_size: usize,
    pub supports_checked: usize,
    pub exhaustive: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub worst_condition_number: f64,
}

/// The dense-to-sparse bandit: `y = (a, b)`,
/// `r*(a,b) = beta r_sparse^T psi(a) + beta e1^T psi(a,b)` with
/// `psi(a,b) = psi(b) + (r_dense^T psi(a)) e1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtspEnv {
    pub config: DtspConfig,
    pub vocab: usize,
    pub psi: Vec<Vec<f64>>,
    pub r_sparse: Vec<f64>,
    pub r_dense: Vec<f64>,
    pub support: Vec<usize>,
    pub gram: GramReport,
}

impl DtspEnv {
    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    fn e1(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.d()];
        e[0] = 1.0;
        e
    }

    /// `e1 + r_dense + r_sparse`, the parameter behind first-token preferences.
    pub fn theta_total(&self) -> Vec<f64> {
        let mut t = self.e1();
        for j in 0..self.d() {
            t[j] += self.r_dense[j] + self.r_sparse[j];
        }
        t
    }

    /// `e1 + r_dense`, the known offset of the reward-model parameterization.
    pub fn reward_offset(&self) -> Vec<f64> {
        let mut t = self.e1();
        for j in 0..self.d() {
            t[j] += self.r_dense[j];
        }
        t
    }

    /// The reward-model first-token target `r_sparse`.
    pub fn reward_target(&self) -> Vec<f64> {
        self.r_sparse.clone()
    }

    /// The policy first-token target `r_sparse + r_dense`.
    pub fn policy_target(&self) -> Vec<f64> {
        (0..self.d()).map(|j| self.r_sparse[j] + self.r_dense[j]).collect()
    }

    pub fn pair_feature(&self, a: usize, b: usize) -> Vec<f64> {
        let mut f = self.psi[b].clone();
        f[0] += dot(&self.r_dense, &self.psi[a]);
        f
    }

    /// `r*(a, b)`.
    pub fn reward(&self, a: usize, b: usize) -> f64 {
        let beta = self.beta();
        beta * dot(&self.r_sparse, &self.psi[a]) + beta * self.pair_feature(a, b)[0]
    }

    /// Token MDP for the reward with first-token parameter `theta0` and second-token
    /// parameter `e1`; `theta0 = r_sparse` gives the true reward.
    pub fn token_mdp(&self, theta0: &[f64]) -> Result<TokenMdp> {
        let v = self.vocab;
        let beta = self.beta();
        TokenMdp::from_token_rewards(
            v,
            2,
            TerminalRule::FixedLength,
            beta,
            |_| vec![1.0 / v as f64; v],
            |seq| match seq {
                [a] => beta * dot(theta0, &self.psi[*a]),
                [a, b] => beta * self.pair_feature(*a, *b)[0],
                _ => 0.0,
            },
        )
    }

    /// Conditionals of the log-linear token policy with first-token parameter
    /// `theta0` and second-token parameter `e1`.
    pub fn loglinear_policy(&self, mdp: &TokenMdp, theta0: &[f64]) -> Vec<f64> {
        let v = self.vocab;
        let mut cond = vec![1.0; mdp.len()];
        let first: Vec<f64> = (0..v).map(|a| dot(theta0, &self.psi[a])).collect();
        let lse = log_sum_exp(&first);
        for a in 0..v {
            let node = 1 + a;
            cond[node] = libm::exp(first[a] - lse);
            let second: Vec<f64> = (0..v).map(|b| self.pair_feature(a, b)[0]).collect();
            let l2 = log_sum_exp(&second);
            let fc = mdp.nodes[node].first_child;
            for b in 0..v {
                cond[fc + b] = libm::exp(second[b] - l2);
            }
        }
        cond
    }

    /// Samples `n` duplicated-pair comparisons `(a, a)` vs `(a', a')` with
    /// `a != a'` uniform and Bradley-Terry labels from the full reward. Rows are
    /// winner-minus-loser `beta (psi(a_w) - psi(a_l))`.
    pub fn sample_design(&self, n: usize, seed: u64, stream: u64) -> Result<PreferenceDesign> {
        if n == 0 || self.vocab < 2 {
            return Err(domain("need at least one comparison and two tokens"));
        }
        let mut rng = seeded_rng(seed, stream);
        let theta = self.theta_total();
        let beta = self.beta();
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let a = rng.random_range(0..self.vocab);
            let b = (a + rng.random_range(1..self.vocab)) % self.vocab;
            let x: Vec<f64> = self.psi[a].iter().zip(&self.psi[b]).map(|(p, q)| beta * (p - q)).collect();
            let first_wins = rng.random::<f64>() < sigmoid(dot(&theta, &x));
            rows.push(if first_wins { x } else { x.into_iter().map(|v| -v).collect() });
        }
        PreferenceDesign::new(&rows)
    }

    /// Population second moment of `psi(a) - psi(a')` over distinct uniform pairs.
    pub fn population_gram(&self) -> DMatrix<f64> {
        let v = self.vocab as f64;
        let d = self.d();
        let mut mean = vec![0.0; d];
        for p in &self.psi {
            crate::math::axpy(1.0 / v, p, &mut mean);
        }
        let mut cov = DMatrix::zeros(d, d);
        for p in &self.psi {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += c[i] * c[j] / v;
                }
            }
        }
        cov * (2.0 * v / (v - 1.0))
    }
}

fn gram_report(gram: &DMatrix<f64>, size: usize, seed: u64) -> GramReport {
    let d = gram.nrows();
    let size = size.min(d).max(1);
    let exhaustive = binomial(d, size) <= 1e5;
    let mut supports: Vec<Vec<usize>> = Vec::new();
    if exhaustive {
        let mut s: Vec<usize> = (0..size).collect();
        loop {
            supports.push(s.clone());
            if !next_combination(&mut s, d) {
                break;
            }
        }
    } else {
        let mut rng = seeded_rng(seed, 7);
        for _ in 0..200 {
            let mut s = sample(&mut rng, d, size).into_vec();
            s.sort_unstable();
            supports.push(s);
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut cond: f64 = 0.0;
    for s in &supports {
        let sub = DMatrix::from_fn(size, size, |i, j| gram[(s[i], s[j])]);
        let ev = sub.symmetric_eigenvalues();
        let mn = ev.min();
        let mx = ev.max();
        lo = lo.min(mn);
        hi = hi.max(mx);
        cond = cond.max(if mn > 0.0 { mx / mn } else { f64::INFINITY });
    }
    GramReport {
        support_size: size,
        supports_checked: supports.len(),
        exhaustive,
        min_eigenvalue: lo,
        max_eigenvalue: hi,
        worst_condition_number: cond,
    }
}

/// Advances `s` to the next `k`-subset of `0..n` in lexicographic order.
pub fn next_combination(s: &mut [usize], n: usize) -> bool {
    let k = s.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if s[i] < n - k + i {
            s[i] += 1;
            for j in i + 1..k {
                s[j] = s[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Samples a dense-to-sparse environment.
///
/// Features are Gaussian directions scaled to norm `L u`. The reward parts are
/// shrunk jointly, if needed, until `r_dense`, `r_sparse` and
/// `e1 + r_dense + r_sparse` all lie in the ball.
pub fn make_dtsp_env(config: &DtspConfig) -> Result<DtspEnv> {
    let d = config.d;
    let k = config.k;
    if d == 0 || k > d {
        return Err(domain("need 0 <= k <= d and d > 0"));
    }
    if !(config.beta > 0.0) || !(config.feature_bound > 0.0) || !(config.ball > 1.0) {
        return Err(domain("beta and L must be positive and the ball radius must exceed 1"));
    }
    let vocab = config.vocab.unwrap_or(2 * d);
    if vocab < 2 {
        return Err(domain("vocabulary needs at least two tokens"));
    }
    let mut rng = seeded_rng(config.seed, 3);
    let mut psi = Vec::with_capacity(vocab);
    for _ in 0..vocab {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u = 0.5 + 0.5 * rng.random::<f64>();
        let n = norm2(&g).max(1e-300);
        psi.push(g.into_iter().map(|x| x * config.feature_bound * u / n).collect::<Vec<f64>>());
    }
    let mut support = sample(&mut rng, d, k).into_vec();
    support.sort_unstable();
    let mut r_sparse = vec![0.0; d];
    for &j in &support {
        let z: f64 = StandardNormal.sample(&mut rng);
        // Keep every sparse coefficient away from zero so the support is identifiable.
        r_sparse[j] = config.sparse_scale * z.signum() * (0.5 + z.abs());
    }
    let dense: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let dn = norm2(&dense).max(1e-300);
    let mut r_dense: Vec<f64> = dense.into_iter().map(|x| x * config.dense_norm / dn).collect();

    let fits = |rs: &[f64], rd: &[f64]| {
        let mut t = rs.to_vec();
        t[0] += 1.0;
        for j in 0..d {
            t[j] += rd[j];
        }
        norm2(rs) <= config.ball && norm2(rd) <= config.ball && norm2(&t) <= config.ball
    };
    let mut shrink = 1.0;
    while !fits(&r_sparse, &r_dense) {
        shrink *= 0.95;
        if shrink < 1e-6 {
            return Err(domain("could not fit reward parameters in the ball"));
        }
        r_sparse.iter_mut().for_each(|x| *x *= 0.95);
        r_dense.iter_mut().for_each(|x| *x *= 0.95);
    }
    let mut env = DtspEnv {
        config: config.clone(),
        vocab,
        psi,
        r_sparse,
        r_dense,
        support,
        gram: GramReport {
            support_size: 0,
            supports_checked: 0,
            exhaustive: true,
            min_eigenvalue: 0.0,
            max_eigenvalue: 0.0,
            worst_condition_number: 0.0,
        },
    };
    let gram = env.population_gram();
    env.gram = gram_report(&gram, 2 * k.max(1), config.seed);
    if !(env.gram.min_eigenvalue > 1e-12) {
        return Err(domain("restricted Gram matrix is singular on a sampled support"));
    }
    Ok(env)
}
