//! Constrained logistic (Bradley-Terry) estimators on a fixed design:
//! maximum likelihood, lasso, best subset, and their variants centered at a
//! known offset.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classes::ball_project;
use crate::error::{domain, Error, Result};
use crate::math::{binomial, dot, log_sigmoid, norm2, sigmoid};

/// Winner-minus-loser feature differences, one row per comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDesign {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d`.
    pub diffs: Vec<f64>,
}

impl PreferenceDesign {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(domain("design has no rows"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(domain("design rows have different lengths"));
        }
        Ok(PreferenceDesign { n, d, diffs: rows.iter().flatten().copied().collect() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.diffs[i * self.d..(i + 1) * self.d]
    }

    /// The same comparisons with every label reversed.
    pub fn flipped(&self) -> Self {
        PreferenceDesign { n: self.n, d: self.d, diffs: self.diffs.iter().map(|x| -x).collect() }
    }

    /// `(1/n) X^T X`.
    pub fn gram(&self) -> GramMatrix {
        let d = self.d;
        let mut m = DMatrix::zeros(d, d);
        for i in 0..self.n {
            let r = self.row(i);
            for a in 0..d {
                for b in a..d {
                    m[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                m[(a, b)] /= self.n as f64;
                m[(b, a)] = m[(a, b)];
            }
        }
        GramMatrix(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(pub DMatrix<f64>);

impl GramMatrix {
    pub fn max_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().min()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Mle { bound: f64 },
    L1 { bound: f64, gamma: f64 },
    L0 { bound: f64, k: usize },
    RelL1 { bound: f64, gamma: f64, tau: Vec<f64> },
    RelL0 { bound: f64, k: usize, tau: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Prox-gradient residual at which the convex solvers stop.
    pub tol: f64,
    pub max_iters: usize,
    /// Supports beyond this count are refused.
    pub max_supports: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { tol: 1e-8, max_iters: 2_000_000, max_supports: 1e7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFit {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    /// Selected coordinates for the subset estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

/// `(1/n) sum -log σ(theta^T x_i)` and its gradient.
pub fn empirical_bt_loss(theta: &[f64], design: &PreferenceDesign) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut g = vec![0.0; design.d];
    let inv = 1.0 / design.n as f64;
    for i in 0..design.n {
        let x = design.row(i);
        let m = dot(theta, x);
        loss -= log_sigmoid(m);
        crate::math::axpy(-sigmoid(-m) * inv, x, &mut g);
    }
    (loss * inv, g)
}

/// `c sqrt((log d + log(1/delta)) / n)`.
pub fn gamma_schedule(n: usize, d: usize, delta: f64, c: f64) -> f64 {
    c * libm::sqrt((libm::log(d as f64) + libm::log(1.0 / delta)) / n as f64)
}

/// `(1/n) sum ((theta_hat - theta*)^T x_i)^2`.
pub fn semi_norm_sq(theta_hat: &[f64], theta_star: &[f64], design: &PreferenceDesign) -> f64 {
    let e: Vec<f64> = theta_hat.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    (0..design.n).map(|i| { let v = dot(&e, design.row(i)); v * v }).sum::<f64>() / design.n as f64
}

/// Soft thresholding `sign(v) max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Prox of `w |theta - tau|_1 + indicator(|theta| <= bound)`.
fn prox_rel_l1_ball(v: &[f64], tau: &[f64], w: f64, bound: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        v.iter()
            .zip(tau)
            .map(|(vi, ti)| ti + soft_threshold(vi / (1.0 + mu) - ti, w / (1.0 + mu)))
            .collect()
    };
    let x0 = at(0.0);
    if norm2(&x0) <= bound {
        return x0;
    }
    let mut hi = 1.0;
    while norm2(&at(hi)) > bound {
        hi *= 2.0;
        if hi > 1e300 {
            return ball_project(&x0, bound);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm2(&at(mid)) > bound {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    ball_project(&at(hi), bound)
}

/// Accelerated proximal gradient with adaptive restart on the smooth loss.
fn prox_gradient<P>(design: &PreferenceDesign, x0: &[f64], prox: P, penalty: &dyn Fn(&[f64]) -> f64, cfg: &FitConfig) -> Result<EstimatorFit>
where
    P: Fn(&[f64], f64) -> Vec<f64>,
{
    let lip = 0.25 * design.gram().max_eigenvalue();
    let t = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut x = prox(x0, t);
    let mut y = x.clone();
    let mut mom = 1.0f64;
    let mut last_obj = f64::INFINITY;
    for iter in 0..cfg.max_iters {
        let (_, g) = empirical_bt_loss(&y, design);
        let v: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - t * b).collect();
        let xn = prox(&v, t);
        let resid = norm2(&crate::math::sub(&y, &xn)) / t;
        let obj = empirical_bt_loss(&xn, design).0 + penalty(&xn);
        if resid <= cfg.tol {
            return Ok(EstimatorFit { theta: xn, loss: obj, iterations: iter, support: None });
        }
        let mn = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * mom * mom));
        if obj > last_obj {
            // Restart momentum from the previous iterate.
            mom = 1.0;
            y = x.clone();
            last_obj = f64::INFINITY;
            continue;
        }
        let beta = (mom - 1.0) / mn;
        y = xn.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = xn;
        mom = mn;
        last_obj = obj;
    }
    let (_, g) = empirical_bt_loss(&x, design);
    let v: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
    let resid = norm2(&crate::math::sub(&x, &prox(&v, t))) / t;
    Err(Error::NonConvergence { iterations: cfg.max_iters, grad_norm: resid })
}

/// Fits an estimator, starting the convex ones from the ball projection of `x0`.
pub fn fit_from(spec: &EstimatorSpec, design: &PreferenceDesign, x0: &[f64], cfg: &FitConfig) -> Result<EstimatorFit> {
    let d = design.d;
    if x0.len() != d {
        return Err(domain("initial point has the wrong dimension"));
    }
    let zeros = vec![0.0; d];
    match spec {
        EstimatorSpec::Mle { bound } => {
            check_bound(*bound)?;
            let b = *bound;
            prox_gradient(design, x0, |v, _| ball_project(v, b), &|_| 0.0, cfg)
        }
        EstimatorSpec::L1 { bound, gamma } => fit_rel_l1(design, x0, *bound, *gamma, &zeros, cfg),
        EstimatorSpec::RelL1 { bound, gamma, tau } => fit_rel_l1(design, x0, *bound, *gamma, tau, cfg),
        EstimatorSpec::L0 { bound, k } => best_subset(design, *bound, *k, &zeros, cfg),
        EstimatorSpec::RelL0 { bound, k, tau } => best_subset(design, *bound, *k, tau, cfg),
    }
}

pub fn fit(spec: &EstimatorSpec, design: &PreferenceDesign, cfg: &FitConfig) -> Result<EstimatorFit> {
    let start = match spec {
        EstimatorSpec::RelL1 { tau, .. } | EstimatorSpec::RelL0 { tau, .. } => tau.clone(),
        _ => vec![0.0; design.d],
    };
    fit_from(spec, design, &start, cfg)
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(domain("ball radius must be positive"));
    }
    Ok(())
}

fn fit_rel_l1(design: &PreferenceDesign, x0: &[f64], bound: f64, gamma: f64, tau: &[f64], cfg: &FitConfig) -> Result<EstimatorFit> {
    check_bound(bound)?;
    if tau.len() != design.d {
        return Err(domain("offset has the wrong dimension"));
    }
    if !(gamma >= 0.0) {
        return Err(domain("penalty must be nonnegative"));
    }
    let penalty = |x: &[f64]| gamma * x.iter().zip(tau).map(|(a, b)| (a - b).abs()).sum::<f64>();
    prox_gradient(design, x0, |v, t| prox_rel_l1_ball(v, tau, t * gamma, bound), &penalty, cfg)
}

/// Column-major copy of the design and the offset margins, shared by every support.
struct Columns {
    n: usize,
    cols: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

/// Loss and derivatives of one support at one point.
struct Eval {
    loss: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Columns {
    fn new(design: &PreferenceDesign, tau: &[f64]) -> Self {
        let cols = (0..design.d).map(|j| (0..design.n).map(|i| design.diffs[i * design.d + j]).collect()).collect();
        let offset = (0..design.n).map(|i| dot(tau, design.row(i))).collect();
        Columns { n: design.n, cols, offset }
    }

    fn margins(&self, s: &[usize], eta: &[f64], margins: &mut [f64]) {
        margins.copy_from_slice(&self.offset);
        for (c, e) in s.iter().zip(eta) {
            for (m, x) in margins.iter_mut().zip(&self.cols[*c]) {
                *m += e * x;
            }
        }
    }

    /// Loss, gradient and Hessian of `eta -> f(tau + eta_S)`. On return `q`
    /// holds `σ(-m_i)` for every row.
    fn eval(&self, s: &[usize], eta: &[f64], margins: &mut [f64], q: &mut [f64], need_hess: bool) -> Eval {
        let k = s.len();
        self.margins(s, eta, margins);
        let inv = 1.0 / self.n as f64;
        let mut loss = 0.0;
        for (m, qi) in margins.iter().zip(q.iter_mut()) {
            let e = libm::exp(-m.abs());
            let l1p = libm::log1p(e);
            if *m >= 0.0 {
                loss += l1p;
                *qi = e / (1.0 + e);
            } else {
                loss += l1p - m;
                *qi = 1.0 / (1.0 + e);
            }
        }
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for a in 0..k {
            let ca = &self.cols[s[a]];
            grad[a] = -inv * ca.iter().zip(q.iter()).map(|(x, qi)| x * qi).sum::<f64>();
            if need_hess {
                for b in a..k {
                    let cb = &self.cols[s[b]];
                    let v = inv * ca.iter().zip(cb).zip(q.iter()).map(|((x, y), qi)| x * y * qi * (1.0 - qi)).sum::<f64>();
                    hess[a * k + b] = v;
                    hess[b * k + a] = v;
                }
            }
        }
        Eval { loss: loss * inv, grad, hess }
    }

    /// Full gradient in every coordinate from the `q` left by `eval`.
    fn full_gradient(&self, q: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.n as f64;
        self.cols.iter().map(|c| -inv * c.iter().zip(q).map(|(x, qi)| x * qi).sum::<f64>()).collect()
    }
}

/// Convexity lower bound on the loss over `{tau + eta_T : |.| <= bound}`
/// from the linearization at `theta`: `f - g_T^T theta_T - rho_T |g_T|`.
fn linear_lower_bound(loss: f64, grad_t: &[f64], theta_t: &[f64], rho: f64) -> f64 {
    loss - dot(grad_t, theta_t) - rho * norm2(grad_t)
}

struct Scratch {
    margins: Vec<f64>,
    q: Vec<f64>,
}

enum SupportFit {
    /// No point of the support lies in the ball.
    Infeasible,
    /// The support provably cannot go below the cutoff.
    Pruned(Vec<f64>),
    Fitted(Vec<f64>, f64),
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Convex fit of `f(tau + eta_S)` subject to `|tau + eta_S| <= bound`,
/// abandoned as soon as a lower bound exceeds `cutoff`.
fn fit_support(
    cols: &Columns,
    s: &[usize],
    tau: &[f64],
    bound: f64,
    warm: &[f64],
    cutoff: f64,
    cfg: &FitConfig,
    sc: &mut Scratch,
) -> Result<SupportFit> {
    let k = s.len();
    let tau_s: Vec<f64> = s.iter().map(|j| tau[*j]).collect();
    let rest: f64 = tau.iter().map(|t| t * t).sum::<f64>() - tau_s.iter().map(|t| t * t).sum::<f64>();
    let r2 = bound * bound - rest;
    if r2 < 0.0 {
        return Ok(SupportFit::Infeasible);
    }
    let radius = libm::sqrt(r2.max(0.0));
    let norm_at = |e: &[f64]| libm::sqrt(tau_s.iter().zip(e).map(|(t, v)| (t + v) * (t + v)).sum::<f64>());
    let theta_at = |e: &[f64]| -> Vec<f64> { tau_s.iter().zip(e).map(|(t, v)| t + v).collect() };
    if k == 0 {
        let ev = cols.eval(s, &[], &mut sc.margins, &mut sc.q, false);
        return Ok(SupportFit::Fitted(Vec::new(), ev.loss));
    }
    let mut eta = warm.to_vec();
    if norm_at(&eta) > radius {
        eta = vec![0.0; k];
        if norm_at(&eta) > radius {
            eta = tau_s.iter().map(|t| -t).collect();
        }
    }
    let mut ev = cols.eval(s, &eta, &mut sc.margins, &mut sc.q, true);
    let mut newton_ok = true;
    let mut converged = false;
    for _ in 0..100 {
        if linear_lower_bound(ev.loss, &ev.grad, &theta_at(&eta), radius) > cutoff {
            return Ok(SupportFit::Pruned(eta));
        }
        if inf_norm(&ev.grad) <= 0.1 * cfg.tol {
            converged = true;
            break;
        }
        let hm = DMatrix::from_row_slice(k, k, &ev.hess);
        let step = match hm.cholesky() {
            Some(ch) => ch.solve(&DVector::from_column_slice(&ev.grad)),
            None => {
                newton_ok = false;
                break;
            }
        };
        let slope = -dot(&ev.grad, step.as_slice());
        if -slope <= 1e-15 * (1.0 + ev.loss.abs()) {
            // Newton decrement below round-off.
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand: Vec<f64> = eta.iter().zip(step.iter()).map(|(e, d)| e - t * d).collect();
            if norm_at(&cand) > radius {
                // The Newton path leaves the ball; finish on the boundary instead.
                break;
            }
            let ec = cols.eval(s, &cand, &mut sc.margins, &mut sc.q, true);
            if ec.loss <= ev.loss + 1e-4 * t * slope {
                eta = cand;
                ev = ec;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            newton_ok = inf_norm(&ev.grad) <= cfg.tol;
            break;
        }
    }
    if newton_ok && (converged || inf_norm(&ev.grad) <= cfg.tol) {
        // Leave `q` consistent with the returned point.
        let ev = cols.eval(s, &eta, &mut sc.margins, &mut sc.q, false);
        return Ok(SupportFit::Fitted(eta, ev.loss));
    }
    // Constrained case: the minimizer lies on the sphere. Solve the penalized
    // problem f + (mu/2)|tau_S + eta|^2 and bisect on mu until the norm matches.
    if radius == 0.0 {
        let eta: Vec<f64> = tau_s.iter().map(|t| -t).collect();
        let ev = cols.eval(s, &eta, &mut sc.margins, &mut sc.q, false);
        return Ok(SupportFit::Fitted(eta, ev.loss));
    }
    let mut lo = 0.0;
    let mut hi = 1e-3;
    let mut cur = eta.clone();
    loop {
        cur = penalized_newton(cols, s, &tau_s, hi, &cur, cfg, sc)?;
        if norm_at(&cur) <= radius {
            break;
        }
        lo = hi;
        hi *= 4.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence { iterations: 0, grad_norm: f64::NAN });
        }
    }
    let mut best = cur.clone();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        cur = penalized_newton(cols, s, &tau_s, mid, &best, cfg, sc)?;
        let nrm = norm_at(&cur);
        if nrm <= radius {
            hi = mid;
            best = cur.clone();
        } else {
            lo = mid;
        }
        if (nrm - radius).abs() <= 1e-12 * radius || hi - lo <= 1e-13 * hi {
            break;
        }
    }
    // Pull a hair-outside iterate back onto the sphere.
    let nrm = norm_at(&best);
    if nrm > radius {
        for (e, t) in best.iter_mut().zip(&tau_s) {
            *e = (t + *e) * radius / nrm - t;
        }
    }
    let ev = cols.eval(s, &best, &mut sc.margins, &mut sc.q, false);
    Ok(SupportFit::Fitted(best, ev.loss))
}

/// Damped Newton on `f(tau + eta_S) + (mu/2)|tau_S + eta|^2`.
fn penalized_newton(cols: &Columns, s: &[usize], tau_s: &[f64], mu: f64, start: &[f64], cfg: &FitConfig, sc: &mut Scratch) -> Result<Vec<f64>> {
    let k = s.len();
    let obj = |e: &[f64], sc: &mut Scratch| {
        let mut ev = cols.eval(s, e, &mut sc.margins, &mut sc.q, true);
        let mut pen = 0.0;
        for a in 0..k {
            let v = tau_s[a] + e[a];
            pen += v * v;
            ev.grad[a] += mu * v;
            ev.hess[a * k + a] += mu;
        }
        ev.loss += 0.5 * mu * pen;
        ev
    };
    let mut eta = start.to_vec();
    let mut ev = obj(&eta, sc);
    for it in 0..200 {
        if inf_norm(&ev.grad) <= 0.01 * cfg.tol {
            return Ok(eta);
        }
        let step = DMatrix::from_row_slice(k, k, &ev.hess)
            .cholesky()
            .ok_or(Error::NonConvergence { iterations: it, grad_norm: norm2(&ev.grad) })?
            .solve(&DVector::from_column_slice(&ev.grad));
        let slope = -dot(&ev.grad, step.as_slice());
        if -slope <= 1e-15 * (1.0 + ev.loss.abs()) {
            return Ok(eta);
        }
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = eta.iter().zip(step.iter()).map(|(e, d)| e - t * d).collect();
            let ec = obj(&cand, sc);
            if ec.loss <= ev.loss + 1e-4 * t * slope {
                eta = cand;
                ev = ec;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                // No representable decrease left; the iterate is as good as it gets.
                return Ok(eta);
            }
        }
    }
    Ok(eta)
}

/// Incumbent for the exhaustive search.
struct Best {
    loss: f64,
    norm: f64,
    support: Vec<usize>,
    theta: Vec<f64>,
}

impl Best {
    fn tol(&self) -> f64 {
        1e-12 * (1.0 + self.loss.abs())
    }

    /// Loss first, then smaller norm, then the lexicographically earlier support.
    fn offer(slot: &mut Option<Best>, loss: f64, s: &[usize], eta: &[f64], tau: &[f64]) {
        let mut theta = tau.to_vec();
        for (j, e) in s.iter().zip(eta) {
            theta[*j] += e;
        }
        let norm = norm2(&theta);
        let better = match slot {
            None => true,
            Some(b) => {
                let tol = b.tol();
                if loss < b.loss - tol {
                    true
                } else if loss > b.loss + tol {
                    false
                } else if (norm - b.norm).abs() > 1e-12 {
                    norm < b.norm
                } else {
                    s < b.support.as_slice()
                }
            }
        };
        if better {
            *slot = Some(Best { loss, norm, support: s.to_vec(), theta });
        }
    }

    fn cutoff(slot: &Option<Best>) -> f64 {
        slot.as_ref().map_or(f64::INFINITY, |b| b.loss + b.tol())
    }
}

/// A node of the support tree: the support, a starting point on it, the loss
/// and full gradient at that point when known, and a lower bound on its loss.
struct Node {
    support: Vec<usize>,
    warm: Vec<f64>,
    lower: f64,
    at_warm: Option<alloc::rc::Rc<(f64, Vec<f64>)>>,
}

/// Exhaustive best-subset search over supports of size at most `k`. Supports
/// are visited depth-first in lexicographic order, each warm-started from its
/// parent, after a greedy pass that supplies an incumbent. A support is skipped
/// only when a convexity lower bound proves it cannot beat the incumbent, so
/// the result is the exact constrained minimizer. Ties in loss go to the
/// smaller `|theta|`, then to the earlier support.
fn best_subset(design: &PreferenceDesign, bound: f64, k: usize, tau: &[f64], cfg: &FitConfig) -> Result<EstimatorFit> {
    check_bound(bound)?;
    let d = design.d;
    if tau.len() != d {
        return Err(domain("offset has the wrong dimension"));
    }
    if k > d {
        return Err(domain("sparsity level exceeds the dimension"));
    }
    let count: f64 = (0..=k).map(|j| binomial(d, j)).sum();
    if count > cfg.max_supports {
        return Err(Error::Resource(format!("{count} supports exceed the cap of {}", cfg.max_supports)));
    }
    let cols = Columns::new(design, tau);
    let mut sc = Scratch { margins: vec![0.0; design.n], q: vec![0.0; design.n] };
    let mut best: Option<Best> = None;
    let tau_sq: f64 = tau.iter().map(|t| t * t).sum();
    let radius_of = |s: &[usize]| {
        let r2 = bound * bound - tau_sq + s.iter().map(|j| tau[*j] * tau[*j]).sum::<f64>();
        if r2 < 0.0 { None } else { Some(libm::sqrt(r2)) }
    };

    // Greedy forward pass for a good incumbent.
    let mut s: Vec<usize> = Vec::new();
    let mut eta: Vec<f64> = Vec::new();
    if let SupportFit::Fitted(e, l) = fit_support(&cols, &s, tau, bound, &eta, f64::INFINITY, cfg, &mut sc)? {
        Best::offer(&mut best, l, &s, &e, tau);
    }
    for _ in 0..k {
        let mut step: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        for j in 0..d {
            if s.contains(&j) {
                continue;
            }
            let mut t = s.clone();
            t.push(j);
            t.sort_unstable();
            let pos = t.iter().position(|x| *x == j).unwrap_or(0);
            let mut w = eta.clone();
            w.insert(pos, 0.0);
            if let SupportFit::Fitted(e, l) = fit_support(&cols, &t, tau, bound, &w, f64::INFINITY, cfg, &mut sc)? {
                if step.as_ref().map_or(true, |(bl, _, _)| l < *bl) {
                    step = Some((l, t, e));
                }
            }
        }
        let Some((l, t, e)) = step else { break };
        Best::offer(&mut best, l, &t, &e, tau);
        s = t;
        eta = e;
    }

    let mut visited = 0usize;
    let mut stack = vec![Node { support: Vec::new(), warm: Vec::new(), lower: f64::NEG_INFINITY, at_warm: None }];
    while let Some(node) = stack.pop() {
        visited += 1;
        let cutoff = Best::cutoff(&best);
        let s = node.support;
        let (point, at_point) = if node.lower > cutoff {
            (node.warm, node.at_warm)
        } else {
            match fit_support(&cols, &s, tau, bound, &node.warm, cutoff, cfg, &mut sc)? {
                SupportFit::Infeasible => continue,
                SupportFit::Pruned(e) => (e, None),
                SupportFit::Fitted(e, l) => {
                    Best::offer(&mut best, l, &s, &e, tau);
                    (e, None)
                }
            }
        };
        if s.len() == k {
            continue;
        }
        let ctx = match at_point {
            Some(c) => c,
            None => {
                let ev = cols.eval(&s, &point, &mut sc.margins, &mut sc.q, false);
                alloc::rc::Rc::new((ev.loss, cols.full_gradient(&sc.q)))
            }
        };
        let (loss, g) = (&ctx.0, &ctx.1);
        let start = s.last().map_or(0, |l| l + 1);
        // Reverse push so that the smallest next index is explored first.
        for j in (start..d).rev() {
            let mut child = s.clone();
            child.push(j);
            let Some(rho) = radius_of(&child) else { continue };
            let mut w = point.clone();
            w.push(0.0);
            let gt: Vec<f64> = child.iter().map(|c| g[*c]).collect();
            let th: Vec<f64> = child.iter().zip(&w).map(|(c, e)| tau[*c] + e).collect();
            let lower = linear_lower_bound(*loss, &gt, &th, rho);
            stack.push(Node { support: child, warm: w, lower, at_warm: Some(ctx.clone()) });
        }
    }
    let b = best.ok_or_else(|| domain("no support intersects the ball"))?;
    Ok(EstimatorFit { theta: b.theta, loss: b.loss, iterations: visited, support: Some(b.support) })
}

/// `n` Gaussian comparisons in `R^d` with entries of standard deviation
/// `scale`, each labelled by a Bradley-Terry coin under `theta_star`.
pub fn sample_gaussian_design(theta_star: &[f64], n: usize, scale: f64, seed: u64) -> Result<PreferenceDesign> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    if n == 0 || theta_star.is_empty() || !(scale > 0.0) {
        return Err(domain("gaussian design needs n > 0, d > 0 and a positive scale"));
    }
    let mut rng = crate::bandit::seeded_rng(seed, 3);
    let d = theta_star.len();
    let mut diffs = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut x: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        if rng.random::<f64>() >= sigmoid(dot(theta_star, &x)) {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        diffs.extend(x);
    }
    Ok(PreferenceDesign { n, d, diffs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_matches_soft_threshold_inside_ball() {
        let v = [3.0, -0.2, 0.5];
        let tau = [0.0, 0.0, 1.0];
        let p = prox_rel_l1_ball(&v, &tau, 0.3, 100.0);
        assert_eq!(p, vec![2.7, 0.0, 0.8]);
    }

    #[test]
    fn prox_on_ball_boundary_satisfies_optimality() {
        let v = [3.0, 4.0];
        let tau = [0.5, 0.0];
        let w = 0.2;
        let p = prox_rel_l1_ball(&v, &tau, w, 1.0);
        assert!((norm2(&p) - 1.0).abs() < 1e-12);
        // Perturbing along the sphere should not decrease the prox objective.
        let obj = |x: &[f64]| {
            0.5 * ((x[0] - v[0]).powi(2) + (x[1] - v[1]).powi(2)) + w * ((x[0] - tau[0]).abs() + (x[1] - tau[1]).abs())
        };
        let a = libm::atan2(p[1], p[0]);
        for da in [-1e-3, 1e-3] {
            let q = [libm::cos(a + da), libm::sin(a + da)];
            assert!(obj(&q) >= obj(&p) - 1e-12);
        }
    }
}
