//! Projected gradient descent with Armijo backtracking.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm2, sub};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// First trial step.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once `|x - P(x - grad)|` falls below this.
    pub grad_tol: f64,
    /// Backtracking factor.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Each iteration's first trial is the last accepted step times this.
    pub grow: f64,
    pub max_step: f64,
    /// Consecutive loss increases that count as divergence (online loops).
    pub divergence_window: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 1.0,
            max_iters: 200_000,
            grad_tol: 1e-8,
            shrink: 0.5,
            armijo: 1e-4,
            grow: 2.0,
            max_step: 1e8,
            divergence_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    /// Projected-gradient residual at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    /// True when the line search could not find any further decrease.
    pub stalled: bool,
}

/// Residual `|x - P(x - g)|`, zero exactly at constrained stationary points.
pub fn projected_residual<P>(x: &[f64], g: &[f64], project: &P) -> Result<f64>
where
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    Ok(norm2(&sub(x, &project(&trial)?)))
}

/// Minimizes `f` over the image of `project`. `f` returns value and gradient.
///
/// A stalled line search means no representable decrease remains along the
/// projected direction; the current point is returned in that case.
pub fn minimize<F, P>(mut f: F, x0: &[f64], project: P, cfg: &OptimizerConfig) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = project(x0)?;
    let (mut fx, mut g) = f(&x);
    let mut t = cfg.step_size;
    let mut first = true;
    for iter in 0..cfg.max_iters {
        let r = projected_residual(&x, &g, &project)?;
        if r <= cfg.grad_tol {
            return Ok(Outcome { x, value: fx, grad_norm: r, iterations: iter, stalled: false });
        }
        if !first {
            t = (t * cfg.grow).min(cfg.max_step);
        }
        first = false;
        loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let xn = project(&trial)?;
            let step = sub(&xn, &x);
            let decrease = dot(&g, &step);
            if decrease >= 0.0 || step.iter().all(|s| *s == 0.0) {
                return Ok(Outcome { x, value: fx, grad_norm: r, iterations: iter, stalled: true });
            }
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + cfg.armijo * decrease {
                x = xn;
                fx = fn_;
                g = gn;
                break;
            }
            t *= cfg.shrink;
            if t < 1e-30 {
                return Ok(Outcome { x, value: fx, grad_norm: r, iterations: iter, stalled: true });
            }
        }
    }
    let r = projected_residual(&x, &g, &project)?;
    if r <= cfg.grad_tol {
        return Ok(Outcome { x, value: fx, grad_norm: r, iterations: cfg.max_iters, stalled: false });
    }
    Err(Error::NonConvergence { iterations: cfg.max_iters, grad_norm: r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_in_halfspace_lands_on_boundary() {
        let f = |x: &[f64]| (x[0] * x[0] + x[1] * x[1], vec![2.0 * x[0], 2.0 * x[1]]);
        let proj = |x: &[f64]| -> Result<Vec<f64>> {
            let s = 2.0 - (x[0] + x[1]);
            Ok(if s > 0.0 { vec![x[0] + s / 2.0, x[1] + s / 2.0] } else { x.to_vec() })
        };
        let out = minimize(f, &[5.0, -3.0], proj, &OptimizerConfig::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn budget_exhaustion_reports_gradient() {
        let f = |x: &[f64]| (libm::cosh(x[0]), vec![libm::sinh(x[0])]);
        let cfg = OptimizerConfig { max_iters: 1, grow: 1.0, step_size: 1e-6, ..Default::default() };
        match minimize(f, &[3.0], |x: &[f64]| Ok(x.to_vec()), &cfg) {
            Err(Error::NonConvergence { grad_norm, .. }) => assert!(grad_norm > 1.0),
            other => panic!("{other:?}"),
        }
    }
}
