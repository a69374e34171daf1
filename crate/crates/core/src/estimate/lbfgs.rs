//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! The objective is supplied as separate value and gradient closures so the
//! caller can use finite-difference gradients (and parallelize them). An
//! evaluation may return a non-finite value; the line search treats that as
//! a rejected step. Curvature pairs with non-positive s'y are skipped to
//! keep the inverse-Hessian approximation positive definite.

use std::collections::VecDeque;

/// Optimizer settings. Convergence requires both the gradient and the
/// relative objective-change criteria.
#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Converged when the gradient infinity norm drops to or below this.
    pub gradient_tolerance: f64,
    /// ... and the relative objective change drops to or below this.
    pub objective_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 600,
            gradient_tolerance: 1e-5,
            objective_tolerance: 1e-10,
        }
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Both tolerances were met.
    Converged,
    IterationLimit,
    /// No acceptable step existed along the search direction.
    LineSearchFailed,
    /// The objective or gradient was non-finite at the starting point.
    NonFiniteStart,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f` starting from `x0`.
pub fn minimize<F, G>(f: F, grad: G, x0: Vec<f64>, cfg: &LbfgsConfig) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            gradient_norm: f64::INFINITY,
            iterations: 0,
            reason: StopReason::NonFiniteStart,
        };
    }
    let mut g = grad(&x);
    if g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            value: fx,
            gradient_norm: f64::INFINITY,
            iterations: 0,
            reason: StopReason::NonFiniteStart,
        };
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new(); // (s, y, 1/s'y)
    let mut gamma = 1.0f64;
    let mut last_rel_change: Option<f64> = None;

    for iteration in 1..=cfg.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm <= cfg.gradient_tolerance
            && last_rel_change.is_none_or(|r| r <= cfg.objective_tolerance)
        {
            return Minimum {
                x,
                value: fx,
                gradient_norm: gnorm,
                iterations: iteration - 1,
                reason: StopReason::Converged,
            };
        }

        // two-loop recursion for d = -H g
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        for i in 0..n {
            d[i] *= gamma;
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += (a - b) * s[i];
            }
        }

        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            // not a descent direction; drop the memory and take steepest descent
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
            if !(dg < 0.0) {
                // gradient is (numerically) zero: stationary point, and the
                // objective cannot change from here
                let reason = if gnorm <= cfg.gradient_tolerance {
                    StopReason::Converged
                } else {
                    StopReason::LineSearchFailed
                };
                return Minimum {
                    x,
                    value: fx,
                    gradient_norm: gnorm,
                    iterations: iteration - 1,
                    reason,
                };
            }
        }

        // backtracking Armijo with quadratic interpolation
        const C1: f64 = 1e-4;
        let mut alpha = if pairs.is_empty() {
            (1.0 / inf_norm(&d).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + C1 * alpha * dg {
                accepted = Some((trial, ft, alpha));
                break;
            }
            let next = if ft.is_finite() {
                // minimizer of the quadratic through (0, fx, dg) and (alpha, ft)
                let denom = 2.0 * (ft - fx - dg * alpha);
                let cand = if denom > 0.0 { -dg * alpha * alpha / denom } else { alpha / 2.0 };
                cand.clamp(0.1 * alpha, 0.5 * alpha)
            } else {
                alpha / 2.0
            };
            alpha = next;
            if alpha < 1e-20 {
                break;
            }
        }
        let Some((x_new, f_new, _alpha)) = accepted else {
            // no decrease exists along a descent direction: the objective is
            // flat to machine precision here, so the change criterion holds
            // with zero; convergence then turns on the gradient alone
            let reason = if gnorm <= cfg.gradient_tolerance {
                StopReason::Converged
            } else {
                StopReason::LineSearchFailed
            };
            return Minimum {
                x,
                value: fx,
                gradient_norm: gnorm,
                iterations: iteration,
                reason,
            };
        };

        let g_new = grad(&x_new);
        if g_new.iter().any(|v| !v.is_finite()) {
            return Minimum {
                x: x_new,
                value: f_new,
                gradient_norm: f64::INFINITY,
                iterations: iteration,
                reason: StopReason::LineSearchFailed,
            };
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * inf_norm(&s) * inf_norm(&yv) {
            gamma = sy / dot(&yv, &yv).max(1e-300);
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }

        let rel_change = (fx - f_new).abs() / f_new.abs().max(1.0);
        last_rel_change = Some(rel_change);
        let converged =
            inf_norm(&g_new) <= cfg.gradient_tolerance && rel_change <= cfg.objective_tolerance;
        x = x_new;
        fx = f_new;
        g = g_new;
        if converged {
            return Minimum {
                x,
                value: fx,
                gradient_norm: inf_norm(&g),
                iterations: iteration,
                reason: StopReason::Converged,
            };
        }
    }

    Minimum {
        gradient_norm: inf_norm(&g),
        x,
        value: fx,
        iterations: cfg.max_iterations,
        reason: StopReason::IterationLimit,
    }
}
