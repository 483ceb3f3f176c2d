use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Stop when `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` falls to this value.
    pub rel_decrease_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iters: 1000,
            grad_tol: 1e-6,
            rel_decrease_tol: 2.2e-9,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    /// The objective stopped decreasing by more than the relative tolerance.
    RelativeDecrease,
    MaxIterations,
    /// Line search could not decrease the objective.
    LineSearch,
    /// The objective or gradient became non-finite; the last finite iterate is returned.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    /// Objective at the start and after each accepted step.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Limited-memory BFGS with backtracking Armijo line search.
///
/// `objective` returns the value and gradient at a point.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, config: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (mut f, mut g) = objective(&x0);
    let mut x = x0;
    let mut values = vec![f];
    let done = |x, value, values, iterations, termination| LbfgsResult { x, value, values, iterations, termination };
    if !f.is_finite() || !finite(&g) {
        return done(x, f, values, 0, Termination::NonFinite);
    }
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(config.history);
    for iter in 0..config.max_iters {
        if g.norm() < config.grad_tol {
            return done(x, f, values, iter, Termination::GradientTolerance);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        let gamma = memory.back().map_or(1.0 / g.norm().max(1.0), |(s, y, _)| s.dot(y) / y.dot(y));
        let mut d = q * gamma;
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&d);
            d.axpy(a - b, s, 1.0);
        }
        d.neg_mut();
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            memory.clear();
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let trial = &x + &d * step;
            let (ft, gt) = objective(&trial);
            if !ft.is_finite() || !finite(&gt) {
                return done(x, f, values, iter, Termination::NonFinite);
            }
            if ft <= f + config.armijo * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return done(x, f, values, iter, Termination::LineSearch);
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if memory.len() == config.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let decrease = (f - f_new) / f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        values.push(f);
        if decrease <= config.rel_decrease_tol {
            return done(x, f, values, iter + 1, Termination::RelativeDecrease);
        }
    }
    let iterations = config.max_iters;
    if g.norm() < config.grad_tol {
        return done(x, f, values, iterations, Termination::GradientTolerance);
    }
    done(x, f, values, iterations, Termination::MaxIterations)
}
