//! Proximal-gradient solvers for objectives with an L1 term on a subset of coordinates.
//!
//! Both solvers take accelerated proximal steps and fall back to a plain step
//! (resetting momentum) whenever the objective would increase. They stop once
//! the objective has changed by less than the tolerance on two consecutive
//! iterations, or when the iteration cap is hit.

use super::linalg::{dot, max_eigenvalue, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 10_000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
}

pub fn soft_threshold<T: Scalar>(x: T, threshold: T) -> T {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        T::zero()
    }
}

/// Minimises `½ xᵀGx − bᵀx + λ‖x‖₁` with step `1/L`, `L` the largest eigenvalue of `G`.
pub fn lasso_quadratic<T: Scalar>(
    gram: &Matrix<T>,
    b: &[T],
    lambda: T,
    start: &[T],
    opts: SolverOptions,
) -> SolveReport<T> {
    let n = b.len();
    let objective = |x: &[T]| {
        let gx = gram.mul_vec(x);
        T::of(0.5) * dot(x, &gx) - dot(b, x) + lambda * x.iter().map(|v| v.abs()).sum::<T>()
    };
    if n == 0 {
        return SolveReport { x: Vec::new(), objective: T::zero(), iterations: 0, converged: true };
    }
    let lipschitz = max_eigenvalue(gram, 500) * T::of(1.01);
    if !(lipschitz > T::zero()) {
        // G = 0: the minimiser is zero when |b| <= λ, unbounded otherwise; clamp to zero.
        let x = vec![T::zero(); n];
        return SolveReport { objective: objective(&x), x, iterations: 0, converged: true };
    }
    let step = T::one() / lipschitz;
    let prox_step = |y: &[T]| -> Vec<T> {
        let g = gram.mul_vec(y);
        y.iter().zip(&g).zip(b).map(|((&yi, &gi), &bi)| soft_threshold(yi - step * (gi - bi), lambda * step)).collect()
    };

    let tol = T::of(opts.tolerance);
    let mut x = start.to_vec();
    let mut f = objective(&x);
    let mut y = x.clone();
    let mut t = T::one();
    let mut quiet = 0;
    for it in 1..=opts.max_iterations {
        let mut x_new = prox_step(&y);
        let mut f_new = objective(&x_new);
        if f_new > f {
            // Momentum overshot: take a plain step from x instead.
            x_new = prox_step(&x);
            f_new = objective(&x_new);
            t = T::one();
            y = x_new.clone();
        } else {
            let t_new = (T::one() + (T::one() + T::of(4.0) * t * t).sqrt()) * T::of(0.5);
            let beta = (t - T::one()) / t_new;
            y = x_new.iter().zip(&x).map(|(&a, &b)| a + beta * (a - b)).collect();
            t = t_new;
        }
        let change = (f - f_new).abs();
        x = x_new;
        f = f_new;
        quiet = if change < tol { quiet + 1 } else { 0 };
        if quiet >= 2 {
            return SolveReport { x, objective: f, iterations: it, converged: true };
        }
    }
    SolveReport { x, objective: f, iterations: opts.max_iterations, converged: false }
}

/// Smooth part of a composite objective.
pub trait SmoothObjective<T> {
    fn value(&self, x: &[T]) -> T;
    fn value_and_gradient(&self, x: &[T]) -> (T, Vec<T>);
}

/// Minimises `f(x) + λ Σ_{i∈l1} |x_i|` with backtracking on the step size.
pub fn proximal_gradient<T: Scalar, F: SmoothObjective<T>>(
    f: &F,
    l1: std::ops::Range<usize>,
    lambda: T,
    start: &[T],
    opts: SolverOptions,
) -> SolveReport<T> {
    let penalty = |x: &[T]| lambda * x[l1.clone()].iter().map(|v| v.abs()).sum::<T>();
    let prox = |v: Vec<T>, step: T| -> Vec<T> {
        v.into_iter()
            .enumerate()
            .map(|(i, vi)| if l1.contains(&i) { soft_threshold(vi, lambda * step) } else { vi })
            .collect()
    };
    let tol = T::of(opts.tolerance);
    let mut lipschitz = T::one();
    let mut x = start.to_vec();
    let mut total = f.value(&x) + penalty(&x);
    let mut y = x.clone();
    let mut t = T::one();
    let mut quiet = 0;
    for it in 1..=opts.max_iterations {
        let (mut fy, mut gy) = f.value_and_gradient(&y);
        if !fy.is_finite() || gy.iter().any(|g| !g.is_finite()) {
            y = x.clone();
            t = T::one();
            (fy, gy) = f.value_and_gradient(&y);
        }
        let mut accepted = None;
        for _ in 0..60 {
            let step = T::one() / lipschitz;
            let cand = prox(y.iter().zip(&gy).map(|(&yi, &gi)| yi - step * gi).collect(), step);
            let fc = f.value(&cand);
            let diff: Vec<T> = cand.iter().zip(&y).map(|(&a, &b)| a - b).collect();
            let model = fy + dot(&gy, &diff) + lipschitz * T::of(0.5) * dot(&diff, &diff);
            if fc.is_finite() && fc <= model + T::epsilon() * fy.abs().max(T::one()) {
                accepted = Some((cand, fc));
                break;
            }
            lipschitz = lipschitz * T::of(2.0);
        }
        let Some((cand, fc)) = accepted else {
            return SolveReport { x, objective: total, iterations: it, converged: false };
        };
        let total_new = fc + penalty(&cand);
        if total_new > total {
            if y == x {
                return SolveReport { x, objective: total, iterations: it, converged: true };
            }
            y = x.clone();
            t = T::one();
            continue;
        }
        let t_new = (T::one() + (T::one() + T::of(4.0) * t * t).sqrt()) * T::of(0.5);
        let beta = (t - T::one()) / t_new;
        y = cand.iter().zip(&x).map(|(&a, &b)| a + beta * (a - b)).collect();
        t = t_new;
        let change = total - total_new;
        x = cand;
        total = total_new;
        lipschitz = lipschitz * T::of(0.9);
        quiet = if change < tol { quiet + 1 } else { 0 };
        if quiet >= 2 {
            return SolveReport { x, objective: total, iterations: it, converged: true };
        }
    }
    SolveReport { x, objective: total, iterations: opts.max_iterations, converged: false }
}
