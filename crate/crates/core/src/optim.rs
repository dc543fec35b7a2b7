//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Used to maximize the GP log marginal likelihood over unconstrained
//! (transformed) hyperparameters. The objective may return a non-finite value
//! for points where it cannot be evaluated; the line search backs off.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub history: usize,
    /// Stop when the infinity norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of f over one iteration falls below this.
    pub rel_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 100,
            history: 6,
            grad_tol: 1e-5,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimize `objective`, which writes the gradient into its second argument
/// and returns the function value.
pub fn minimize<F>(mut objective: F, x0: &[f64], config: &LbfgsConfig) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = objective(&x, &mut grad);
    let mut evaluations = 1;
    if !value.is_finite() {
        return Minimum {
            x,
            value,
            iterations: 0,
            evaluations,
        };
    }

    // (s, y, 1 / y.s)
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history);
    let mut direction = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut alphas = vec![0.0; config.history];
    let mut iterations = 0;

    while iterations < config.max_iters {
        if inf_norm(&grad) < config.grad_tol {
            break;
        }
        iterations += 1;

        // Two-loop recursion.
        direction.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
        for (i, (s, y, rho)) in memory.iter().enumerate().rev() {
            let a = rho * dot(s, &direction);
            alphas[i] = a;
            direction.iter_mut().zip(y).for_each(|(d, yv)| *d -= a * yv);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            direction.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in memory.iter().enumerate() {
            let b = rho * dot(y, &direction);
            let a = alphas[i];
            direction.iter_mut().zip(s).for_each(|(d, sv)| *d += (a - b) * sv);
        }

        let mut slope = dot(&grad, &direction);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            memory.clear();
            direction.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
            slope = dot(&grad, &direction);
        }

        let mut step = if memory.is_empty() {
            (1.0 / inf_norm(&direction)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            trial
                .iter_mut()
                .zip(x.iter().zip(&direction))
                .for_each(|(t, (xv, d))| *t = xv + step * d);
            let f = objective(&trial, &mut trial_grad);
            evaluations += 1;
            if f.is_finite() && f <= value + 1e-4 * step * slope {
                accepted = Some(f);
                break;
            }
            step *= 0.5;
        }
        let Some(new_value) = accepted else {
            break;
        };

        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if memory.len() == config.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        let decrease = value - new_value;
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = new_value;
        if decrease <= config.rel_tol * value.abs().max(1.0) {
            break;
        }
    }

    Minimum {
        x,
        value,
        iterations,
        evaluations,
    }
}
