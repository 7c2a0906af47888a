//! Limited-memory BFGS with a bracketing weak-Wolfe line search.
//!
//! Objectives may return a non-finite value for points they cannot evaluate
//! (for example a blown-up trajectory); the line search treats those as
//! infinitely bad and shrinks the step.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `|∇f|_∞ ≤ grad_tol`.
    pub grad_tol: f64,
    /// Stop when the relative decrease over an iteration falls below this.
    pub rel_decrease_tol: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self { memory: 12, max_iters: 2000, grad_tol: 1e-9, rel_decrease_tol: 1e-15 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f`, which returns the value and writes the gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, settings: &LbfgsSettings) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    if !fx.is_finite() {
        return Minimum { grad_norm: f64::INFINITY, x, value: fx, iterations: 0, evaluations, converged: false };
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iters {
        let gmax = inf_norm(&g);
        if gmax <= settings.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        two_loop(&g, &history, &mut dir);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            history.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() { (1.0 / inf_norm(&dir)).min(1.0) } else { 1.0 };

        // Bracketing weak-Wolfe search (c1 = 1e-4, c2 = 0.9). The last
        // point satisfying the sufficient-decrease condition is kept.
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut accepted: Option<f64> = None;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = x[i] + step * dir[i];
            }
            let f_trial = f(&trial, &mut g_trial);
            evaluations += 1;
            if !f_trial.is_finite() || f_trial > fx + 1e-4 * step * slope {
                hi = step;
            } else {
                lo = step;
                accepted = Some(f_trial);
                x_new.copy_from_slice(&trial);
                g_new.copy_from_slice(&g_trial);
                if dot(&g_trial, &dir) >= 0.9 * slope {
                    break;
                }
            }
            step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
            if hi.is_finite() && hi - lo <= 1e-16 * hi {
                break;
            }
        }
        let Some(f_new) = accepted else {
            // No decrease possible along this direction.
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if decrease.abs() <= settings.rel_decrease_tol * (1.0 + fx.abs()) {
            converged = inf_norm(&g) <= settings.grad_tol.max(1e-6);
            break;
        }
    }
    Minimum { grad_norm: inf_norm(&g), x, value: fx, iterations, evaluations, converged }
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, dir: &mut [f64]) {
    dir.iter_mut().zip(g).for_each(|(d, gi)| *d = -gi);
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, dir);
        dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        dir.iter_mut().for_each(|d| *d *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, dir);
        dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
