//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm is at or below this. Floored at
    /// `1000 * T::epsilon()` so single precision can terminate.
    pub tol: f64,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Minimises `f` from `x0`. `f` returns the value and gradient at a point.
pub fn lbfgs<T: Scalar>(mut f: impl FnMut(&[T]) -> (T, Vec<T>), x0: Vec<T>, opts: LbfgsOptions) -> LbfgsOutcome<T> {
    let tol = T::lit(opts.tol).max(T::epsilon() * T::lit(1e3));
    let c1 = T::lit(1e-4);
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    loop {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= tol {
            return LbfgsOutcome {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: true,
            };
        }
        if iterations >= opts.max_iter {
            return LbfgsOutcome {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: false,
            };
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, &yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => T::one() / gnorm,
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), &a) in hist.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, &si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<T> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            // not a descent direction; restart from steepest descent
            hist.clear();
            dir = g.iter().map(|&v| -v / gnorm).collect();
            slope = dot(&g, &dir);
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + c1 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= T::half();
        }
        let Some((xn, fn_, gn)) = accepted else {
            let gnorm = dot(&g, &g).sqrt();
            return LbfgsOutcome {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: gnorm <= tol,
            };
        };

        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gn.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y) {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_rosenbrock() {
        let f = |p: &[f64]| {
            let (a, b) = (p[0], p[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let out = lbfgs(f, vec![-1.2, 1.0], LbfgsOptions { tol: 1e-10, ..Default::default() });
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8);
    }
}
