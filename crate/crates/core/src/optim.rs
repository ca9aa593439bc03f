//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! On a strictly convex quadratic the line search is exact after one
//! interpolation, so the iterates coincide with conjugate gradients.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖∇f‖ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 20,
            max_iter: 500,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.1;
const MAX_LINE_SEARCH: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        (self.f)(x, g)
    }
}

/// Minimizes `f` from `x0`; `fg(x, grad)` returns `f(x)` and writes `∇f(x)`.
pub fn minimize<F>(x0: Vec<f64>, fg: F, opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut fun = Counted { f: fg, evaluations: 0 };
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = fun.eval(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let done = |f: f64, g: &[f64]| norm(g) <= opts.grad_tol * f.abs().max(1.0);

    while iterations < opts.max_iter && !done(f, &g) {
        direction(&g, &history, &mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // Lost descent: restart from steepest descent.
            history.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
        }
        let initial = if history.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };
        let Some((step, f_new)) = line_search(&mut fun, &x, f, &d, slope, initial, &mut x_new, &mut g_new)
        else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };
        let s: Vec<f64> = d.iter().map(|v| step * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        iterations += 1;
    }
    LbfgsOutcome {
        grad_norm: norm(&g),
        converged: done(f, &g),
        x,
        value: f,
        iterations,
        evaluations: fun.evaluations,
    }
}

/// Two-loop recursion: `d = −H ∇f`.
fn direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, d: &mut [f64]) {
    for (di, gi) in d.iter_mut().zip(g) {
        *di = -gi;
    }
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, d);
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for di in d.iter_mut() {
            *di *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, d);
        for (di, si) in d.iter_mut().zip(s) {
            *di += (a - b) * si;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    fun: &mut Counted<F>,
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope0: f64,
    initial: f64,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<(f64, f64)> {
    let mut eval = |a: f64, xn: &mut [f64], gn: &mut [f64]| {
        for ((xi, &x0), &di) in xn.iter_mut().zip(x).zip(d) {
            *xi = x0 + a * di;
        }
        let f = fun.eval(xn, gn);
        (f, dot(gn, d))
    };
    let (mut a_prev, mut f_prev, mut s_prev) = (0.0, f0, slope0);
    let mut a = initial;
    for i in 0..MAX_LINE_SEARCH {
        let (fa, sa) = eval(a, x_new, g_new);
        if !fa.is_finite() {
            a = 0.5 * (a_prev + a);
            continue;
        }
        if fa > f0 + C1 * a * slope0 || (i > 0 && fa >= f_prev) {
            return zoom(&mut eval, f0, slope0, (a_prev, f_prev, s_prev), (a, fa), x_new, g_new);
        }
        if sa.abs() <= -C2 * slope0 {
            return Some((a, fa));
        }
        if sa >= 0.0 {
            return zoom(&mut eval, f0, slope0, (a, fa, sa), (a_prev, f_prev), x_new, g_new);
        }
        (a_prev, f_prev, s_prev) = (a, fa, sa);
        a *= 2.0;
    }
    None
}

fn zoom<E: FnMut(f64, &mut [f64], &mut [f64]) -> (f64, f64)>(
    eval: &mut E,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64),
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<(f64, f64)> {
    for _ in 0..MAX_LINE_SEARCH {
        let (a_lo, f_lo, s_lo) = lo;
        let (a_hi, f_hi) = hi;
        let width = a_hi - a_lo;
        // Minimizer of the quadratic through f(lo), f'(lo), f(hi).
        let denom = 2.0 * (f_hi - f_lo - s_lo * width);
        let mut a = if denom > 0.0 {
            a_lo - s_lo * width * width / denom
        } else {
            a_lo + 0.5 * width
        };
        let (lo_b, hi_b) = if width > 0.0 {
            (a_lo + 0.1 * width, a_hi - 0.1 * width)
        } else {
            (a_hi - 0.1 * width, a_lo + 0.1 * width)
        };
        if !(a >= lo_b.min(hi_b) && a <= lo_b.max(hi_b)) {
            a = a_lo + 0.5 * width;
        }
        let (fa, sa) = eval(a, x_new, g_new);
        if fa > f0 + C1 * a * slope0 || fa >= f_lo {
            hi = (a, fa);
        } else {
            if sa.abs() <= -C2 * slope0 {
                return Some((a, fa));
            }
            if sa * (a_hi - a_lo) >= 0.0 {
                hi = (a_lo, f_lo);
            }
            lo = (a, fa, sa);
        }
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
    }
    // Accept the best sufficient-decrease point found, if any.
    let (a, f, _) = lo;
    if a > 0.0 && f < f0 {
        eval(a, x_new, g_new);
        Some((a, f))
    } else {
        None
    }
}
