//! Dense BFGS with a strong-Wolfe line search.
//!
//! Used for both landmark matching (momenta) and the variance-component fit
//! (Cholesky parameters). The objective returns `None` for points where it is
//! undefined; the line search then shrinks the step.

use nalgebra::{DMatrix, DVector};

use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions<T> {
    pub max_iter: usize,
    /// Stop when `‖g‖₂ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: T,
    /// Stop when the relative decrease of `f` falls below this for two iterations running.
    pub f_rel_tol: T,
    pub c1: T,
    pub c2: T,
    pub max_line_search: usize,
}

impl<T: Real> Default for BfgsOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: T::lit(1e-6),
            f_rel_tol: T::lit(1e-15),
            c1: T::lit(1e-4),
            c2: T::lit(0.9),
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientTolerance | Termination::FunctionTolerance)
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult<T: Real> {
    pub x: DVector<T>,
    pub f: T,
    pub grad: DVector<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective value at the start and after every accepted step.
    pub history: Vec<T>,
}

struct Probe<T: Real> {
    alpha: T,
    f: T,
    slope: T,
    x: DVector<T>,
    g: DVector<T>,
}

struct Search<'a, T: Real, F> {
    objective: &'a mut F,
    x0: &'a DVector<T>,
    dir: &'a DVector<T>,
    f0: T,
    slope0: T,
    opts: &'a BfgsOptions<T>,
    evals: usize,
}

impl<T, F> Search<'_, T, F>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
{
    fn probe(&mut self, alpha: T) -> Option<Probe<T>> {
        let x = self.x0 + self.dir * alpha;
        self.evals += 1;
        let (f, g) = (self.objective)(&x)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let slope = g.dot(self.dir);
        Some(Probe { alpha, f, slope, x, g })
    }

    fn armijo(&self, p: &Probe<T>) -> bool {
        p.f <= self.f0 + self.opts.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Probe<T>) -> bool {
        p.slope.abs() <= -self.opts.c2 * self.slope0
    }

    fn run(&mut self, alpha_init: T) -> Option<Probe<T>> {
        let two = T::lit(2.0);
        let mut lo = Probe {
            alpha: T::zero(),
            f: self.f0,
            slope: self.slope0,
            x: self.x0.clone(),
            g: DVector::zeros(0),
        };
        let mut alpha = alpha_init;
        let mut best: Option<Probe<T>> = None;
        for i in 0..self.opts.max_line_search {
            let Some(p) = self.probe(alpha) else {
                // undefined region: back off towards the last good point
                alpha = (lo.alpha + alpha) / two;
                if alpha <= T::default_epsilon() * T::lit(16.0) {
                    return best;
                }
                continue;
            };
            if !self.armijo(&p) || (i > 0 && p.f >= lo.f && lo.alpha > T::zero()) {
                return self.zoom(lo, p, best);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= T::zero() {
                let hi = Probe { alpha: lo.alpha, f: lo.f, slope: lo.slope, x: lo.x.clone(), g: lo.g.clone() };
                let keep = Probe { alpha: p.alpha, f: p.f, slope: p.slope, x: p.x.clone(), g: p.g.clone() };
                return self.zoom(keep, hi, Some(p));
            }
            alpha = p.alpha * two;
            best = Some(Probe { alpha: p.alpha, f: p.f, slope: p.slope, x: p.x.clone(), g: p.g.clone() });
            lo = p;
        }
        best
    }

    fn zoom(&mut self, mut lo: Probe<T>, mut hi: Probe<T>, mut best: Option<Probe<T>>) -> Option<Probe<T>> {
        let tenth = T::lit(0.1);
        for _ in 0..self.opts.max_line_search {
            let width = hi.alpha - lo.alpha;
            if width.abs() <= T::default_epsilon() * (T::one() + lo.alpha.abs()) {
                break;
            }
            // quadratic interpolation from (lo.f, lo.slope, hi.f), safeguarded
            let denom = hi.f - lo.f - lo.slope * width;
            let mut alpha = if denom > T::zero() {
                lo.alpha - lo.slope * width * width / (T::lit(2.0) * denom)
            } else {
                lo.alpha + width * T::lit(0.5)
            };
            let (a, b) = if lo.alpha < hi.alpha { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
            let margin = (b - a) * tenth;
            if !(alpha > a + margin && alpha < b - margin) {
                alpha = (a + b) * T::lit(0.5);
            }
            let Some(p) = self.probe(alpha) else {
                hi = Probe { alpha, f: T::max_value().unwrap_or(T::lit(f64::MAX)), slope: T::zero(), x: self.x0.clone(), g: DVector::zeros(0) };
                continue;
            };
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                let better = best.as_ref().is_none_or(|b| p.f < b.f);
                if p.slope * (hi.alpha - lo.alpha) >= T::zero() {
                    hi = lo;
                }
                if better {
                    best = Some(Probe { alpha: p.alpha, f: p.f, slope: p.slope, x: p.x.clone(), g: p.g.clone() });
                }
                lo = p;
            }
        }
        if lo.alpha > T::zero() && lo.f < self.f0 {
            let lo_better = best.as_ref().is_none_or(|b| lo.f < b.f);
            if lo_better {
                return Some(lo);
            }
        }
        best
    }
}

/// Minimizes `objective` starting from `x0`.
///
/// `objective` returns the value and gradient, or `None` if the point is infeasible.
/// Returns `None` only when the starting point itself is infeasible.
pub fn minimize<T, F>(mut objective: F, x0: DVector<T>, opts: &BfgsOptions<T>) -> Option<BfgsResult<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
{
    let n = x0.len();
    let (mut f, mut g) = objective(&x0)?;
    if !f.is_finite() {
        return None;
    }
    let mut x = x0;
    let mut h_inv = DMatrix::<T>::identity(n, n);
    let mut history = vec![f];
    let mut evaluations = 1;
    let mut small_steps = 0;
    let mut first = true;

    for iter in 0..opts.max_iter {
        if g.norm() <= opts.grad_tol * f.abs().max(T::one()) {
            return Some(BfgsResult { x, f, grad: g, iterations: iter, evaluations, termination: Termination::GradientTolerance, history });
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = dir.dot(&g);
        if slope >= T::zero() {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        let alpha0 = if first { T::one().min(T::one() / g.norm()) } else { T::one() };
        let mut search = Search { objective: &mut objective, x0: &x, dir: &dir, f0: f, slope0: slope, opts, evals: 0 };
        let step = search.run(alpha0);
        evaluations += search.evals;
        let Some(step) = step.filter(|p| p.f <= f) else {
            if !first {
                // retry once along steepest descent with a fresh curvature model
                h_inv = DMatrix::identity(n, n);
                first = true;
                continue;
            }
            return Some(BfgsResult { x, f, grad: g, iterations: iter, evaluations, termination: Termination::LineSearchFailed, history });
        };
        let s = &step.x - &x;
        let y = &step.g - &g;
        let sy = s.dot(&y);
        if sy > T::default_epsilon() * s.norm() * y.norm() {
            if first {
                let yy = y.dot(&y);
                h_inv = DMatrix::identity(n, n) * (sy / yy);
            }
            let rho = T::one() / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * ((sy + yhy) * rho * rho);
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        first = false;
        let decrease = f - step.f;
        x = step.x;
        f = step.f;
        g = step.g;
        history.push(f);
        if decrease <= opts.f_rel_tol * f.abs().max(T::one()) {
            small_steps += 1;
            if small_steps >= 2 {
                return Some(BfgsResult { x, f, grad: g, iterations: iter + 1, evaluations, termination: Termination::FunctionTolerance, history });
            }
        } else {
            small_steps = 0;
        }
    }
    let termination = if g.norm() <= opts.grad_tol * f.abs().max(T::one()) {
        Termination::GradientTolerance
    } else {
        Termination::MaxIterations
    };
    Some(BfgsResult { x, f, grad: g, iterations: opts.max_iter, evaluations, termination, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let res = minimize(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &BfgsOptions::default()).unwrap();
        assert!(res.termination.converged(), "{:?}", res.termination);
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_in_f32() {
        let obj = |x: &DVector<f32>| {
            let g = x.map(|v| 2.0 * (v - 3.0));
            Some((x.map(|v| (v - 3.0) * (v - 3.0)).sum(), g))
        };
        let opts = BfgsOptions { grad_tol: 1e-4, ..Default::default() };
        let res = minimize(obj, DVector::from_vec(vec![0.0f32, 10.0]), &opts).unwrap();
        assert!((res.x[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // log barrier: undefined for x <= 0, minimum at x = 1
        let obj = |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                return None;
            }
            Some((x[0] - x[0].ln(), DVector::from_element(1, 1.0 - 1.0 / x[0])))
        };
        let res = minimize(obj, DVector::from_element(1, 5.0), &BfgsOptions::default()).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-5);
    }
}
