//! Penalized matching `J(p) = Σₗ ‖φₚ(xₗ⁰) − yₗ‖² + λ ‖v₀‖²_V` over initial momenta.
//!
//! The gradient is the exact reverse-mode derivative of the discretized RK4 shooting:
//! stage states are recorded on the forward pass and the adjoint is pulled back through
//! each stage with the vector-Jacobian product of the geodesic equations.

use nalgebra::{DVector, Vector3};

use super::kernel::KernelSpec;
use super::shooting::{rk4_step, shoot, DeformationPath, Rk4Stages, State, DEFAULT_STEPS};
use super::{flatten, unflatten, vnorm_sq, LandmarkSet, Momenta};
use crate::optim::{self, BfgsOptions, Termination};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOptions<T> {
    pub steps: usize,
    pub bfgs: BfgsOptions<T>,
}

impl<T: Real> Default for MatchOptions<T> {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            bfgs: BfgsOptions { max_iter: 300, grad_tol: T::lit(1e-8), ..BfgsOptions::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatchResult<T: Real> {
    pub momenta: Momenta<T>,
    pub path: DeformationPath<T>,
    pub objective: T,
    /// Objective at zero momenta (the residual after Procrustes alignment).
    pub initial_objective: T,
    /// Objective after every accepted optimizer step.
    pub history: Vec<T>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Cotangent pullback of [`super::shooting::rhs`]: returns `(∂f/∂s)ᵀ bar`.
fn rhs_vjp<T: Real>(k: &KernelSpec<T>, s: &State<T>, bar: &State<T>) -> State<T> {
    let n = s.x.len();
    let mut gx = vec![Vector3::zeros(); n];
    let mut gp = vec![Vector3::zeros(); n];
    let two = T::lit(2.0);
    for l in 0..n {
        let a = &bar.x[l];
        let b = &bar.p[l];
        for m in 0..n {
            let d = s.x[l] - s.x[m];
            let (kv, c, dc) = k.terms(d.norm_squared());
            // ẋₗ term: k(xₗ,xₘ) aₗ·pₘ
            gp[m] += a * kv;
            let alpha = a.dot(&s.p[m]);
            if l != m {
                let gx_l = d * (-c * alpha);
                gx[l] += gx_l;
                gx[m] -= gx_l;
            }
            // ṗₗ term: (pₗ·pₘ) c(xₗ,xₘ) bₗ·(xₗ − xₘ)
            if l != m {
                let bd = b.dot(&d);
                let q = s.p[l].dot(&s.p[m]);
                let gamma = c * bd;
                gp[l] += s.p[m] * gamma;
                gp[m] += s.p[l] * gamma;
                let gx_l = (d * (two * dc * bd) + b * c) * q;
                gx[l] += gx_l;
                gx[m] -= gx_l;
            }
        }
    }
    State { x: gx, p: gp }
}

/// Pulls the cotangent of the step output back to its input.
fn rk4_step_vjp<T: Real>(k: &KernelSpec<T>, stages: &Rk4Stages<T>, h: T, bar_next: &State<T>) -> State<T> {
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let third = h / T::lit(3.0);
    let scale = |s: &State<T>, c: T| State { x: s.x.iter().map(|v| v * c).collect(), p: s.p.iter().map(|v| v * c).collect() };
    let mut bar0 = bar_next.clone();
    let bar_k4 = scale(bar_next, sixth);
    let mut bar_k3 = scale(bar_next, third);
    let mut bar_k2 = scale(bar_next, third);
    let mut bar_k1 = scale(bar_next, sixth);

    let bar_s3 = rhs_vjp(k, &stages.states[3], &bar_k4);
    bar0.add_scaled(T::one(), &bar_s3);
    bar_k3.add_scaled(h, &bar_s3);

    let bar_s2 = rhs_vjp(k, &stages.states[2], &bar_k3);
    bar0.add_scaled(T::one(), &bar_s2);
    bar_k2.add_scaled(half, &bar_s2);

    let bar_s1 = rhs_vjp(k, &stages.states[1], &bar_k2);
    bar0.add_scaled(T::one(), &bar_s1);
    bar_k1.add_scaled(half, &bar_s1);

    let bar_s0 = rhs_vjp(k, &stages.states[0], &bar_k1);
    bar0.add_scaled(T::one(), &bar_s0);
    bar0
}

fn check_inputs<T: Real>(template: &LandmarkSet<T>, target: &LandmarkSet<T>, momenta_len: usize, lambda: T, steps: usize) -> Result<()> {
    if template.len() != target.len() || template.len() != momenta_len {
        return Err(Error::DimensionMismatch(format!(
            "template has {} landmarks, target {}, momenta {}",
            template.len(),
            target.len(),
            momenta_len
        )));
    }
    if !(lambda > T::zero()) {
        return Err(Error::Invalid("lambda must be positive".into()));
    }
    if steps == 0 {
        return Err(Error::Invalid("shooting needs at least one step".into()));
    }
    Ok(())
}

pub fn match_objective<T: Real>(
    k: &KernelSpec<T>,
    template: &LandmarkSet<T>,
    target: &LandmarkSet<T>,
    lambda: T,
    momenta: &Momenta<T>,
    steps: usize,
) -> Result<T> {
    check_inputs(template, target, momenta.len(), lambda, steps)?;
    let path = shoot(k, template, momenta, steps)?;
    let data = path.endpoint().points.iter().zip(&target.points).fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_squared());
    Ok(data + lambda * path.energy)
}

/// Objective and exact gradient with respect to the flattened momenta.
pub fn match_gradient<T: Real>(
    k: &KernelSpec<T>,
    template: &LandmarkSet<T>,
    target: &LandmarkSet<T>,
    lambda: T,
    momenta: &Momenta<T>,
    steps: usize,
) -> Result<(T, DVector<T>)> {
    check_inputs(template, target, momenta.len(), lambda, steps)?;
    let h = T::one() / T::from_usize_lossy(steps);
    let mut s = State { x: template.points.clone(), p: momenta.vectors.clone() };
    let mut tape = Vec::with_capacity(steps);
    for step in 0..steps {
        let (next, stages) = rk4_step(k, &s, h);
        if next.x.iter().chain(&next.p).any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFiniteState(step + 1));
        }
        tape.push(stages);
        s = next;
    }
    let two = T::lit(2.0);
    let mut data = T::zero();
    let mut bar = State { x: Vec::with_capacity(s.x.len()), p: vec![Vector3::zeros(); s.x.len()] };
    for (a, b) in s.x.iter().zip(&target.points) {
        let r = a - b;
        data += r.norm_squared();
        bar.x.push(r * two);
    }
    for stages in tape.iter().rev() {
        bar = rk4_step_vjp(k, stages, h, &bar);
    }
    // penalty λ pᵀK(x⁰)p, gradient 2λ K(x⁰) p
    let field = super::kernel_apply(k, template, momenta, &template.points)?;
    let energy = momenta.vectors.iter().zip(&field).fold(T::zero(), |acc, (p, v)| acc + p.dot(v));
    for (g, v) in bar.p.iter_mut().zip(&field) {
        *g += v * (two * lambda);
    }
    Ok((data + lambda * energy, flatten(&bar.p)))
}

/// Finds momenta minimizing the penalized matching functional with BFGS from zero momenta.
pub fn match_landmarks<T: Real>(
    k: &KernelSpec<T>,
    template: &LandmarkSet<T>,
    target: &LandmarkSet<T>,
    lambda: T,
    opts: &MatchOptions<T>,
) -> Result<MatchResult<T>> {
    check_inputs(template, target, template.len(), lambda, opts.steps)?;
    let n = template.len();
    let zero = Momenta::zeros(n);
    let (initial_objective, g0) = match_gradient(k, template, target, lambda, &zero, opts.steps)?;
    let objective = |v: &DVector<T>| {
        let m = Momenta { vectors: unflatten(v) };
        match_gradient(k, template, target, lambda, &m, opts.steps).ok()
    };
    let res = optim::minimize(objective, DVector::zeros(3 * n), &opts.bfgs)
        .ok_or_else(|| Error::NoDescent("objective undefined at zero momenta".into()))?;
    let stalled = !(res.f < initial_objective);
    let at_optimum = g0.norm() <= opts.bfgs.grad_tol * initial_objective.abs().max(T::one());
    if stalled && !at_optimum {
        return Err(Error::NoDescent(format!(
            "J stayed at {:e} after {} iterations ({:?}); initial gradient norm {:e}",
            initial_objective.as_f64(),
            res.iterations,
            res.termination,
            g0.norm().as_f64()
        )));
    }
    let momenta = Momenta { vectors: unflatten(&res.x) };
    let path = shoot(k, template, &momenta, opts.steps)?;
    debug_assert!(vnorm_sq(k, template, &momenta).is_ok());
    Ok(MatchResult {
        momenta,
        path,
        objective: res.f,
        initial_objective,
        history: res.history,
        iterations: res.iterations,
        termination: res.termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
        (0..n).map(|_| Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))).collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = KernelSpec::new(vec![1.0, 0.4], None).unwrap();
        let template = LandmarkSet::new(random_points(&mut rng, 5, 1.0)).unwrap();
        let target = LandmarkSet::new(template.points.iter().map(|p| p + Vector3::new(0.2, -0.1, 0.15)).collect()).unwrap();
        let m = Momenta { vectors: random_points(&mut rng, 5, 0.3) };
        let (_, g) = match_gradient(&k, &template, &target, 0.05, &m, 6).unwrap();
        let base = m.flatten();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let fu = match_objective(&k, &template, &target, 0.05, &Momenta::from_flat(&up).unwrap(), 6).unwrap();
            let fd = match_objective(&k, &template, &target, 0.05, &Momenta::from_flat(&dn).unwrap(), 6).unwrap();
            let fdiff = (fu - fd) / (2.0 * h);
            assert!((fdiff - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3), "coord {i}: {fdiff} vs {}", g[i]);
        }
    }

    #[test]
    fn identical_target_keeps_zero_momenta() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let t = LandmarkSet::new(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)]).unwrap();
        let res = match_landmarks(&k, &t, &t, 1e-3, &MatchOptions::default()).unwrap();
        assert!(res.objective <= 1e-12);
        assert!(res.momenta.vectors.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_landmark_translation_recovered() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let t = LandmarkSet::new(vec![Vector3::new(0.3, 0.1, -0.2)]).unwrap();
        let delta = Vector3::new(0.01, -0.02, 0.015);
        let target = LandmarkSet::new(vec![t.points[0] + delta]).unwrap();
        let res = match_landmarks(&k, &t, &target, 1e-3, &MatchOptions::default()).unwrap();
        // closed form: x₁ = x₀ + p, J = ‖p − δ‖² + λ‖p‖² → p = δ/(1+λ)
        let expected = delta / (1.0 + 1e-3);
        assert!((res.momenta.vectors[0] - expected).norm() < 1e-8);
        assert!((res.path.endpoint().points[0] - target.points[0]).norm() < 1e-4);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let a = LandmarkSet::new(vec![Vector3::zeros()]).unwrap();
        let b = LandmarkSet::new(vec![Vector3::zeros(), Vector3::zeros()]).unwrap();
        assert!(matches!(match_landmarks(&k, &a, &b, 1e-3, &MatchOptions::default()), Err(Error::DimensionMismatch(_))));
        assert!(match_landmarks(&k, &a, &a, 0.0, &MatchOptions::default()).is_err());
    }
}
