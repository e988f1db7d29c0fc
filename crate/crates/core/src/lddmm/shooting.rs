use nalgebra::Vector3;

use super::kernel::{velocity_at, KernelSpec};
use super::{LandmarkSet, Momenta};
use crate::{Error, Real, Result};

/// Default number of RK4 steps on `[0, 1]`.
pub const DEFAULT_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State<T: Real> {
    pub x: Vec<Vector3<T>>,
    pub p: Vec<Vector3<T>>,
}

impl<T: Real> State<T> {
    fn zeros(n: usize) -> Self {
        Self { x: vec![Vector3::zeros(); n], p: vec![Vector3::zeros(); n] }
    }

    /// `self + h · d`
    pub(crate) fn axpy(&self, h: T, d: &State<T>) -> State<T> {
        State {
            x: self.x.iter().zip(&d.x).map(|(a, b)| a + b * h).collect(),
            p: self.p.iter().zip(&d.p).map(|(a, b)| a + b * h).collect(),
        }
    }

    pub(crate) fn add_scaled(&mut self, h: T, d: &State<T>) {
        for (a, b) in self.x.iter_mut().zip(&d.x) {
            *a += b * h;
        }
        for (a, b) in self.p.iter_mut().zip(&d.p) {
            *a += b * h;
        }
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.p).all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Landmark geodesic equations: `ẋₗ = Σₘ k(xₗ,xₘ) pₘ`, `ṗₗ = Σₘ (pₗ·pₘ) c(xₗ,xₘ)(xₗ − xₘ)`.
pub(crate) fn rhs<T: Real>(k: &KernelSpec<T>, s: &State<T>) -> State<T> {
    let n = s.x.len();
    let mut d = State::zeros(n);
    for l in 0..n {
        let mut vx = Vector3::zeros();
        let mut vp = Vector3::zeros();
        for m in 0..n {
            let diff = s.x[l] - s.x[m];
            let (kv, c, _) = k.terms(diff.norm_squared());
            vx += s.p[m] * kv;
            vp += diff * (c * s.p[l].dot(&s.p[m]));
        }
        d.x[l] = vx;
        d.p[l] = vp;
    }
    d
}

/// The four RK4 stage states of one step.
pub(crate) struct Rk4Stages<T: Real> {
    pub states: [State<T>; 4],
}

pub(crate) fn rk4_step<T: Real>(k: &KernelSpec<T>, s0: &State<T>, h: T) -> (State<T>, Rk4Stages<T>) {
    let half = h * T::lit(0.5);
    let k1 = rhs(k, s0);
    let s1 = s0.axpy(half, &k1);
    let k2 = rhs(k, &s1);
    let s2 = s0.axpy(half, &k2);
    let k3 = rhs(k, &s2);
    let s3 = s0.axpy(h, &k3);
    let k4 = rhs(k, &s3);
    let mut next = s0.clone();
    let sixth = h / T::lit(6.0);
    let third = h / T::lit(3.0);
    next.add_scaled(sixth, &k1);
    next.add_scaled(third, &k2);
    next.add_scaled(third, &k3);
    next.add_scaled(sixth, &k4);
    (next, Rk4Stages { states: [s0.clone(), s1, s2, s3] })
}

/// `H(x, p) = ½ Σₗₘ k(xₗ, xₘ) pₗ·pₘ`.
pub fn hamiltonian<T: Real>(k: &KernelSpec<T>, x: &LandmarkSet<T>, p: &Momenta<T>) -> T {
    let mut h = T::zero();
    for (xl, pl) in x.points.iter().zip(&p.vectors) {
        for (xm, pm) in x.points.iter().zip(&p.vectors) {
            h += k.value((xl - xm).norm_squared()) * pl.dot(pm);
        }
    }
    h * T::lit(0.5)
}

/// Landmark positions and momenta at `t = 0, 1/N, …, 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationPath<T: Real> {
    pub states: Vec<(LandmarkSet<T>, Momenta<T>)>,
    /// `‖v₀‖²_V` at `t = 0`.
    pub energy: T,
}

impl<T: Real> DeformationPath<T> {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn endpoint(&self) -> &LandmarkSet<T> {
        &self.states.last().expect("path has at least one state").0
    }
}

pub fn shoot<T: Real>(k: &KernelSpec<T>, template: &LandmarkSet<T>, momenta: &Momenta<T>, steps: usize) -> Result<DeformationPath<T>> {
    if steps == 0 {
        return Err(Error::Invalid("shooting needs at least one step".into()));
    }
    if template.len() != momenta.len() {
        return Err(Error::DimensionMismatch(format!("{} landmarks with {} momenta", template.len(), momenta.len())));
    }
    let h = T::one() / T::from_usize_lossy(steps);
    let mut s = State { x: template.points.clone(), p: momenta.vectors.clone() };
    let mut states = Vec::with_capacity(steps + 1);
    states.push((template.clone(), momenta.clone()));
    for step in 0..steps {
        s = rk4_step(k, &s, h).0;
        if !s.is_finite() {
            return Err(Error::NonFiniteState(step + 1));
        }
        states.push((LandmarkSet { points: s.x.clone() }, Momenta { vectors: s.p.clone() }));
    }
    let energy = hamiltonian(k, template, momenta) * T::lit(2.0);
    Ok(DeformationPath { states, energy })
}

/// Advects arbitrary points through the time-varying field stored in `path`.
///
/// Each step recomputes the RK4 stages of the landmark system from the stored state and moves
/// the extra points with the same stage weights, so template landmarks passed as `extra` land
/// exactly on the path endpoint.
pub fn deform_points<T: Real>(path: &DeformationPath<T>, k: &KernelSpec<T>, extra: &[Vector3<T>]) -> Result<Vec<Vector3<T>>> {
    let steps = path.steps();
    if steps == 0 {
        return Ok(extra.to_vec());
    }
    let h = T::one() / T::from_usize_lossy(steps);
    let sixth = h / T::lit(6.0);
    let third = h / T::lit(3.0);
    let half = h * T::lit(0.5);
    let mut y = extra.to_vec();
    for (step, (xs, ps)) in path.states[..steps].iter().enumerate() {
        let s0 = State { x: xs.points.clone(), p: ps.vectors.clone() };
        let (_, stages) = rk4_step(k, &s0, h);
        let offsets = [T::zero(), half, half, h];
        let mut slopes: [Vec<Vector3<T>>; 4] = Default::default();
        let mut prev: Option<&Vec<Vector3<T>>> = None;
        for stage in 0..4 {
            let st = &stages.states[stage];
            let ys: Vec<Vector3<T>> = match prev {
                None => y.clone(),
                Some(dy) => y.iter().zip(dy).map(|(a, b)| a + b * offsets[stage]).collect(),
            };
            slopes[stage] = ys.iter().map(|q| velocity_at(k, &st.x, &st.p, q)).collect();
            prev = Some(&slopes[stage]);
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += slopes[0][i] * sixth;
            *yi += slopes[1][i] * third;
            *yi += slopes[2][i] * third;
            *yi += slopes[3][i] * sixth;
            if !yi.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteState(step + 1));
            }
        }
    }
    Ok(y)
}
