use nalgebra::{DMatrix, Vector3};

use super::{LandmarkSet, Momenta};
use crate::{Error, Real, Result};

/// Scalar kernel `k(x, y) = Σₛ wₛ exp(−‖x − y‖² / 2σₛ²)`, acting as `k·I₃` on vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<T: Real> {
    sigmas: Vec<T>,
    weights: Vec<T>,
    // 1 / (2σ²) and w / σ² cached per term
    inv_two_var: Vec<T>,
    w_over_var: Vec<T>,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(sigmas: Vec<T>, weights: Option<Vec<T>>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Invalid("kernel needs at least one bandwidth".into()));
        }
        if sigmas.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::Invalid("kernel bandwidths must be positive".into()));
        }
        let weights = weights.unwrap_or_else(|| vec![T::one(); sigmas.len()]);
        if weights.len() != sigmas.len() {
            return Err(Error::LengthMismatch { expected: sigmas.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(*w > T::zero()) || !w.is_finite()) {
            return Err(Error::Invalid("kernel weights must be positive".into()));
        }
        let inv_two_var = sigmas.iter().map(|&s| T::one() / (T::lit(2.0) * s * s)).collect();
        let w_over_var = sigmas.iter().zip(&weights).map(|(&s, &w)| w / (s * s)).collect();
        Ok(Self { sigmas, weights, inv_two_var, w_over_var })
    }

    pub fn gaussian(sigma: T) -> Result<Self> {
        Self::new(vec![sigma], None)
    }

    /// Six equally weighted Gaussians with σ ∈ {8, 4, 2, 1, 0.5, 0.1}.
    pub fn multiscale_default() -> Self {
        Self::new([8.0, 4.0, 2.0, 1.0, 0.5, 0.1].iter().map(|&s| T::lit(s)).collect(), None)
            .expect("default kernel is valid")
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn value(&self, r2: T) -> T {
        let mut k = T::zero();
        for (s, w) in self.inv_two_var.iter().zip(&self.weights) {
            k += *w * (-r2 * *s).exp();
        }
        k
    }

    /// `(k, c, c')` with `c = −2 dk/dr²` and `c' = dc/dr²`; `∇ₓ k(x, y) = −c (x − y)`.
    #[inline]
    pub(crate) fn terms(&self, r2: T) -> (T, T, T) {
        let (mut k, mut c, mut dc) = (T::zero(), T::zero(), T::zero());
        for ((s, w), wv) in self.inv_two_var.iter().zip(&self.weights).zip(&self.w_over_var) {
            let g = (-r2 * *s).exp();
            k += *w * g;
            c += *wv * g;
            dc -= *wv * g * *s;
        }
        (k, c, dc)
    }
}

/// Velocity `v(q) = Σₗ k(q, xₗ) pₗ` at each query point.
pub fn kernel_apply<T: Real>(
    k: &KernelSpec<T>,
    sources: &LandmarkSet<T>,
    momenta: &Momenta<T>,
    queries: &[Vector3<T>],
) -> Result<Vec<Vector3<T>>> {
    if sources.len() != momenta.len() {
        return Err(Error::DimensionMismatch(format!("{} sources with {} momenta", sources.len(), momenta.len())));
    }
    Ok(queries.iter().map(|q| velocity_at(k, &sources.points, &momenta.vectors, q)).collect())
}

#[inline]
pub(crate) fn velocity_at<T: Real>(k: &KernelSpec<T>, xs: &[Vector3<T>], ps: &[Vector3<T>], q: &Vector3<T>) -> Vector3<T> {
    let mut v = Vector3::zeros();
    for (x, p) in xs.iter().zip(ps) {
        v += p * k.value((q - x).norm_squared());
    }
    v
}

/// `‖v₀‖²_V = pᵀ K(x, x) p`.
pub fn vnorm_sq<T: Real>(k: &KernelSpec<T>, template: &LandmarkSet<T>, momenta: &Momenta<T>) -> Result<T> {
    let v = kernel_apply(k, template, momenta, &template.points)?;
    Ok(momenta.vectors.iter().zip(&v).fold(T::zero(), |acc, (p, vi)| acc + p.dot(vi)))
}

/// V-metric Gram matrix `Gᵢⱼ = pᵢᵀ K(x⁰, x⁰) pⱼ` over a cohort of momenta.
pub fn momentum_gram<T: Real>(k: &KernelSpec<T>, template: &LandmarkSet<T>, momenta: &[Momenta<T>]) -> Result<DMatrix<T>> {
    let fields: Vec<Vec<Vector3<T>>> =
        momenta.iter().map(|m| kernel_apply(k, template, m, &template.points)).collect::<Result<_>>()?;
    let n = momenta.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = momenta[i].vectors.iter().zip(&fields[j]).fold(T::zero(), |acc, (p, f)| acc + p.dot(f));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_point(x: [f64; 3]) -> LandmarkSet<f64> {
        LandmarkSet::new(vec![Vector3::from(x)]).unwrap()
    }

    #[test]
    fn apply_at_source_and_at_sigma() {
        let k = KernelSpec::gaussian(2.0).unwrap();
        let src = one_point([1.0, 0.0, 0.0]);
        let p = Momenta { vectors: vec![Vector3::new(0.3, -1.0, 2.0)] };
        let v = kernel_apply(&k, &src, &p, &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 0.0)]).unwrap();
        assert_eq!(v[0], p.vectors[0]);
        assert!((v[1] - p.vectors[0] * (-0.5f64).exp()).norm() < 1e-15);
    }

    #[test]
    fn multi_kernel_is_sum_of_singles() {
        let multi = KernelSpec::new(vec![1.0, 0.3], Some(vec![2.0, 0.5])).unwrap();
        let a = KernelSpec::gaussian(1.0).unwrap();
        let b = KernelSpec::gaussian(0.3).unwrap();
        let src = LandmarkSet::new(vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.5, 0.1, -0.2)]).unwrap();
        let p = Momenta { vectors: vec![Vector3::new(1.0, 0.0, 0.5), Vector3::new(-0.2, 0.4, 0.1)] };
        let q = [Vector3::new(0.2, 0.2, 0.2)];
        let vm = kernel_apply(&multi, &src, &p, &q).unwrap()[0];
        let va = kernel_apply(&a, &src, &p, &q).unwrap()[0];
        let vb = kernel_apply(&b, &src, &p, &q).unwrap()[0];
        assert!((vm - (va * 2.0 + vb * 0.5)).norm() < 1e-14);
    }

    #[test]
    fn vnorm_examples() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let src = one_point([0.0, 1.0, 2.0]);
        assert_eq!(vnorm_sq(&k, &src, &Momenta::zeros(1)).unwrap(), 0.0);
        let p = Momenta { vectors: vec![Vector3::new(1.0, 2.0, 2.0)] };
        assert!((vnorm_sq(&k, &src, &p).unwrap() - 9.0).abs() < 1e-14);
    }

    #[test]
    fn terms_match_finite_differences() {
        let k = KernelSpec::<f64>::new(vec![0.7, 2.0], Some(vec![1.0, 0.4])).unwrap();
        let r2: f64 = 0.9;
        let h = 1e-6;
        let (kv, c, dc) = k.terms(r2);
        assert!((kv - k.value(r2)).abs() < 1e-15);
        let dk = (k.value(r2 + h) - k.value(r2 - h)) / (2.0 * h);
        assert!((c + 2.0 * dk).abs() < 1e-8);
        let (_, cp, _) = k.terms(r2 + h);
        let (_, cm, _) = k.terms(r2 - h);
        assert!((dc - (cp - cm) / (2.0 * h)).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(KernelSpec::<f64>::new(vec![], None).is_err());
        assert!(KernelSpec::new(vec![-1.0], None).is_err());
        assert!(KernelSpec::new(vec![1.0], Some(vec![1.0, 2.0])).is_err());
    }
}
