use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{linalg, Error, Real, Result};

/// `−2 log` restricted likelihood of `vec(A) ~ N((I_p ⊗ X) vec B, Σ_E ⊗ I + Σ_G ⊗ K)`,
/// built and factorized densely. Cost is cubic in `np`; meant for small reference problems.
pub fn dense_neg2_loglik<T: Real>(
    sigma_g: &DMatrix<T>,
    sigma_e: &DMatrix<T>,
    k: &DMatrix<T>,
    a: &DMatrix<T>,
    x: Option<&DMatrix<T>>,
) -> Result<T> {
    let (n, p) = a.shape();
    if k.shape() != (n, n) || sigma_g.shape() != (p, p) || sigma_e.shape() != (p, p) {
        return Err(Error::DimensionMismatch("dense likelihood operands disagree in size".into()));
    }
    let big = n * p;
    let omega = sigma_e.kronecker(&DMatrix::<T>::identity(n, n)) + sigma_g.kronecker(k);
    let chol = Cholesky::new(linalg::symmetrize(&omega)).ok_or(Error::SingularRowCovariance(f64::INFINITY))?;
    let logdet = |c: &Cholesky<T, nalgebra::Dyn>| c.l_dirty().diagonal().iter().fold(T::zero(), |s, d| s + d.ln()) * T::lit(2.0);
    let y = DVector::from_column_slice(a.as_slice());
    let mut f = logdet(&chol);
    let mut resid = y.clone();
    let mut fixed = 0;
    if let Some(x) = x {
        fixed = p * x.ncols();
        let z = DMatrix::<T>::identity(p, p).kronecker(x);
        let oz = chol.solve(&z);
        let h = z.transpose() * &oz;
        let hc = Cholesky::new(linalg::symmetrize(&h)).ok_or(Error::DesignRankDeficient)?;
        f += logdet(&hc);
        let beta = hc.solve(&(z.transpose() * chol.solve(&y)));
        resid -= z * beta;
    }
    f += resid.dot(&chol.solve(&resid));
    Ok(f + T::from_usize_lossy(big - fixed) * T::two_pi().ln())
}
