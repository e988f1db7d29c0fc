//! Geometry of symmetric positive-definite matrices.
//!
//! The log-Euclidean metric is the working metric: distances, the Fréchet mean and tangent
//! coordinates all live in matrix-log space, with the tangent chart anchored at the identity
//! (`V = log C − log F`). Affine-invariant, Cholesky and square-root distances are provided
//! for comparison.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::{linalg, Error, Real, Result};

/// Default eigenvalue floor for positive definiteness.
pub const EPS_PD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix<T: Real> {
    data: DMatrix<T>,
}

impl<T: Real> SpdMatrix<T> {
    /// Symmetrizes `m` and checks every eigenvalue exceeds [`EPS_PD`].
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        Self::with_floor(m, T::lit(EPS_PD))
    }

    pub fn with_floor(m: DMatrix<T>, eps_pd: T) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!("SPD matrix must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        if !linalg::all_finite(&m) {
            return Err(Error::NotPositiveDefinite(f64::NAN));
        }
        let data = linalg::symmetrize(&m);
        let min = linalg::min_eigenvalue(&data);
        if !(min > eps_pd) {
            return Err(Error::NotPositiveDefinite(min.as_f64()));
        }
        Ok(Self { data })
    }

    pub fn identity(k: usize) -> Self {
        Self { data: DMatrix::identity(k, k) }
    }

    pub fn from_diagonal(diag: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub(crate) fn from_trusted(data: DMatrix<T>) -> Self {
        Self { data: linalg::symmetrize(&data) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }
}

/// A tangent vector at the identity chart: symmetric matrix plus its isometric vectorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTangent<T: Real> {
    pub matrix: DMatrix<T>,
    pub vector: DVector<T>,
}

impl<T: Real> SymTangent<T> {
    pub fn from_matrix(m: DMatrix<T>) -> Self {
        let matrix = linalg::symmetrize(&m);
        let vector = vec_sym(&matrix);
        Self { matrix, vector }
    }

    pub fn from_vector(v: DVector<T>) -> Result<Self> {
        let matrix = unvec_sym(&v)?;
        Ok(Self { matrix, vector: v })
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { matrix: &self.matrix * c, vector: &self.vector * c }
    }
}

pub fn matrix_log<T: Real>(c: &SpdMatrix<T>) -> Result<DMatrix<T>> {
    let eig = SymmetricEigen::new(c.data.clone());
    let min = eig.eigenvalues.min();
    if !(min > T::zero()) {
        return Err(Error::NotPositiveDefinite(min.as_f64()));
    }
    Ok(linalg::sym_apply(&c.data, |x| x.ln()))
}

pub fn matrix_exp<T: Real>(s: &DMatrix<T>) -> SpdMatrix<T> {
    SpdMatrix::from_trusted(linalg::sym_apply(s, |x| x.exp()))
}

fn check_same_dim<T: Real>(a: &SpdMatrix<T>, b: &SpdMatrix<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", a.dim(), a.dim(), b.dim(), b.dim())));
    }
    Ok(())
}

pub fn logeuclid_distance<T: Real>(c1: &SpdMatrix<T>, c2: &SpdMatrix<T>) -> Result<T> {
    check_same_dim(c1, c2)?;
    Ok((matrix_log(c1)? - matrix_log(c2)?).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpdMetric {
    LogEuclidean,
    AffineInvariant,
    Cholesky,
    SquareRoot,
}

pub fn cholesky_factor<T: Real>(c: &SpdMatrix<T>) -> Result<DMatrix<T>> {
    Cholesky::new(c.data.clone())
        .map(|ch| ch.l())
        .ok_or_else(|| Error::NotPositiveDefinite(linalg::min_eigenvalue(&c.data).as_f64()))
}

pub fn alt_distance<T: Real>(metric: SpdMetric, c1: &SpdMatrix<T>, c2: &SpdMatrix<T>) -> Result<T> {
    check_same_dim(c1, c2)?;
    match metric {
        SpdMetric::LogEuclidean => logeuclid_distance(c1, c2),
        SpdMetric::AffineInvariant => {
            let inv_sqrt = linalg::sym_apply(&c1.data, |x| T::one() / x.sqrt());
            let inner = linalg::symmetrize(&(&inv_sqrt * &c2.data * &inv_sqrt));
            let eig = SymmetricEigen::new(inner);
            let min = eig.eigenvalues.min();
            if !(min > T::zero()) {
                return Err(Error::NotPositiveDefinite(min.as_f64()));
            }
            Ok(eig.eigenvalues.map(|x| x.ln().powi(2)).sum().sqrt())
        }
        SpdMetric::Cholesky => Ok((cholesky_factor(c1)? - cholesky_factor(c2)?).norm()),
        SpdMetric::SquareRoot => Ok((linalg::psd_sqrt(&c1.data) - linalg::psd_sqrt(&c2.data)).norm()),
    }
}

/// Log-Euclidean Fréchet mean `exp(mean log Cᵢ)`, summed in input order.
pub fn frechet_mean<T: Real>(cs: &[SpdMatrix<T>]) -> Result<SpdMatrix<T>> {
    let first = cs.first().ok_or(Error::EmptySample)?;
    if cs.len() == 1 {
        return Ok(first.clone());
    }
    let k = first.dim();
    let mut acc = DMatrix::zeros(k, k);
    for c in cs {
        check_same_dim(first, c)?;
        acc += matrix_log(c)?;
    }
    Ok(matrix_exp(&(acc / T::from_usize_lossy(cs.len()))))
}

/// Sum of squared log-Euclidean distances from `m` to the sample.
pub fn frechet_objective<T: Real>(cs: &[SpdMatrix<T>], m: &SpdMatrix<T>) -> Result<T> {
    let mut total = T::zero();
    for c in cs {
        total += logeuclid_distance(c, m)?.powi(2);
    }
    Ok(total)
}

pub fn tangent_coords<T: Real>(c: &SpdMatrix<T>, f: &SpdMatrix<T>) -> Result<SymTangent<T>> {
    check_same_dim(c, f)?;
    Ok(SymTangent::from_matrix(matrix_log(c)? - matrix_log(f)?))
}

pub fn reconstruct<T: Real>(v: &SymTangent<T>, f: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    if v.matrix.nrows() != f.dim() || v.matrix.ncols() != f.dim() {
        return Err(Error::DimensionMismatch(format!("tangent {}x{} at a {}x{} base", v.matrix.nrows(), v.matrix.ncols(), f.dim(), f.dim())));
    }
    Ok(matrix_exp(&(matrix_log(f)? + &v.matrix)))
}

/// Number of free entries of a `k × k` symmetric matrix.
pub fn sym_dim(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Isometric vectorization: diagonal first, then `√2·m_ij` for `i < j` in row-major order.
pub fn vec_sym<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    let k = m.nrows();
    let root2 = T::lit(std::f64::consts::SQRT_2);
    let mut v = Vec::with_capacity(sym_dim(k));
    v.extend((0..k).map(|i| m[(i, i)]));
    for i in 0..k {
        for j in (i + 1)..k {
            v.push(root2 * m[(i, j)]);
        }
    }
    DVector::from_vec(v)
}

pub fn unvec_sym<T: Real>(v: &DVector<T>) -> Result<DMatrix<T>> {
    let len = v.len();
    // k(k+1)/2 = len
    let k = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if sym_dim(k) != len {
        return Err(Error::LengthMismatch { expected: sym_dim(k + 1), got: len });
    }
    let inv_root2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        m[(i, i)] = v[i];
    }
    let mut idx = k;
    for i in 0..k {
        for j in (i + 1)..k {
            let x = v[idx] * inv_root2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    Ok(m)
}

/// Per-subject multi-run time series (`T_r × K`, time by region).
#[derive(Debug, Clone)]
pub struct TimeSeriesPanel<T: Real> {
    pub runs: Vec<DMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct CovarianceReduction<T: Real> {
    pub covariance: SpdMatrix<T>,
    /// Set when eigenvalues had to be raised to the floor.
    pub floored: bool,
}

/// Averages per-run correlation matrices (columns demeaned and scaled to unit sample variance).
pub fn covariance_from_runs<T: Real>(panel: &TimeSeriesPanel<T>, eps_pd: T) -> Result<CovarianceReduction<T>> {
    let first = panel.runs.first().ok_or(Error::EmptySample)?;
    let k = first.ncols();
    let mut acc = DMatrix::zeros(k, k);
    for run in &panel.runs {
        if run.ncols() != k {
            return Err(Error::DimensionMismatch(format!("run has {} regions, expected {k}", run.ncols())));
        }
        if run.nrows() < 2 {
            return Err(Error::Invalid(format!("run has {} time points; at least 2 required", run.nrows())));
        }
        if !linalg::all_finite(run) {
            return Err(Error::Invalid("time series contains non-finite values".into()));
        }
        let t = T::from_usize_lossy(run.nrows());
        let mut z = run.clone();
        for (c, mut col) in z.column_iter_mut().enumerate() {
            let mean = col.sum() / t;
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / (t - T::one())).sqrt();
            if !(sd > T::zero()) {
                return Err(Error::DegenerateChannel(c));
            }
            col /= sd;
        }
        acc += z.transpose() * &z / (t - T::one());
    }
    let mean = linalg::symmetrize(&(acc / T::from_usize_lossy(panel.runs.len())));
    let min = linalg::min_eigenvalue(&mean);
    if min > eps_pd {
        Ok(CovarianceReduction { covariance: SpdMatrix::from_trusted(mean), floored: false })
    } else {
        let repaired = linalg::sym_apply(&mean, |x| x.max(eps_pd * T::lit(2.0)));
        Ok(CovarianceReduction { covariance: SpdMatrix::from_trusted(repaired), floored: true })
    }
}

/// Averages raw channels (`T × C`) into regions by a label per channel.
pub fn parcel_average<T: Real>(raw: &DMatrix<T>, labels: &[usize], n_regions: usize) -> Result<DMatrix<T>> {
    if labels.len() != raw.ncols() {
        return Err(Error::LengthMismatch { expected: raw.ncols(), got: labels.len() });
    }
    let mut out = DMatrix::zeros(raw.nrows(), n_regions);
    let mut counts = vec![0usize; n_regions];
    for (c, &l) in labels.iter().enumerate() {
        if l >= n_regions {
            return Err(Error::Invalid(format!("label {l} out of range for {n_regions} regions")));
        }
        counts[l] += 1;
        let mut dst = out.column_mut(l);
        dst += raw.column(c);
    }
    for (l, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::Invalid(format!("region {l} has no channels")));
        }
        let mut col = out.column_mut(l);
        col /= T::from_usize_lossy(n);
    }
    Ok(out)
}
