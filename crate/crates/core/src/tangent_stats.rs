//! Confounder regression and principal components on tangent coordinates.
//!
//! Shape tangents (momenta) are analysed in the V-metric through their cohort Gram matrix,
//! connectivity tangents (`vec_sym` images) in the Frobenius metric. Both routes return
//! components in ambient coordinates and scores satisfying `vᵢ ≈ v̄ + Σⱼ Aᵢⱼ ψⱼ`.

use nalgebra::{DMatrix, DVector};

use crate::variance_components::{TraitBlock, TraitPartition};
use crate::{linalg, Error, Real, Result};

/// Known confounders, one row per subject.
#[derive(Debug, Clone)]
pub struct ConfounderTable<T: Real> {
    pub z: DMatrix<T>,
    /// Columns that also get a squared term.
    pub continuous: Vec<bool>,
}

impl<T: Real> ConfounderTable<T> {
    pub fn new(z: DMatrix<T>, continuous: Vec<bool>) -> Result<Self> {
        if continuous.len() != z.ncols() {
            return Err(Error::LengthMismatch { expected: z.ncols(), got: continuous.len() });
        }
        if !linalg::all_finite(&z) {
            return Err(Error::Invalid("confounders must be finite".into()));
        }
        Ok(Self { z, continuous })
    }

    /// Intercept-only table for `n` subjects.
    pub fn none(n: usize) -> Self {
        Self { z: DMatrix::zeros(n, 0), continuous: Vec::new() }
    }

    /// `[1, z − z̄, (z − z̄)² − mean]`, squares only for continuous columns.
    pub fn design(&self) -> DMatrix<T> {
        let n = self.z.nrows();
        let nf = T::from_usize_lossy(n.max(1));
        let mut cols: Vec<DVector<T>> = vec![DVector::from_element(n, T::one())];
        let mut squares = Vec::new();
        for (j, &cont) in self.continuous.iter().enumerate() {
            let col = self.z.column(j);
            let mean = col.sum() / nf;
            let centered = col.map(|v| v - mean);
            if cont {
                let sq = centered.map(|v| v * v);
                let m2 = sq.sum() / nf;
                squares.push(sq.map(|v| v - m2));
            }
            cols.push(centered);
        }
        cols.extend(squares);
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space via twice-iterated modified Gram–Schmidt.
/// Returns the indices of columns that are (numerically) linear combinations of earlier ones.
fn orthonormal_columns<T: Real>(x: &DMatrix<T>) -> (Vec<DVector<T>>, Vec<usize>) {
    let tol = T::lit(1e-10);
    let mut basis: Vec<DVector<T>> = Vec::new();
    let mut collinear = Vec::new();
    for j in 0..x.ncols() {
        let orig = x.column(j).into_owned();
        let norm0 = orig.norm();
        let mut v = orig;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let norm = v.norm();
        if !(norm > tol * norm0.max(T::lit(1e-300))) || norm0 == T::zero() {
            collinear.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    (basis, collinear)
}

/// Least-squares residuals of every data column on the confounder design.
pub fn regress_out<T: Real>(data: &DMatrix<T>, conf: &ConfounderTable<T>) -> Result<DMatrix<T>> {
    if conf.z.nrows() != data.nrows() {
        return Err(Error::DimensionMismatch(format!("{} data rows vs {} confounder rows", data.nrows(), conf.z.nrows())));
    }
    let design = conf.design();
    if data.nrows() <= design.ncols() {
        return Err(Error::Invalid(format!("{} subjects cannot support {} regressors", data.nrows(), design.ncols())));
    }
    let (basis, collinear) = orthonormal_columns(&design);
    if !collinear.is_empty() {
        return Err(Error::RankDeficientDesign(collinear));
    }
    let mut resid = data.clone();
    for _ in 0..2 {
        for q in &basis {
            let coef = q.transpose() * &resid;
            resid -= q * coef;
        }
    }
    Ok(resid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricTag {
    VMetric,
    Frobenius,
}

/// Inner product used for PCA.
#[derive(Debug, Clone)]
pub enum PcaMetric<T: Real> {
    Frobenius,
    /// Uncentered cohort Gram matrix `Gᵢⱼ = ⟨vᵢ, vⱼ⟩_V`.
    Gram(DMatrix<T>),
}

#[derive(Debug, Clone)]
pub struct PcaBasis<T: Real> {
    pub mean: DVector<T>,
    /// Components ψⱼ as columns, in ambient coordinates.
    pub components: DMatrix<T>,
    /// Per-component variance (divisor n − 1), non-increasing.
    pub explained_variance: DVector<T>,
    /// Total centered variance of the fitted data.
    pub total_variance: T,
    pub metric: MetricTag,
}

#[derive(Debug, Clone)]
pub struct ScoreBlock<T: Real> {
    /// `n × p` scores.
    pub scores: DMatrix<T>,
    pub metric: MetricTag,
}

fn centered_rows<T: Real>(x: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let mean = x.row_mean().transpose();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    (mean, c)
}

/// PCA of the rows of `vectors` (`n × m`) truncated at `p` components.
pub fn fit_pca<T: Real>(vectors: &DMatrix<T>, metric: &PcaMetric<T>, p: usize) -> Result<(PcaBasis<T>, ScoreBlock<T>)> {
    let (n, m) = vectors.shape();
    let max = n.saturating_sub(1).min(m);
    if p > max {
        return Err(Error::TruncationTooLarge { requested: p, max });
    }
    let (mean, xc) = centered_rows(vectors);
    let denom = T::from_usize_lossy(n.saturating_sub(1).max(1));
    match metric {
        PcaMetric::Frobenius => {
            let total = xc.norm_squared() / denom;
            let svd = xc.clone().svd(true, true);
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
            let u = svd.u.expect("svd u");
            let v_t = svd.v_t.expect("svd v_t");
            let mut comps = DMatrix::zeros(m, p);
            let mut scores = DMatrix::zeros(n, p);
            let mut var = DVector::zeros(p);
            for (j, &k) in order.iter().take(p).enumerate() {
                let s = svd.singular_values[k];
                let mut psi = v_t.row(k).transpose();
                let mut sc = u.column(k) * s;
                if sign_flip(&psi) {
                    psi.neg_mut();
                    sc.neg_mut();
                }
                comps.set_column(j, &psi);
                scores.set_column(j, &sc);
                var[j] = s * s / denom;
            }
            Ok((
                PcaBasis { mean, components: comps, explained_variance: var, total_variance: total, metric: MetricTag::Frobenius },
                ScoreBlock { scores, metric: MetricTag::Frobenius },
            ))
        }
        PcaMetric::Gram(g) => {
            if g.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("Gram matrix {}x{} for {n} subjects", g.nrows(), g.ncols())));
            }
            let h = DMatrix::identity(n, n) - DMatrix::from_element(n, n, T::one() / T::from_usize_lossy(n));
            let gc = linalg::symmetrize(&(&h * g * &h));
            let (vals, vecs) = linalg::sym_eigen_sorted(&gc);
            let total = gc.trace() / denom;
            let floor = T::lit(1e-12) * vals[0].abs().max(T::lit(1e-300));
            let rank = vals.iter().take_while(|&&v| v > floor).count();
            if p > rank {
                return Err(Error::TruncationTooLarge { requested: p, max: rank });
            }
            let mut comps = DMatrix::zeros(m, p);
            let mut scores = DMatrix::zeros(n, p);
            let mut var = DVector::zeros(p);
            for j in 0..p {
                let root = vals[j].sqrt();
                let uj = vecs.column(j);
                let mut psi = xc.transpose() * uj / root;
                let mut sc = uj * root;
                if sign_flip(&psi) {
                    psi.neg_mut();
                    sc.neg_mut();
                }
                comps.set_column(j, &psi);
                scores.set_column(j, &sc);
                var[j] = vals[j] / denom;
            }
            Ok((
                PcaBasis { mean, components: comps, explained_variance: var, total_variance: total, metric: MetricTag::VMetric },
                ScoreBlock { scores, metric: MetricTag::VMetric },
            ))
        }
    }
}

fn sign_flip<T: Real>(v: &DVector<T>) -> bool {
    let mut best = T::zero();
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best < T::zero()
}

/// Mean-free tangent vector `Σⱼ θⱼ ψⱼ`.
pub fn reconstruct_tangent<T: Real>(basis: &PcaBasis<T>, coeffs: &DVector<T>) -> Result<DVector<T>> {
    if coeffs.len() != basis.components.ncols() {
        return Err(Error::LengthMismatch { expected: basis.components.ncols(), got: coeffs.len() });
    }
    Ok(&basis.components * coeffs)
}

/// Column standard deviations (divisor n − 1) and the standardized matrix.
pub fn standardize<T: Real>(a: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>)> {
    let n = a.nrows();
    if n < 2 {
        return Err(Error::Invalid("standardization needs at least two rows".into()));
    }
    let cov = linalg::sample_covariance(a);
    let scales = DVector::from_iterator(a.ncols(), (0..a.ncols()).map(|j| cov[(j, j)].sqrt()));
    if let Some(j) = scales.iter().position(|s| !(*s > T::zero())) {
        return Err(Error::Invalid(format!("descriptor column {j} has zero variance")));
    }
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    Ok((out, scales))
}

/// Score matrix `[l, A^S, A^C]` with its column partition.
pub fn assemble_scores<T: Real>(size: &DVector<T>, shape: &ScoreBlock<T>, connectivity: &ScoreBlock<T>) -> Result<(DMatrix<T>, TraitPartition)> {
    let n = size.len();
    for block in [shape, connectivity] {
        if block.scores.nrows() != n {
            return Err(Error::LengthMismatch { expected: n, got: block.scores.nrows() });
        }
    }
    let (ps, pc) = (shape.scores.ncols(), connectivity.scores.ncols());
    let mut a = DMatrix::zeros(n, 1 + ps + pc);
    a.set_column(0, size);
    a.view_mut((0, 1), (n, ps)).copy_from(&shape.scores);
    a.view_mut((0, 1 + ps), (n, pc)).copy_from(&connectivity.scores);
    Ok((a, TraitPartition::standard(ps, pc)))
}

/// Column names `l, As1.., Ac1..` for a partition.
pub fn score_header(part: &TraitPartition) -> Vec<String> {
    let (mut s, mut c) = (0, 0);
    part.labels
        .iter()
        .map(|b| match b {
            TraitBlock::Size => "l".to_string(),
            TraitBlock::Shape => {
                s += 1;
                format!("As{s}")
            }
            TraitBlock::Connectivity => {
                c += 1;
                format!("Ac{c}")
            }
        })
        .collect()
}

pub fn scores_to_csv<T: Real>(a: &DMatrix<T>, part: &TraitPartition) -> Result<String> {
    part.check(a.ncols())?;
    let mut out = score_header(part).join(",");
    out.push('\n');
    out.push_str(&crate::io::matrix_to_csv(a));
    Ok(out)
}

/// Reads a score CSV; the partition comes from the header names.
pub fn scores_from_csv<T: Real>(text: &str, origin: &str) -> Result<(DMatrix<T>, TraitPartition)> {
    let header = text.lines().next().ok_or_else(|| Error::parse(origin, "empty score file"))?;
    let labels = header
        .split(',')
        .map(|h| {
            let h = h.trim();
            if h == "l" {
                Ok(TraitBlock::Size)
            } else if h.starts_with("As") {
                Ok(TraitBlock::Shape)
            } else if h.starts_with("Ac") {
                Ok(TraitBlock::Connectivity)
            } else {
                Err(Error::parse(origin, format!("unknown score column {h:?}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let a = crate::io::matrix_from_csv(text, std::path::Path::new(origin))?;
    let part = TraitPartition { labels };
    part.check(a.ncols())?;
    Ok((a, part))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn score_csv_round_trip() {
        let size = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let shape = ScoreBlock { scores: DMatrix::from_fn(3, 2, |i, j| (i + j) as f64), metric: MetricTag::VMetric };
        let conn = ScoreBlock { scores: DMatrix::from_fn(3, 1, |i, _| i as f64 * 0.5), metric: MetricTag::Frobenius };
        let (a, part) = assemble_scores(&size, &shape, &conn).unwrap();
        let text = scores_to_csv(&a, &part).unwrap();
        assert!(text.starts_with("l,As1,As2,Ac1\n"));
        let (b, p2) = scores_from_csv::<f64>(&text, "mem").unwrap();
        assert_eq!(a, b);
        assert_eq!(part, p2);
    }

    #[test]
    fn intercept_only_demeans() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 10, 3);
        let r = regress_out(&x, &ConfounderTable::none(10)).unwrap();
        let (_, c) = centered_rows(&x);
        assert!((r - c).norm() < 1e-12);
    }

    #[test]
    fn exact_linear_dependence_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random(&mut rng, 12, 2);
        let data = DMatrix::from_fn(12, 2, |i, j| 3.0 * z[(i, 0)] - 2.0 * z[(i, 1)] + j as f64);
        let conf = ConfounderTable::new(z, vec![false, false]).unwrap();
        assert!(regress_out(&data, &conf).unwrap().norm() < 1e-10);
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conf = ConfounderTable::new(random(&mut rng, 30, 3), vec![true, false, true]).unwrap();
        let x = random(&mut rng, 30, 4);
        let r = regress_out(&x, &conf).unwrap();
        let d = conf.design();
        assert_eq!(d.ncols(), 6);
        assert!((d.transpose() * &r).amax() < 1e-8);
        let again = regress_out(&r, &conf).unwrap();
        assert!((again - r).amax() < 1e-10);
    }

    #[test]
    fn collinear_confounders_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 10, 1);
        let z = DMatrix::from_fn(10, 2, |i, j| if j == 0 { a[(i, 0)] } else { 2.0 * a[(i, 0)] });
        let conf = ConfounderTable::new(z, vec![false, false]).unwrap();
        match regress_out(&random(&mut rng, 10, 2), &conf) {
            Err(Error::RankDeficientDesign(cols)) => assert_eq!(cols, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_direction_data() {
        let dir = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let t = [0.5, -1.0, 2.0, 0.1, -1.6];
        let x = DMatrix::from_fn(5, 3, |i, j| mean[j] + t[i] * dir[j]);
        let (basis, scores) = fit_pca(&x, &PcaMetric::Frobenius, 1).unwrap();
        for i in 0..5 {
            let rec = &basis.mean + &basis.components * scores.scores.row(i).transpose();
            assert!((rec - x.row(i).transpose()).norm() < 1e-10);
        }
        let (full, _) = fit_pca(&x, &PcaMetric::Frobenius, 3).unwrap();
        assert!(full.explained_variance[1] < 1e-20);
    }

    #[test]
    fn truncation_bounds() {
        let x = DMatrix::<f64>::zeros(4, 10);
        assert!(matches!(fit_pca(&x, &PcaMetric::Frobenius, 4), Err(Error::TruncationTooLarge { max: 3, .. })));
    }

    #[test]
    fn vmetric_matches_frobenius_for_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 8, 5);
        let g = &x * x.transpose();
        let (fb, fs) = fit_pca(&x, &PcaMetric::Frobenius, 4).unwrap();
        let (vb, vs) = fit_pca(&x, &PcaMetric::Gram(g), 4).unwrap();
        assert!((fb.components - vb.components).amax() < 1e-8);
        assert!((fs.scores - vs.scores).amax() < 1e-8);
        assert!((fb.explained_variance - vb.explained_variance).amax() < 1e-8);
    }

    #[test]
    fn standardize_unit_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(&mut rng, 20, 3) * 5.0;
        let (z, s) = standardize(&x).unwrap();
        let cov = linalg::sample_covariance(&z);
        for j in 0..3 {
            assert!((cov[(j, j)] - 1.0).abs() < 1e-12);
            assert!(s[j] > 0.0);
        }
        assert!(standardize(&DMatrix::<f64>::zeros(5, 1)).is_err());
    }

    #[test]
    fn reconstruct_tangent_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&mut rng, 6, 4);
        let (b, _) = fit_pca(&x, &PcaMetric::Frobenius, 3).unwrap();
        assert!(reconstruct_tangent(&b, &DVector::zeros(3)).unwrap().norm() == 0.0);
        let e1 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(reconstruct_tangent(&b, &e1).unwrap(), b.components.column(1).into_owned());
        assert!(reconstruct_tangent(&b, &DVector::zeros(2)).is_err());
    }
}
