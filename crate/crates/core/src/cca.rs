//! Canonical modes between the shape and connectivity blocks of a fitted covariance,
//! and their display on the manifolds.

use nalgebra::{DMatrix, DVector};

use crate::lddmm::{shoot, KernelSpec, LandmarkSet, Momenta};
use crate::spd::{reconstruct, SpdMatrix, SymTangent};
use crate::tangent_stats::PcaBasis;
use crate::variance_components::{TraitBlock, TraitPartition};
use crate::{linalg, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSource {
    Genetic,
    Environmental,
}

#[derive(Debug, Clone)]
pub struct CcaMode<T: Real> {
    /// Coefficients on the (standardized) shape scores, `θᵀΣ^{SS}θ = 1`.
    pub theta_s: DVector<T>,
    /// Coefficients on the connectivity scores, `ηᵀΣ^{CC}η = 1`.
    pub theta_c: DVector<T>,
    pub correlation: T,
    pub component_index: usize,
    pub source: ModeSource,
}

/// `1e-8 · trace(block) / dim`.
pub fn default_ridge<T: Real>(block: &DMatrix<T>) -> T {
    T::lit(1e-8) * block.trace() / T::from_usize_lossy(block.nrows().max(1))
}

fn pick<T: Real>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn inv_sqrt<T: Real>(block: &DMatrix<T>, name: &str) -> Result<DMatrix<T>> {
    let (vals, vecs) = linalg::sym_eigen_sorted(block);
    let floor = T::lit(1e-14) * vals[0].abs();
    if !(vals[vals.len() - 1] > floor) {
        return Err(Error::BlockNotPd(format!("{name} block (smallest eigenvalue {:e}); increase the ridge", vals[vals.len() - 1].as_f64())));
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| T::one() / v.sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// Whitened-SVD canonical correlation between the shape and connectivity blocks.
///
/// `ridge = None` uses [`default_ridge`] per block. Modes come back with non-increasing
/// correlations, each `θ` sign-fixed so its largest-magnitude entry is positive.
pub fn cca_modes<T: Real>(
    sigma: &DMatrix<T>,
    part: &TraitPartition,
    n_modes: usize,
    ridge: Option<T>,
    source: ModeSource,
) -> Result<Vec<CcaMode<T>>> {
    if !sigma.is_square() {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    part.check(sigma.nrows())?;
    let s_idx = part.indices(TraitBlock::Shape);
    let c_idx = part.indices(TraitBlock::Connectivity);
    if s_idx.is_empty() || c_idx.is_empty() {
        return Err(Error::DimensionMismatch("partition needs shape and connectivity columns".into()));
    }
    let max = s_idx.len().min(c_idx.len());
    if n_modes > max {
        return Err(Error::TooManyModes { requested: n_modes, max });
    }
    if ridge.is_some_and(|r| r < T::zero()) {
        return Err(Error::Invalid("ridge must be non-negative".into()));
    }
    let mut ss = pick(sigma, &s_idx, &s_idx);
    let mut cc = pick(sigma, &c_idx, &c_idx);
    let sc = pick(sigma, &s_idx, &c_idx);
    let rs = ridge.unwrap_or_else(|| default_ridge(&ss));
    let rc = ridge.unwrap_or_else(|| default_ridge(&cc));
    ss += DMatrix::identity(ss.nrows(), ss.nrows()) * rs;
    cc += DMatrix::identity(cc.nrows(), cc.nrows()) * rc;
    let ws = inv_sqrt(&linalg::symmetrize(&ss), "shape")?;
    let wc = inv_sqrt(&linalg::symmetrize(&cc), "connectivity")?;
    let m = &ws * sc * &wc;
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
    Ok(order
        .into_iter()
        .take(n_modes)
        .enumerate()
        .map(|(rank, k)| {
            let mut theta_s = &ws * u.column(k);
            let mut theta_c = &wc * v_t.row(k).transpose();
            let big = theta_s.iter().fold(T::zero(), |b, &x| if x.abs() > b.abs() { x } else { b });
            if big < T::zero() {
                theta_s.neg_mut();
                theta_c.neg_mut();
            }
            CcaMode {
                theta_s,
                theta_c,
                correlation: svd.singular_values[k].clamp(T::zero(), T::one()),
                component_index: rank,
                source,
            }
        })
        .collect())
}

/// A PCA basis together with the factors used to standardize its scores.
#[derive(Debug, Clone)]
pub struct DisplayBasis<T: Real> {
    pub basis: PcaBasis<T>,
    pub scales: DVector<T>,
}

impl<T: Real> DisplayBasis<T> {
    fn check(&self, len: usize) -> Result<()> {
        let p = self.basis.components.ncols();
        if self.scales.len() != p || len != p {
            return Err(Error::LengthMismatch { expected: p, got: len });
        }
        Ok(())
    }

    /// Unit direction in unnormalized score space, its score standard deviation and the
    /// tangent `cσ Σⱼ uⱼ ψⱼ`.
    fn mode_tangent(&self, theta: &DVector<T>, c: T) -> Result<(T, DVector<T>)> {
        self.check(theta.len())?;
        let d = theta.component_mul(&self.scales);
        let norm = d.norm();
        if norm == T::zero() {
            return Ok((T::zero(), DVector::zeros(self.basis.components.nrows())));
        }
        let u = d / norm;
        let sigma = u.iter().zip(self.basis.explained_variance.iter()).fold(T::zero(), |s, (a, v)| s + *a * *a * *v).sqrt();
        Ok((sigma, &self.basis.components * u * (c * sigma)))
    }
}

/// Base points of the two displays.
#[derive(Debug, Clone)]
pub struct DisplayAnchors<T: Real> {
    pub template: LandmarkSet<T>,
    pub kernel: KernelSpec<T>,
    pub steps: usize,
    pub frechet_mean: SpdMatrix<T>,
}

impl<T: Real> DisplayAnchors<T> {
    fn shape_at(&self, tangent: &DVector<T>) -> Result<LandmarkSet<T>> {
        if tangent.iter().all(|x| *x == T::zero()) {
            return Ok(self.template.clone());
        }
        Ok(shoot(&self.kernel, &self.template, &Momenta::from_flat(tangent)?, self.steps)?.endpoint().clone())
    }

    fn connectivity_at(&self, tangent: &DVector<T>) -> Result<SpdMatrix<T>> {
        if tangent.iter().all(|x| *x == T::zero()) {
            return Ok(self.frechet_mean.clone());
        }
        reconstruct(&SymTangent::from_vector(tangent.clone())?, &self.frechet_mean)
    }
}

#[derive(Debug, Clone)]
pub struct ModeDisplay<T: Real> {
    pub sigma_shape: T,
    pub sigma_connectivity: T,
    /// Tangents at `+c`; the `−c` displays use their negation.
    pub shape_tangent: DVector<T>,
    pub connectivity_tangent: DVector<T>,
    pub shape_plus: LandmarkSet<T>,
    pub shape_minus: LandmarkSet<T>,
    pub connectivity_plus: SpdMatrix<T>,
    pub connectivity_minus: SpdMatrix<T>,
}

/// Shape and connectivity at `±c_s σ_S` and `±c_c σ_C` along a canonical mode.
pub fn mode_displays<T: Real>(
    mode: &CcaMode<T>,
    shape: &DisplayBasis<T>,
    connectivity: &DisplayBasis<T>,
    scale: (T, T),
    anchors: &DisplayAnchors<T>,
) -> Result<ModeDisplay<T>> {
    let (sigma_shape, shape_tangent) = shape.mode_tangent(&mode.theta_s, scale.0)?;
    let (sigma_connectivity, connectivity_tangent) = connectivity.mode_tangent(&mode.theta_c, scale.1)?;
    Ok(ModeDisplay {
        sigma_shape,
        sigma_connectivity,
        shape_plus: anchors.shape_at(&shape_tangent)?,
        shape_minus: anchors.shape_at(&-&shape_tangent)?,
        connectivity_plus: anchors.connectivity_at(&connectivity_tangent)?,
        connectivity_minus: anchors.connectivity_at(&-&connectivity_tangent)?,
        shape_tangent,
        connectivity_tangent,
    })
}

#[derive(Debug, Clone)]
pub struct SizeDisplay<T: Real> {
    /// `Σ^{C,size} / Σ^{size,size}` in standardized units.
    pub beta: DVector<T>,
    pub sigma_size: T,
    pub tangent: DVector<T>,
    pub plus: SpdMatrix<T>,
    pub minus: SpdMatrix<T>,
}

/// Connectivity predicted by a `±cσ` change of size under the regression implied by `sigma`.
pub fn size_regression_display<T: Real>(
    sigma: &DMatrix<T>,
    part: &TraitPartition,
    connectivity: &DisplayBasis<T>,
    c: T,
    anchors: &DisplayAnchors<T>,
) -> Result<SizeDisplay<T>> {
    part.check(sigma.nrows())?;
    let size = part.indices(TraitBlock::Size);
    let &[l] = size.as_slice() else {
        return Err(Error::DimensionMismatch(format!("expected one size column, found {}", size.len())));
    };
    let c_idx = part.indices(TraitBlock::Connectivity);
    connectivity.check(c_idx.len())?;
    let var = sigma[(l, l)];
    if !(var > T::zero()) {
        return Err(Error::Invalid("size variance must be positive".into()));
    }
    let sigma_size = var.sqrt();
    let beta = DVector::from_iterator(c_idx.len(), c_idx.iter().map(|&j| sigma[(j, l)] / var));
    let coeffs = beta.component_mul(&connectivity.scales) * (c * sigma_size);
    let tangent = &connectivity.basis.components * coeffs;
    Ok(SizeDisplay {
        plus: anchors.connectivity_at(&tangent)?,
        minus: anchors.connectivity_at(&-&tangent)?,
        beta,
        sigma_size,
        tangent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(p, p) * 0.1
    }

    #[test]
    fn scalar_blocks_give_scalar_correlation() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 2.0, -0.6, 0.1, -0.6, 0.5]);
        let modes = cca_modes(&s, &TraitPartition::standard(1, 1), 1, Some(0.0), ModeSource::Genetic).unwrap();
        let expect = 0.6 / (2.0f64 * 0.5).sqrt();
        assert!((modes[0].correlation - expect).abs() < 1e-12);
    }

    #[test]
    fn independent_blocks_have_zero_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = DMatrix::zeros(6, 6);
        s.view_mut((1, 1), (2, 2)).copy_from(&random_spd(&mut rng, 2));
        s.view_mut((3, 3), (3, 3)).copy_from(&random_spd(&mut rng, 3));
        s[(0, 0)] = 1.0;
        let modes = cca_modes(&s, &TraitPartition::standard(2, 3), 2, None, ModeSource::Environmental).unwrap();
        assert!(modes.iter().all(|m| m.correlation < 1e-12));
    }

    #[test]
    fn normalization_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_spd(&mut rng, 7);
        let part = TraitPartition::standard(3, 3);
        let modes = cca_modes(&s, &part, 3, Some(0.0), ModeSource::Genetic).unwrap();
        let ss = pick(&s, &[1, 2, 3], &[1, 2, 3]);
        let cc = pick(&s, &[4, 5, 6], &[4, 5, 6]);
        for (i, a) in modes.iter().enumerate() {
            assert!(((a.theta_s.transpose() * &ss * &a.theta_s)[0] - 1.0).abs() < 1e-8);
            assert!(((a.theta_c.transpose() * &cc * &a.theta_c)[0] - 1.0).abs() < 1e-8);
            for b in &modes[i + 1..] {
                assert!((a.theta_s.transpose() * &ss * &b.theta_s)[0].abs() < 1e-8);
                assert!(a.correlation >= b.correlation);
            }
        }
    }

    #[test]
    fn too_many_modes() {
        let s = DMatrix::<f64>::identity(4, 4);
        let r = cca_modes(&s, &TraitPartition::standard(1, 2), 2, None, ModeSource::Genetic);
        assert!(matches!(r, Err(Error::TooManyModes { max: 1, .. })));
    }

    #[test]
    fn singular_block_without_ridge() {
        let mut s = DMatrix::<f64>::identity(4, 4);
        s[(1, 1)] = 0.0;
        let part = TraitPartition::standard(2, 1);
        let r = cca_modes(&s, &part, 1, Some(0.0), ModeSource::Genetic);
        assert!(matches!(r, Err(Error::BlockNotPd(_))));
        assert!(cca_modes(&s, &part, 1, None, ModeSource::Genetic).is_ok());
    }
}
