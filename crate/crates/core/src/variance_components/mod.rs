//! Matrix-normal variance components: `A = XB + G + E` with
//! `G ~ MN(0, K, Σ_G)` and `E ~ MN(0, I, Σ_E)`.
//!
//! The fit rotates rows by the eigenvectors of `K`, after which rows are independent with
//! covariance `λᵢΣ_G + Σ_E`. [`dense_neg2_loglik`] evaluates the same criterion through the
//! full `np × np` Kronecker covariance and serves as the reference implementation.

mod dense;
mod mz;
mod reml;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{linalg, Error, Real, Result};

pub use dense::dense_neg2_loglik;
pub use mz::{mz_reduce, reml_fit_shared_effect, MzReduction};
pub use reml::{
    reml_fit, reml_fit_prepared, reml_gradient, reml_objective, PreparedModel, RotatedData, StartReport, VcFit,
    VcOptions,
};

/// Relatedness, optional fixed-effect design and trait dimension.
#[derive(Debug, Clone)]
pub struct VcModel<T: Real> {
    pub k: DMatrix<T>,
    pub x: Option<DMatrix<T>>,
    pub p: usize,
}

impl<T: Real> VcModel<T> {
    pub fn new(k: DMatrix<T>, x: Option<DMatrix<T>>, p: usize) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::DimensionMismatch(format!("kinship is {}x{}", k.nrows(), k.ncols())));
        }
        if p == 0 {
            return Err(Error::InvalidModel("trait dimension must be positive".into()));
        }
        if !linalg::all_finite(&k) {
            return Err(Error::InvalidModel("kinship has non-finite entries".into()));
        }
        let scale = k.amax().max(T::one());
        if linalg::max_asymmetry(&k) > T::lit(1e-8) * scale {
            return Err(Error::InvalidModel("kinship is not symmetric".into()));
        }
        if let Some(x) = &x {
            if x.nrows() != k.nrows() {
                return Err(Error::LengthMismatch { expected: k.nrows(), got: x.nrows() });
            }
        }
        Ok(Self { k, x, p })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitBlock {
    Size,
    Shape,
    Connectivity,
}

/// Block label of every trait column.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TraitPartition {
    pub labels: Vec<TraitBlock>,
}

impl TraitPartition {
    /// `[size, shape × p_s, connectivity × p_c]`.
    pub fn standard(p_s: usize, p_c: usize) -> Self {
        let mut labels = vec![TraitBlock::Size];
        labels.extend(std::iter::repeat_n(TraitBlock::Shape, p_s));
        labels.extend(std::iter::repeat_n(TraitBlock::Connectivity, p_c));
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self, block: TraitBlock) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, b)| **b == block).map(|(i, _)| i).collect()
    }

    /// Blocks in first-appearance order.
    pub fn blocks(&self) -> Vec<TraitBlock> {
        let mut out = Vec::new();
        for b in &self.labels {
            if !out.contains(b) {
                out.push(*b);
            }
        }
        out
    }

    pub fn check(&self, p: usize) -> Result<()> {
        if self.labels.len() != p {
            return Err(Error::LengthMismatch { expected: p, got: self.labels.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlockHeritability {
    pub block: TraitBlock,
    pub h2: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HeritabilityReport {
    pub overall: f64,
    pub blocks: Vec<BlockHeritability>,
}

fn trace_ratio<T: Real>(g: &DMatrix<T>, e: &DMatrix<T>, idx: &[usize]) -> f64 {
    let tg: f64 = idx.iter().map(|&i| g[(i, i)].as_f64()).sum();
    let te: f64 = idx.iter().map(|&i| e[(i, i)].as_f64()).sum();
    if tg + te > 0.0 {
        (tg / (tg + te)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Trace ratios `tr Σ_G / tr(Σ_G + Σ_E)`, overall and per block.
pub fn heritability<T: Real>(sigma_g: &DMatrix<T>, sigma_e: &DMatrix<T>, part: &TraitPartition) -> Result<HeritabilityReport> {
    let p = sigma_g.nrows();
    part.check(p)?;
    if sigma_e.shape() != (p, p) || sigma_g.ncols() != p {
        return Err(Error::DimensionMismatch("Σ_G and Σ_E must be square of equal size".into()));
    }
    let all: Vec<usize> = (0..p).collect();
    let blocks = part
        .blocks()
        .into_iter()
        .map(|block| BlockHeritability { block, h2: trace_ratio(sigma_g, sigma_e, &part.indices(block)) })
        .collect();
    Ok(HeritabilityReport { overall: trace_ratio(sigma_g, sigma_e, &all), blocks })
}

/// Draws from the model with `K^{1/2}` precomputed.
#[derive(Debug, Clone)]
pub struct ScoreSampler<T: Real> {
    k_half: DMatrix<T>,
}

impl<T: Real> ScoreSampler<T> {
    /// Symmetric square root of `K` with negative eigenvalues clipped to zero.
    pub fn new(k: &DMatrix<T>) -> Self {
        Self { k_half: linalg::psd_sqrt(k) }
    }

    /// Square root from a precomputed eigendecomposition `K = Q diag(λ) Qᵀ`.
    pub fn from_eigen(lambda: &nalgebra::DVector<T>, q: &DMatrix<T>) -> Self {
        let mut scaled = q.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= lambda[j].max(T::zero()).sqrt();
        }
        Self { k_half: &scaled * q.transpose() }
    }

    /// `K^{1/2} U Σ_G^{1/2ᵀ} + V Σ_E^{1/2ᵀ}`, filling `U` then `V` row by row.
    pub fn sample<R: rand::Rng + ?Sized>(&self, sigma_g: &DMatrix<T>, sigma_e: &DMatrix<T>, rng: &mut R) -> Result<DMatrix<T>> {
        let n = self.k_half.nrows();
        let p = sigma_g.nrows();
        if sigma_g.shape() != (p, p) || sigma_e.shape() != (p, p) {
            return Err(Error::DimensionMismatch("Σ_G and Σ_E must be square of equal size".into()));
        }
        let mut draw = || {
            let mut m = DMatrix::zeros(n, p);
            for i in 0..n {
                for j in 0..p {
                    let z: f64 = StandardNormal.sample(rng);
                    m[(i, j)] = T::lit(z);
                }
            }
            m
        };
        let u = draw();
        let v = draw();
        let g_half = linalg::psd_sqrt(sigma_g);
        let e_half = linalg::psd_sqrt(sigma_e);
        Ok(&self.k_half * u * g_half.transpose() + v * e_half.transpose())
    }
}

/// One deterministic draw of an `n × p` score matrix.
pub fn sample_scores<T: Real>(model: &VcModel<T>, sigma_g: &DMatrix<T>, sigma_e: &DMatrix<T>, seed: u64) -> Result<DMatrix<T>> {
    if sigma_g.nrows() != model.p {
        return Err(Error::LengthMismatch { expected: model.p, got: sigma_g.nrows() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScoreSampler::new(&model.k).sample(sigma_g, sigma_e, &mut rng)
}
