//! Landmark LDDMM: Procrustes template, Gaussian-sum RKHS kernels, Hamiltonian geodesic
//! shooting and penalized template-to-target matching over initial momenta.
//!
//! Velocity fields are represented by momenta attached to the template landmarks,
//! `v₀(x) = Σₗ K(x, xₗ) pₗ`, so the momenta fully parameterize the deformation.

mod kernel;
mod matching;
mod procrustes;
mod shooting;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::{Error, Real, Result};

pub use kernel::{kernel_apply, momentum_gram, vnorm_sq, KernelSpec};
pub use matching::{match_gradient, match_landmarks, match_objective, MatchOptions, MatchResult};
pub use procrustes::{centroid_size, gpa, opa_rotation, ProcrustesResult};
pub use shooting::{deform_points, hamiltonian, shoot, DeformationPath, DEFAULT_STEPS};

/// Ordered 3D landmark configuration; point order defines correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet<T: Real> {
    pub points: Vec<Vector3<T>>,
}

/// Per-landmark momentum vectors attached to a template.
#[derive(Debug, Clone, PartialEq)]
pub struct Momenta<T: Real> {
    pub vectors: Vec<Vector3<T>>,
}

fn rows_to_points<T: Real>(m: &DMatrix<T>) -> Result<Vec<Vector3<T>>> {
    if m.ncols() != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3 columns, found {}", m.ncols())));
    }
    Ok(m.row_iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect())
}

fn points_to_rows<T: Real>(pts: &[Vector3<T>]) -> DMatrix<T> {
    DMatrix::from_fn(pts.len(), 3, |i, j| pts[i][j])
}

fn flatten<T: Real>(pts: &[Vector3<T>]) -> DVector<T> {
    DVector::from_iterator(pts.len() * 3, pts.iter().flat_map(|p| [p.x, p.y, p.z]))
}

fn unflatten<T: Real>(v: &DVector<T>) -> Vec<Vector3<T>> {
    v.as_slice().chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

impl<T: Real> LandmarkSet<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Invalid("landmark coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_matrix(m: &DMatrix<T>) -> Result<Self> {
        Self::new(rows_to_points(m)?)
    }

    /// `L × 3` matrix of coordinates.
    pub fn to_matrix(&self) -> DMatrix<T> {
        points_to_rows(&self.points)
    }

    pub fn flatten(&self) -> DVector<T> {
        flatten(&self.points)
    }

    /// Mean squared distance per landmark to `other`.
    pub fn mean_sq_error(&self, other: &Self) -> T {
        let total = self.points.iter().zip(&other.points).fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_squared());
        total / T::from_usize_lossy(self.len().max(1))
    }
}

impl<T: Real> Momenta<T> {
    pub fn zeros(n: usize) -> Self {
        Self { vectors: vec![Vector3::zeros(); n] }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn from_matrix(m: &DMatrix<T>) -> Result<Self> {
        Ok(Self { vectors: rows_to_points(m)? })
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        points_to_rows(&self.vectors)
    }

    /// Flattened `3L` coefficient vector `(p₁ₓ, p₁ᵧ, p₁𝓏, p₂ₓ, …)`.
    pub fn flatten(&self) -> DVector<T> {
        flatten(&self.vectors)
    }

    pub fn from_flat(v: &DVector<T>) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(Error::LengthMismatch { expected: v.len() - v.len() % 3, got: v.len() });
        }
        Ok(Self { vectors: unflatten(v) })
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { vectors: self.vectors.iter().map(|v| v * c).collect() }
    }
}

/// Flattens momenta into the coefficient vector used by the shape PCA.
pub fn shape_tangent_vector<T: Real>(m: &Momenta<T>, template: &LandmarkSet<T>) -> Result<DVector<T>> {
    if m.len() != template.len() {
        return Err(Error::DimensionMismatch(format!("{} momenta for {} landmarks", m.len(), template.len())));
    }
    Ok(m.flatten())
}
