//! Joint statistics of landmark shapes and connectivity matrices with a kinship-informed
//! variance-component model.
//!
//! Numerical code is generic over [`Real`] (`f32`, `f64`); kinship coefficients also work with
//! exact rationals. The `*F64` aliases below name the common concrete types.

pub mod cca;
pub mod error;
pub mod io;
pub mod lddmm;
pub mod linalg;
pub mod optim;
pub mod pedigree;
pub mod scalar;
pub mod simulation;
pub mod spd;
pub mod tangent_stats;
pub mod variance_components;

pub use error::{Error, Result};
pub use scalar::Real;

pub type KinshipF64 = pedigree::KinshipMatrix<f64>;
pub type SpdMatrixF64 = spd::SpdMatrix<f64>;
pub type SymTangentF64 = spd::SymTangent<f64>;
pub type LandmarkSetF64 = lddmm::LandmarkSet<f64>;
pub type MomentaF64 = lddmm::Momenta<f64>;
pub type KernelSpecF64 = lddmm::KernelSpec<f64>;
pub type PcaBasisF64 = tangent_stats::PcaBasis<f64>;
pub type VcFitF64 = variance_components::VcFit<f64>;
pub type CcaModeF64 = cca::CcaMode<f64>;
