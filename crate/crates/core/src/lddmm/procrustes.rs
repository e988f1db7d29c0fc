use nalgebra::{Matrix3, Vector3};

use super::LandmarkSet;
use crate::{linalg, Error, Real, Result};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

/// Output of generalized Procrustes analysis.
///
/// `aligned[i] ≈ rotations[i] · scale_i · (shapes[i] − translations[i])`, with
/// `scale_i = exp(−log_sizes[i])` when scale is removed and 1 otherwise.
#[derive(Debug, Clone)]
pub struct ProcrustesResult<T: Real> {
    pub aligned: Vec<LandmarkSet<T>>,
    pub template: LandmarkSet<T>,
    /// Log centroid sizes before scaling.
    pub log_sizes: Vec<T>,
    pub rotations: Vec<Matrix3<T>>,
    pub translations: Vec<Vector3<T>>,
    pub iterations: usize,
    pub converged: bool,
}

fn centroid<T: Real>(pts: &[Vector3<T>]) -> Vector3<T> {
    pts.iter().fold(Vector3::zeros(), |acc, p| acc + p) / T::from_usize_lossy(pts.len())
}

pub fn centroid_size<T: Real>(shape: &LandmarkSet<T>) -> T {
    let c = centroid(&shape.points);
    shape.points.iter().fold(T::zero(), |acc, p| acc + (p - c).norm_squared()).sqrt()
}

fn scatter<T: Real>(pts: &[Vector3<T>]) -> Matrix3<T> {
    pts.iter().fold(Matrix3::zeros(), |acc, p| acc + p * p.transpose())
}

/// Proper rotation `R` minimizing `Σ ‖R·mₗ − rₗ‖²` for centered configurations.
pub fn opa_rotation<T: Real>(reference: &[Vector3<T>], moving: &[Vector3<T>]) -> Matrix3<T> {
    let h = moving.iter().zip(reference).fold(Matrix3::zeros(), |acc, (m, r)| acc + m * r.transpose());
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut fix = Matrix3::identity();
    if d < T::zero() {
        fix[(2, 2)] = -T::one();
    }
    v * fix * u.transpose()
}

fn rotate<T: Real>(r: &Matrix3<T>, pts: &[Vector3<T>]) -> Vec<Vector3<T>> {
    pts.iter().map(|p| r * p).collect()
}

fn frob_diff<T: Real>(a: &[Vector3<T>], b: &[Vector3<T>]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + (x - y).norm_squared()).sqrt()
}

/// Principal-axes frame of a centered configuration, with a deterministic sign convention.
fn canonical_frame<T: Real>(pts: &[Vector3<T>]) -> Matrix3<T> {
    let cov = nalgebra::DMatrix::from_fn(3, 3, |i, j| scatter(pts)[(i, j)]);
    let (_, vecs) = linalg::sym_eigen_sorted(&cov);
    let mut axes: Vec<Vector3<T>> = (0..2).map(|c| Vector3::new(vecs[(0, c)], vecs[(1, c)], vecs[(2, c)])).collect();
    for a in axes.iter_mut() {
        let skew = pts.iter().fold(T::zero(), |acc, p| acc + p.dot(a).powi(3));
        let scale = pts.iter().fold(T::zero(), |acc, p| acc + p.dot(a).abs().powi(3));
        let flip = if skew.abs() > T::lit(1e-8) * scale {
            skew < T::zero()
        } else {
            let far = pts.iter().map(|p| p.dot(a)).fold(T::zero(), |best, v| if v.abs() > best.abs() { v } else { best });
            far < T::zero()
        };
        if flip {
            *a = -*a;
        }
    }
    let third = axes[0].cross(&axes[1]);
    // rows are the new axes, so frame · p expresses p in principal coordinates
    Matrix3::from_rows(&[axes[0].transpose(), axes[1].transpose(), third.transpose()])
}

/// Generalized Procrustes analysis against an evolving mean shape.
///
/// Removes translation, rotation and (optionally) scale. The converged mean is expressed in its
/// principal-axes frame so the template does not depend on the orientation of the inputs.
pub fn gpa<T: Real>(shapes: &[LandmarkSet<T>], remove_scale: bool) -> Result<ProcrustesResult<T>> {
    if shapes.len() < 2 {
        return Err(Error::DimensionMismatch(format!("GPA needs at least 2 shapes, got {}", shapes.len())));
    }
    let l = shapes[0].len();
    if l < 3 {
        return Err(Error::DimensionMismatch(format!("GPA needs at least 3 landmarks, got {l}")));
    }
    if let Some((i, s)) = shapes.iter().enumerate().find(|(_, s)| s.len() != l) {
        return Err(Error::DimensionMismatch(format!("shape {i} has {} landmarks, expected {l}", s.len())));
    }

    let mut translations = Vec::with_capacity(shapes.len());
    let mut log_sizes = Vec::with_capacity(shapes.len());
    let mut working: Vec<Vec<Vector3<T>>> = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        let c = centroid(&s.points);
        let centered: Vec<Vector3<T>> = s.points.iter().map(|p| p - c).collect();
        let size = centered.iter().fold(T::zero(), |acc, p| acc + p.norm_squared()).sqrt();
        let sv = scatter(&centered).symmetric_eigenvalues();
        let mut ev = [sv[0], sv[1], sv[2]];
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        if !(size > T::zero()) || ev[1] <= T::lit(1e-12) * ev[0] {
            return Err(Error::DegenerateConfiguration(format!("shape {i} is collinear or collapsed")));
        }
        translations.push(c);
        log_sizes.push(size.ln());
        working.push(if remove_scale { centered.iter().map(|p| p / size).collect() } else { centered });
    }

    let normalize = |m: Vec<Vector3<T>>| -> Vec<Vector3<T>> {
        if remove_scale {
            let s = m.iter().fold(T::zero(), |acc, p| acc + p.norm_squared()).sqrt();
            m.into_iter().map(|p| p / s).collect()
        } else {
            m
        }
    };

    let nf = T::from_usize_lossy(shapes.len());
    let mut mean = working[0].clone();
    let mut rotations = vec![Matrix3::identity(); shapes.len()];
    let mut aligned = working.clone();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        for (i, w) in working.iter().enumerate() {
            rotations[i] = opa_rotation(&mean, w);
            aligned[i] = rotate(&rotations[i], w);
        }
        let mut next = vec![Vector3::zeros(); l];
        for a in &aligned {
            for (n, p) in next.iter_mut().zip(a) {
                *n += p;
            }
        }
        let next = normalize(next.into_iter().map(|p| p / nf).collect());
        let change = frob_diff(&next, &mean);
        mean = next;
        if change < T::lit(TOL) {
            converged = true;
            break;
        }
    }
    // final alignment to the converged mean, then express everything in its principal frame
    for (i, w) in working.iter().enumerate() {
        rotations[i] = opa_rotation(&mean, w);
    }
    let frame = canonical_frame(&mean);
    let template = LandmarkSet { points: rotate(&frame, &mean) };
    let mut out = Vec::with_capacity(shapes.len());
    for (i, w) in working.iter().enumerate() {
        rotations[i] = frame * rotations[i];
        out.push(LandmarkSet { points: rotate(&rotations[i], w) });
    }
    Ok(ProcrustesResult { aligned: out, template, log_sizes, rotations, translations, iterations, converged })
}
