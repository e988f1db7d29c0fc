use nalgebra::{DMatrix, DVector};

use super::reml::{floor_for, multi_start, standard_errors, start_covariance, start_points, CholParam, VcFit, VcOptions};
use super::{dense_neg2_loglik, VcModel};
use crate::{Error, Real, Result};

/// Groups of perfectly correlated rows (`K_ij = K_ii = K_jj`) and the equivalent
/// shared-effect form `K = Z K_r Zᵀ`.
#[derive(Debug, Clone)]
pub struct MzReduction<T: Real> {
    /// Groups with at least two members, by row index.
    pub groups: Vec<Vec<usize>>,
    /// Row of the reduced kinship each subject maps to.
    pub class_of: Vec<usize>,
    /// `n × m` incidence matrix `Z`.
    pub incidence: DMatrix<T>,
    /// `m × m` kinship among group representatives.
    pub k_reduced: DMatrix<T>,
}

impl<T: Real> MzReduction<T> {
    /// Number of rows removed; the rank of `K` is at most `n` minus this.
    pub fn rows_removed(&self) -> usize {
        self.groups.iter().map(|g| g.len() - 1).sum()
    }

    pub fn expanded_kinship(&self) -> DMatrix<T> {
        &self.incidence * &self.k_reduced * self.incidence.transpose()
    }
}

pub fn mz_reduce<T: Real>(model: &VcModel<T>) -> MzReduction<T> {
    let k = &model.k;
    let n = k.nrows();
    let tol = T::lit(1e-12) * k.amax().max(T::one());
    let mut class_of = vec![usize::MAX; n];
    let mut reps = Vec::new();
    let mut groups = Vec::new();
    for i in 0..n {
        if class_of[i] != usize::MAX {
            continue;
        }
        class_of[i] = reps.len();
        let mut members = vec![i];
        for j in i + 1..n {
            if class_of[j] == usize::MAX
                && (k[(i, j)] - k[(i, i)]).abs() <= tol
                && (k[(i, j)] - k[(j, j)]).abs() <= tol
                && k[(i, i)] > T::zero()
            {
                class_of[j] = reps.len();
                members.push(j);
            }
        }
        reps.push(i);
        if members.len() > 1 {
            groups.push(members);
        }
    }
    let m = reps.len();
    let incidence = DMatrix::from_fn(n, m, |i, c| if class_of[i] == c { T::one() } else { T::zero() });
    let k_reduced = DMatrix::from_fn(m, m, |r, c| k[(reps[r], reps[c])]);
    MzReduction { groups, class_of, incidence, k_reduced }
}

/// Fits the same model with the genetic effect written as `Z G_r`, `G_r ~ MN(0, K_r, Σ_G)`,
/// using the dense likelihood and central-difference gradients. Independent of the
/// eigen-rotation path; intended for small cross-checks.
pub fn reml_fit_shared_effect<T: Real>(
    a: &DMatrix<T>,
    red: &MzReduction<T>,
    x: Option<&DMatrix<T>>,
    opts: &VcOptions<T>,
) -> Result<VcFit<T>> {
    let n = red.incidence.nrows();
    if a.nrows() != n {
        return Err(Error::LengthMismatch { expected: n, got: a.nrows() });
    }
    let k = red.expanded_kinship();
    let s = start_covariance(a, x);
    let param = CholParam::new(floor_for(&s, opts.e_floor)?);
    let value = |th: &DVector<T>| -> Option<T> {
        let (g, e) = param.sigmas(th)?;
        dense_neg2_loglik(&g, &e, &k, a, x).ok().filter(|f| f.is_finite())
    };
    let objective = |th: &DVector<T>| -> Option<(T, DVector<T>)> {
        let f = value(th)?;
        let mut grad = DVector::zeros(th.len());
        for j in 0..th.len() {
            let h = T::lit(1e-6) * th[j].abs().max(T::one());
            let mut up = th.clone();
            up[j] += h;
            let mut dn = th.clone();
            dn[j] -= h;
            grad[j] = (value(&up)? - value(&dn)?) / (h * T::lit(2.0));
        }
        Some((f, grad))
    };
    let (best, starts) = multi_start(objective, start_points(&s, &param), &opts.bfgs)?;
    let (lg, le) = param.unpack(&best.x).ok_or(Error::SingularRowCovariance(f64::INFINITY))?;
    let (se_g, se_e, min_curvature) = if opts.standard_errors { standard_errors(&param, &best.x, objective) } else { (None, None, None) };
    let spread = {
        let (vals, _) = crate::linalg::sym_eigen_sorted(&k);
        vals[0] - vals[vals.len() - 1]
    };
    Ok(VcFit {
        sigma_g: &lg * lg.transpose(),
        sigma_e: &le * le.transpose(),
        chol_g: lg,
        chol_e: le,
        b: None,
        reml: best.f,
        converged: best.termination.converged(),
        iterations: best.iterations,
        termination: best.termination,
        identifiability_warning: !(spread > T::lit(1e-8)),
        starts,
        history: best.history,
        se_g,
        se_e,
        min_curvature,
    })
}
