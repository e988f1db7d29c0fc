use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::VcModel;
use crate::optim::{self, BfgsOptions, Termination};
use crate::{linalg, Error, Real, Result};

const MAX_ROW_CONDITION: f64 = 1e12;

/// Eigen-decomposed relatedness, reusable across trait matrices.
#[derive(Debug, Clone)]
pub struct PreparedModel<T: Real> {
    pub lambda: DVector<T>,
    pub q: DMatrix<T>,
    pub x_rot: Option<DMatrix<T>>,
    pub p: usize,
}

impl<T: Real> PreparedModel<T> {
    pub fn new(model: &VcModel<T>) -> Result<Self> {
        let (mut lambda, q) = linalg::sym_eigen_sorted(&linalg::symmetrize(&model.k));
        let n = lambda.len();
        let top = if n > 0 { lambda[0].max(T::one()) } else { T::one() };
        if n > 0 && lambda[n - 1] < -T::lit(1e-8) * top {
            return Err(Error::KNotPsd(lambda[n - 1].as_f64()));
        }
        lambda.apply(|l| *l = l.max(T::zero()));
        let x_rot = match &model.x {
            None => None,
            Some(x) => {
                if x.ncols() > 0 {
                    let sv = x.clone().singular_values();
                    let max = sv.max();
                    if !(sv.min() > T::lit(1e-10) * max) {
                        return Err(Error::DesignRankDeficient);
                    }
                }
                Some(q.transpose() * x)
            }
        };
        Ok(Self { lambda, q, x_rot, p: model.p })
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// False when every eigenvalue of `K` is the same; `Σ_G` and `Σ_E` then only enter through their sum.
    pub fn identifiable(&self) -> bool {
        let n = self.lambda.len();
        n > 0 && self.lambda[0] - self.lambda[n - 1] > T::lit(1e-8) * self.lambda[0].abs().max(T::one())
    }

    pub fn rotate(&self, a: &DMatrix<T>) -> Result<RotatedData<T>> {
        if a.nrows() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), got: a.nrows() });
        }
        if a.ncols() != self.p {
            return Err(Error::DimensionMismatch(format!("{} trait columns, model expects {}", a.ncols(), self.p)));
        }
        if !linalg::all_finite(a) {
            return Err(Error::Invalid("trait matrix has non-finite entries".into()));
        }
        Ok(RotatedData { lambda: self.lambda.clone(), a: self.q.transpose() * a, x: self.x_rot.clone() })
    }
}

/// Rows of `QᵀA` (and `QᵀX`), independent given the eigenvalues.
#[derive(Debug, Clone)]
pub struct RotatedData<T: Real> {
    pub lambda: DVector<T>,
    pub a: DMatrix<T>,
    pub x: Option<DMatrix<T>>,
}

impl<T: Real> RotatedData<T> {
    fn s(&self) -> usize {
        self.x.as_ref().map_or(0, |x| x.ncols())
    }
}

struct Eval<T: Real> {
    f: T,
    d_g: DMatrix<T>,
    d_e: DMatrix<T>,
    b: Option<DMatrix<T>>,
}

fn row_factor<T: Real>(v: DMatrix<T>) -> Result<Cholesky<T, Dyn>> {
    let chol = Cholesky::new(v).ok_or(Error::SingularRowCovariance(f64::INFINITY))?;
    let d = chol.l_dirty().diagonal();
    let cond = (d.max() / d.min()).powi(2);
    if !(cond <= T::lit(MAX_ROW_CONDITION)) {
        return Err(Error::SingularRowCovariance(cond.as_f64()));
    }
    Ok(chol)
}

fn log_det<T: Real>(c: &Cholesky<T, Dyn>) -> T {
    c.l_dirty().diagonal().iter().fold(T::zero(), |acc, d| acc + d.ln()) * T::lit(2.0)
}

/// `−2 log` restricted likelihood and its gradient with respect to `Σ_G`, `Σ_E`.
fn evaluate<T: Real>(data: &RotatedData<T>, g: &DMatrix<T>, e: &DMatrix<T>, want_grad: bool) -> Result<Eval<T>> {
    let (n, p) = data.a.shape();
    let s = data.s();
    let mut f = T::zero();
    let mut vinv = Vec::with_capacity(n);
    for i in 0..n {
        let chol = row_factor(g * data.lambda[i] + e)?;
        f += log_det(&chol);
        vinv.push(chol.inverse());
    }
    let mut resid: Vec<DVector<T>> = (0..n).map(|i| data.a.row(i).transpose()).collect();

    let mut fixed = None;
    if let Some(x) = &data.x {
        let ps = p * s;
        let mut h = DMatrix::zeros(ps, ps);
        let mut rhs = DVector::zeros(ps);
        for i in 0..n {
            let xi = x.row(i).transpose();
            h += vinv[i].kronecker(&(&xi * xi.transpose()));
            rhs += (&vinv[i] * &resid[i]).kronecker(&xi);
        }
        let hc = Cholesky::new(linalg::symmetrize(&h)).ok_or(Error::DesignRankDeficient)?;
        f += log_det(&hc);
        let beta = hc.solve(&rhs);
        let b = DMatrix::from_fn(s, p, |j, k| beta[k * s + j]);
        for i in 0..n {
            let xi = x.row(i).transpose();
            resid[i] -= b.transpose() * xi;
        }
        fixed = Some((b, hc.inverse()));
    }

    let mut d_g = DMatrix::zeros(p, p);
    let mut d_e = DMatrix::zeros(p, p);
    for i in 0..n {
        let u = &vinv[i] * &resid[i];
        f += resid[i].dot(&u);
        if want_grad {
            let mut w = &vinv[i] - &u * u.transpose();
            if let (Some((_, h_inv)), Some(x)) = (&fixed, &data.x) {
                let xi = x.row(i);
                let c = DMatrix::from_fn(p, p, |k, l| {
                    let mut acc = T::zero();
                    for j in 0..s {
                        for m in 0..s {
                            acc += xi[j] * xi[m] * h_inv[(k * s + j, l * s + m)];
                        }
                    }
                    acc
                });
                w -= &vinv[i] * c * &vinv[i];
            }
            d_g += &w * data.lambda[i];
            d_e += w;
        }
    }
    f += T::from_usize_lossy(n * p - p * s) * T::two_pi().ln();
    Ok(Eval { f, d_g, d_e, b: fixed.map(|(b, _)| b) })
}

fn check_factor<T: Real>(l: &DMatrix<T>, p: usize) -> Result<()> {
    if l.shape() != (p, p) {
        return Err(Error::DimensionMismatch(format!("Cholesky factor is {}x{}, expected {p}x{p}", l.nrows(), l.ncols())));
    }
    Ok(())
}

/// Restricted criterion `−2ℓ_R` at `Σ_G = L_G L_Gᵀ`, `Σ_E = L_E L_Eᵀ`, fixed effects profiled out.
pub fn reml_objective<T: Real>(chol_g: &DMatrix<T>, chol_e: &DMatrix<T>, data: &RotatedData<T>) -> Result<T> {
    let p = data.a.ncols();
    check_factor(chol_g, p)?;
    check_factor(chol_e, p)?;
    let g = chol_g.lower_triangle() * chol_g.lower_triangle().transpose();
    let e = chol_e.lower_triangle() * chol_e.lower_triangle().transpose();
    Ok(evaluate(data, &g, &e, false)?.f)
}

/// Criterion with its gradients with respect to `Σ_G` and `Σ_E` (entries treated as independent).
pub fn reml_gradient<T: Real>(sigma_g: &DMatrix<T>, sigma_e: &DMatrix<T>, data: &RotatedData<T>) -> Result<(T, DMatrix<T>, DMatrix<T>)> {
    let p = data.a.ncols();
    check_factor(sigma_g, p)?;
    check_factor(sigma_e, p)?;
    let ev = evaluate(data, sigma_g, sigma_e, true)?;
    Ok((ev.f, ev.d_g, ev.d_e))
}

/// Lower-triangular factors with log diagonals; the `Σ_E` diagonal is offset by a floor.
#[derive(Debug, Clone)]
pub(super) struct CholParam<T: Real> {
    p: usize,
    floor: DVector<T>,
}

impl<T: Real> CholParam<T> {
    pub(super) fn new(floor: DVector<T>) -> Self {
        Self { p: floor.len(), floor }
    }

    fn tri(&self) -> usize {
        self.p * (self.p + 1) / 2
    }

    pub(super) fn len(&self) -> usize {
        2 * self.tri()
    }

    fn unpack_one(&self, th: &[T], floor: Option<&DVector<T>>) -> Option<DMatrix<T>> {
        let mut l = DMatrix::zeros(self.p, self.p);
        let mut c = 0;
        for i in 0..self.p {
            for j in 0..=i {
                l[(i, j)] = if i == j {
                    if th[c] > T::lit(300.0) {
                        return None;
                    }
                    th[c].exp() + floor.map_or(T::zero(), |f| f[i])
                } else {
                    th[c]
                };
                c += 1;
            }
        }
        Some(l)
    }

    pub(super) fn unpack(&self, theta: &DVector<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
        let t = self.tri();
        let lg = self.unpack_one(&theta.as_slice()[..t], None)?;
        let le = self.unpack_one(&theta.as_slice()[t..], Some(&self.floor))?;
        Some((lg, le))
    }

    pub(super) fn pack(&self, lg: &DMatrix<T>, le: &DMatrix<T>) -> DVector<T> {
        let tiny = T::lit(1e-12);
        let mut out = Vec::with_capacity(self.len());
        for (l, floor) in [(lg, None), (le, Some(&self.floor))] {
            for i in 0..self.p {
                for j in 0..=i {
                    out.push(if i == j {
                        let d = l[(i, i)] - floor.map_or(T::zero(), |f| f[i]);
                        d.max(tiny * l[(i, i)].abs().max(tiny)).ln()
                    } else {
                        l[(i, j)]
                    });
                }
            }
        }
        DVector::from_vec(out)
    }

    /// Chain rule from `∂f/∂Σ` to `∂f/∂θ`.
    fn pull_back(&self, theta: &DVector<T>, lg: &DMatrix<T>, le: &DMatrix<T>, d_g: &DMatrix<T>, d_e: &DMatrix<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.len());
        let mut c = 0;
        for (l, d) in [(lg, d_g), (le, d_e)] {
            let dl = d * l * T::lit(2.0);
            for i in 0..self.p {
                for j in 0..=i {
                    out[c] = if i == j { dl[(i, i)] * theta[c].exp() } else { dl[(i, j)] };
                    c += 1;
                }
            }
        }
        out
    }

    pub(super) fn sigmas(&self, theta: &DVector<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
        let (lg, le) = self.unpack(theta)?;
        Some((&lg * lg.transpose(), &le * le.transpose()))
    }
}

#[derive(Debug, Clone)]
pub struct VcOptions<T: Real> {
    pub bfgs: BfgsOptions<T>,
    /// `Σ_E` diagonal floor as a fraction of each trait's sample variance.
    pub e_floor: T,
    pub standard_errors: bool,
}

impl<T: Real> Default for VcOptions<T> {
    fn default() -> Self {
        Self { bfgs: BfgsOptions::default(), e_floor: T::lit(1e-8), standard_errors: true }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StartReport {
    pub label: &'static str,
    pub reml: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone)]
pub struct VcFit<T: Real> {
    pub sigma_g: DMatrix<T>,
    pub sigma_e: DMatrix<T>,
    pub chol_g: DMatrix<T>,
    pub chol_e: DMatrix<T>,
    pub b: Option<DMatrix<T>>,
    pub reml: T,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    /// Set when `K` has a single distinct eigenvalue.
    pub identifiability_warning: bool,
    pub starts: Vec<StartReport>,
    /// Criterion values of the winning run, one per accepted step.
    pub history: Vec<T>,
    /// Delta-method standard errors from the observed information.
    pub se_g: Option<DMatrix<T>>,
    pub se_e: Option<DMatrix<T>>,
    /// Smallest eigenvalue of the criterion Hessian in the unconstrained parameters.
    pub min_curvature: Option<T>,
}

const STARTS: [(&str, f64, f64); 3] = [("half", 0.5, 0.5), ("mostly-environmental", 0.1, 0.9), ("mostly-genetic", 0.9, 0.1)];

/// Fits by multi-start BFGS over the Cholesky parameters.
pub fn reml_fit<T: Real>(a: &DMatrix<T>, model: &VcModel<T>, opts: &VcOptions<T>) -> Result<VcFit<T>> {
    reml_fit_prepared(&PreparedModel::new(model)?, a, opts)
}

pub(super) fn start_covariance<T: Real>(a: &DMatrix<T>, x: Option<&DMatrix<T>>) -> DMatrix<T> {
    match x {
        Some(x) if x.ncols() > 0 => {
            let svd = x.clone().svd(true, false);
            let u = svd.u.expect("svd u");
            let resid = a - &u * (u.transpose() * a);
            resid.transpose() * resid / T::from_usize_lossy((a.nrows() - x.ncols()).max(1))
        }
        _ => linalg::sample_covariance(a),
    }
}

pub(super) fn start_points<T: Real>(s: &DMatrix<T>, param: &CholParam<T>) -> Vec<(&'static str, DVector<T>)> {
    let p = s.nrows();
    let ridge = T::lit(1e-6) * s.trace() / T::from_usize_lossy(p);
    let jitter = DMatrix::identity(p, p) * ridge;
    STARTS
        .iter()
        .filter_map(|&(label, wg, we)| {
            let lg = Cholesky::new(s * T::lit(wg) + &jitter)?.l();
            let le = Cholesky::new(s * T::lit(we) + &jitter)?.l();
            Some((label, param.pack(&lg, &le)))
        })
        .collect()
}

pub(super) fn floor_for<T: Real>(s: &DMatrix<T>, rel: T) -> Result<DVector<T>> {
    let p = s.nrows();
    let mut floor = DVector::zeros(p);
    for k in 0..p {
        if !(s[(k, k)] > T::zero()) {
            return Err(Error::InvalidModel(format!("trait column {k} has zero variance")));
        }
        floor[k] = (rel * s[(k, k)]).sqrt();
    }
    Ok(floor)
}

pub fn reml_fit_prepared<T: Real>(prep: &PreparedModel<T>, a: &DMatrix<T>, opts: &VcOptions<T>) -> Result<VcFit<T>> {
    let data = prep.rotate(a)?;
    let (n, p) = a.shape();
    let s_fixed = data.s();
    if n <= p + s_fixed {
        return Err(Error::InvalidModel(format!("need more than {} subjects, got {n}", p + s_fixed)));
    }
    // Residual projections are invariant under the rotation; centering is not.
    let s = match &data.x {
        Some(x) => start_covariance(&data.a, Some(x)),
        None => start_covariance(a, None),
    };
    let param = CholParam::new(floor_for(&s, opts.e_floor)?);
    let objective = |th: &DVector<T>| -> Option<(T, DVector<T>)> {
        let (lg, le) = param.unpack(th)?;
        let ev = evaluate(&data, &(&lg * lg.transpose()), &(&le * le.transpose()), true).ok()?;
        if !ev.f.is_finite() {
            return None;
        }
        Some((ev.f, param.pull_back(th, &lg, &le, &ev.d_g, &ev.d_e)))
    };

    let (best, starts) = multi_start(objective, start_points(&s, &param), &opts.bfgs)?;
    let (lg, le) = param.unpack(&best.x).ok_or(Error::SingularRowCovariance(f64::INFINITY))?;
    let sigma_g = &lg * lg.transpose();
    let sigma_e = &le * le.transpose();
    let b = evaluate(&data, &sigma_g, &sigma_e, false)?.b;

    let converged = best.termination.converged();
    let (se_g, se_e, min_curvature) = if opts.standard_errors {
        standard_errors(&param, &best.x, objective)
    } else {
        (None, None, None)
    };
    Ok(VcFit {
        sigma_g,
        sigma_e,
        chol_g: lg,
        chol_e: le,
        b,
        reml: best.f,
        converged,
        iterations: best.iterations,
        termination: best.termination,
        identifiability_warning: !prep.identifiable(),
        starts,
        history: best.history,
        se_g,
        se_e,
        min_curvature,
    })
}

/// Runs BFGS from every start and keeps the lowest criterion. A run that stopped on a failed
/// line search is replaced by a converged run reaching the same value within `1e-8` relative.
pub(super) fn multi_start<T: Real, F>(
    mut objective: F,
    points: Vec<(&'static str, DVector<T>)>,
    bfgs: &BfgsOptions<T>,
) -> Result<(optim::BfgsResult<T>, Vec<StartReport>)>
where
    F: FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
{
    let mut starts = Vec::new();
    let mut runs = Vec::new();
    for (label, th0) in points {
        match optim::minimize(&mut objective, th0, bfgs) {
            Some(res) => {
                starts.push(StartReport { label, reml: res.f.as_f64(), iterations: res.iterations, termination: Some(res.termination) });
                runs.push(res);
            }
            None => starts.push(StartReport { label, reml: f64::NAN, iterations: 0, termination: None }),
        }
    }
    let lowest = runs.iter().map(|r| r.f).fold(None, |m: Option<T>, f| Some(m.map_or(f, |m| m.min(f))));
    let lowest = lowest.ok_or(Error::SingularRowCovariance(f64::INFINITY))?;
    let tol = T::lit(1e-8) * lowest.abs().max(T::one());
    let pick = runs
        .iter()
        .position(|r| r.termination.converged() && r.f <= lowest + tol)
        .or_else(|| runs.iter().position(|r| r.f == lowest))
        .expect("lowest value comes from some run");
    Ok((runs.swap_remove(pick), starts))
}

type SeTriple<T> = (Option<DMatrix<T>>, Option<DMatrix<T>>, Option<T>);

/// Finite-difference Hessian of the analytic gradient, inverted and mapped through the
/// Jacobian of `θ ↦ (Σ_G, Σ_E)`.
pub(super) fn standard_errors<T: Real, F>(param: &CholParam<T>, theta: &DVector<T>, mut objective: F) -> SeTriple<T>
where
    F: FnMut(&DVector<T>) -> Option<(T, DVector<T>)>,
{
    let m = theta.len();
    let p = param.p;
    let mut hess = DMatrix::zeros(m, m);
    for j in 0..m {
        let h = T::lit(1e-5) * theta[j].abs().max(T::one());
        let mut up = theta.clone();
        up[j] += h;
        let mut dn = theta.clone();
        dn[j] -= h;
        let (Some((_, gu)), Some((_, gd))) = (objective(&up), objective(&dn)) else {
            return (None, None, None);
        };
        hess.set_column(j, &((gu - gd) / (h * T::lit(2.0))));
    }
    let hess = linalg::symmetrize(&hess);
    let min_curv = linalg::min_eigenvalue(&hess);
    // The criterion is −2ℓ, so the observed information is half its Hessian.
    let Some(chol) = Cholesky::new(hess.clone()) else {
        return (None, None, Some(min_curv));
    };
    let cov = chol.inverse() * T::lit(2.0);

    let pp = p * p;
    let mut jac = DMatrix::zeros(2 * pp, m);
    for j in 0..m {
        let h = T::lit(1e-6) * theta[j].abs().max(T::one());
        let mut up = theta.clone();
        up[j] += h;
        let mut dn = theta.clone();
        dn[j] -= h;
        let (Some((gu, eu)), Some((gd, ed))) = (param.sigmas(&up), param.sigmas(&dn)) else {
            return (None, None, Some(min_curv));
        };
        for k in 0..pp {
            jac[(k, j)] = (gu[k] - gd[k]) / (h * T::lit(2.0));
            jac[(pp + k, j)] = (eu[k] - ed[k]) / (h * T::lit(2.0));
        }
    }
    let var = (&jac * cov * jac.transpose()).diagonal();
    let se = |off: usize| DMatrix::from_fn(p, p, |r, c| var[off + c * p + r].max(T::zero()).sqrt());
    (Some(se(0)), Some(se(pp)), Some(min_curv))
}
