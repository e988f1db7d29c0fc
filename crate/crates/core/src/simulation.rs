//! Simulation study: uniform random correlations, block-expanded kinship, repeated fits
//! and the random-guess baseline.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::pedigree::{kinship, synthetic_cohort, FamilyMix, KinshipMatrix, Pedigree};
use crate::variance_components::{reml_fit_prepared, PreparedModel, ScoreSampler, VcModel, VcOptions};
use crate::{linalg, Error, Result};

/// Independent stream for an arbitrary tuple of counters.
pub fn counter_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ 0x5eed_0f_5ca1e);
    for &k in keys {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw over `p × p` correlation matrices (onion construction).
pub fn random_correlation<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut r = DMatrix::identity(p.max(1), p.max(1));
    if p < 2 {
        return r;
    }
    let mut beta = p as f64 / 2.0;
    let b = Beta::new(beta, beta).expect("positive beta parameters");
    let r12 = 2.0 * b.sample(rng) - 1.0;
    r[(0, 1)] = r12;
    r[(1, 0)] = r12;
    for k in 2..p {
        beta -= 0.5;
        let y = Beta::new(k as f64 / 2.0, beta).expect("positive beta parameters").sample(rng);
        let mut u = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
        u /= u.norm();
        let w = u * y.sqrt();
        let top = r.view((0, 0), (k, k)).into_owned();
        let l = Cholesky::new(top).expect("leading block stays positive definite").l();
        let z = l * w;
        for i in 0..k {
            r[(i, k)] = z[i];
            r[(k, i)] = z[i];
        }
    }
    r
}

/// Seeded convenience wrapper around [`random_correlation`].
pub fn random_correlation_seeded(p: usize, seed: u64) -> DMatrix<f64> {
    random_correlation(p, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `I_d ⊗ K`; ids of copy `g` get the suffix `#g`.
pub fn block_kinship(k: &KinshipMatrix<f64>, d: usize) -> Result<KinshipMatrix<f64>> {
    if d == 0 {
        return Err(Error::Invalid("block count must be at least 1".into()));
    }
    if d == 1 {
        return Ok(k.clone());
    }
    let ids = (0..d).flat_map(|g| k.ids.iter().map(move |id| format!("{id}#{g}"))).collect();
    Ok(KinshipMatrix { ids, phi: linalg::block_diag_repeat(&k.phi, d), k: linalg::block_diag_repeat(&k.k, d) })
}

/// Family mix of the reduced-scale base cohort: 25 MZ pairs, 25 full-sibling pairs and
/// 100 singletons over 150 families.
pub const DESK_MIX: FamilyMix = FamilyMix { mz_pair: 1.0 / 6.0, dz_pair: 1.0 / 6.0, sib_pair: 0.0, singleton: 2.0 / 3.0 };
pub const DESK_FAMILIES: usize = 150;

/// Relatedness among the non-parent members of a pedigree (the sampled subjects).
pub fn subject_kinship(ped: &Pedigree) -> KinshipMatrix<f64> {
    kinship::<f64>(ped).subset(&ped.leaves())
}

/// 200-subject synthetic base cohort.
pub fn desk_base_kinship(seed: u64) -> Result<KinshipMatrix<f64>> {
    Ok(subject_kinship(&synthetic_cohort(DESK_FAMILIES, DESK_MIX, seed)?))
}

/// Linear-interpolation quantile of sorted data, `percentile` on the 0–100 scale.
pub fn percentile_sorted(sorted: &[f64], percentile: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = (percentile / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile of Frobenius distances between `n_truth` random correlations and
/// `n_guess` independent random guesses each.
pub fn naive_baseline(p: usize, percentile: f64, n_truth: usize, n_guess: usize, seed: u64) -> Result<f64> {
    if n_truth == 0 || n_guess == 0 || p == 0 {
        return Err(Error::Invalid("naive baseline counts and dimension must be positive".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Invalid(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut dists: Vec<f64> = (0..n_truth)
        .into_par_iter()
        .flat_map_iter(|t| {
            let mut rng = counter_rng(seed, &[u64::MAX, p as u64, t as u64]);
            let truth = random_correlation(p, &mut rng);
            (0..n_guess).map(move |_| (random_correlation(p, &mut rng) - &truth).norm()).collect::<Vec<_>>()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&dists, percentile))
}

/// Percentile used for the baseline threshold at trait dimension `p`.
pub fn default_percentile(p: usize) -> f64 {
    if p >= 4 {
        0.01
    } else {
        0.5
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub d_values: Vec<usize>,
    pub p_values: Vec<usize>,
    pub replicates: usize,
    pub base_kinship: KinshipMatrix<f64>,
    pub seed: u64,
    /// Truth and guess counts for the baseline.
    pub naive_counts: (usize, usize),
    pub vc: VcOptions<f64>,
}

impl SimConfig {
    /// Reduced grid: `d ∈ {1, 2, 4}`, `p = 3`, 20 replicates, 200 × 200 baseline draws.
    pub fn desk(base_kinship: KinshipMatrix<f64>, seed: u64) -> Self {
        Self {
            d_values: vec![1, 2, 4],
            p_values: vec![3],
            replicates: 20,
            base_kinship,
            seed,
            naive_counts: (200, 200),
            vc: VcOptions { standard_errors: false, ..VcOptions::default() },
        }
    }

    /// Full grid: `d = 1..5`, `p ∈ {3, 4}`, 100 replicates, 1000 × 1000 baseline draws.
    pub fn full(base_kinship: KinshipMatrix<f64>, seed: u64) -> Self {
        Self { d_values: (1..=5).collect(), p_values: vec![3, 4], replicates: 100, naive_counts: (1000, 1000), ..Self::desk(base_kinship, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_values.is_empty() || self.d_values.contains(&0) {
            return Err(Error::Invalid("d values must be a non-empty list of positive counts".into()));
        }
        if self.p_values.is_empty() || self.p_values.contains(&0) {
            return Err(Error::Invalid("p values must be a non-empty list of positive dimensions".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Invalid("replicates must be positive".into()));
        }
        if self.naive_counts.0 == 0 || self.naive_counts.1 == 0 {
            return Err(Error::Invalid("baseline counts must be positive".into()));
        }
        if self.base_kinship.ids.is_empty() {
            return Err(Error::Invalid("base kinship is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimRecord {
    pub d: usize,
    pub p: usize,
    pub replicate: usize,
    pub err_g: f64,
    pub err_e: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: percentile_sorted(&v, 25.0),
            median: percentile_sorted(&v, 50.0),
            q3: percentile_sorted(&v, 75.0),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellSummary {
    pub d: usize,
    pub p: usize,
    pub n_subjects: usize,
    pub converged: usize,
    pub not_converged: usize,
    pub err_g: Option<Quartiles>,
    pub err_e: Option<Quartiles>,
    /// Share of converged `err_g` values below the baseline threshold.
    pub frac_g_below_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Threshold {
    pub p: usize,
    pub percentile: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimResult {
    pub records: Vec<SimRecord>,
    pub thresholds: Vec<Threshold>,
    pub summary: Vec<CellSummary>,
}

impl SimResult {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn cell(&self, d: usize, p: usize) -> Option<&CellSummary> {
        self.summary.iter().find(|c| c.d == d && c.p == p)
    }
}

/// One replicate: draw the truth, sample traits, fit, and score the estimate.
fn replicate(prep: &PreparedModel<f64>, sampler: &ScoreSampler<f64>, d: usize, p: usize, rep: usize, cfg: &SimConfig) -> SimRecord {
    let mut rng = counter_rng(cfg.seed, &[d as u64, p as u64, rep as u64]);
    let sigma_g = random_correlation(p, &mut rng);
    let sigma_e = random_correlation(p, &mut rng);
    let fit = sampler.sample(&sigma_g, &sigma_e, &mut rng).and_then(|a| reml_fit_prepared(prep, &a, &cfg.vc));
    match fit {
        Ok(fit) => SimRecord {
            d,
            p,
            replicate: rep,
            err_g: (&fit.sigma_g - &sigma_g).norm(),
            err_e: (&fit.sigma_e - &sigma_e).norm(),
            converged: fit.converged,
        },
        Err(_) => SimRecord { d, p, replicate: rep, err_g: f64::NAN, err_e: f64::NAN, converged: false },
    }
}

/// Runs every `(d, p, replicate)` cell. Output does not depend on the thread count.
pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let thresholds = cfg
        .p_values
        .iter()
        .map(|&p| {
            let pct = default_percentile(p);
            naive_baseline(p, pct, cfg.naive_counts.0, cfg.naive_counts.1, cfg.seed).map(|value| Threshold { p, percentile: pct, value })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &d in &cfg.d_values {
        let k = block_kinship(&cfg.base_kinship, d)?;
        let n = k.ids.len();
        let model = VcModel::new(k.k, None, 1)?;
        let prep_base = PreparedModel::new(&model)?;
        let sampler = ScoreSampler::from_eigen(&prep_base.lambda, &prep_base.q);
        for &p in &cfg.p_values {
            let prep = PreparedModel { p, ..prep_base.clone() };
            let cell: Vec<SimRecord> = (0..cfg.replicates).into_par_iter().map(|rep| replicate(&prep, &sampler, d, p, rep, cfg)).collect();
            let ok: Vec<&SimRecord> = cell.iter().filter(|r| r.converged).collect();
            let eg: Vec<f64> = ok.iter().map(|r| r.err_g).collect();
            let ee: Vec<f64> = ok.iter().map(|r| r.err_e).collect();
            let thr = thresholds.iter().find(|t| t.p == p).map(|t| t.value);
            summary.push(CellSummary {
                d,
                p,
                n_subjects: n,
                converged: ok.len(),
                not_converged: cell.len() - ok.len(),
                err_g: Quartiles::of(&eg),
                err_e: Quartiles::of(&ee),
                frac_g_below_threshold: thr.filter(|_| !eg.is_empty()).map(|t| eg.iter().filter(|&&e| e < t).count() as f64 / eg.len() as f64),
            });
            records.extend(cell);
        }
    }
    Ok(SimResult { records, thresholds, summary })
}

/// Kolmogorov–Smirnov statistic against Uniform(a, b) and its asymptotic p-value.
pub fn ks_uniform(samples: &[f64], a: f64, b: f64) -> (f64, f64) {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let cdf = ((x - a) / (b - a)).clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    (d, kolmogorov_survival((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
