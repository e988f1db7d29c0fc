//! Pipeline stages shared by the individual subcommands and `pipeline`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use shapecov::cca::{self, CcaMode, DisplayAnchors, DisplayBasis, ModeSource};
use shapecov::lddmm::{self, gpa, match_landmarks, KernelSpec, LandmarkSet, MatchOptions, MatchResult};
use shapecov::optim::Termination;
use shapecov::spd::{self, SpdMatrix};
use shapecov::tangent_stats::PcaBasis;
use shapecov::variance_components::{HeritabilityReport, StartReport, TraitPartition, VcFit};

use crate::config::Config;
use crate::error::{CliError, Stage};
use crate::output::{rows, sha256_hex, OutputDir};

pub fn kernel(cfg: &Config) -> Result<KernelSpec<f64>, CliError> {
    let weights = (!cfg.shape.weights.is_empty()).then(|| cfg.shape.weights.clone());
    Ok(KernelSpec::new(cfg.shape.sigmas.clone(), weights)?)
}

pub fn match_options(cfg: &Config) -> MatchOptions<f64> {
    let mut o = MatchOptions { steps: cfg.shape.steps, ..MatchOptions::default() };
    o.bfgs.max_iter = cfg.shape.max_iter;
    o
}

pub struct GpaStage {
    pub template: LandmarkSet<f64>,
    pub aligned: Vec<LandmarkSet<f64>>,
    pub log_sizes: Vec<f64>,
    pub working_scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// GPA, optionally rescaling the size-free shapes to the geometric-mean centroid size.
pub fn run_gpa(shapes: &[LandmarkSet<f64>], remove_scale: bool, rescale: bool) -> Result<GpaStage, CliError> {
    let res = gpa(shapes, remove_scale).stage("gpa")?;
    let working_scale = if remove_scale && rescale {
        (res.log_sizes.iter().sum::<f64>() / res.log_sizes.len() as f64).exp()
    } else {
        1.0
    };
    let scale = |s: &LandmarkSet<f64>| LandmarkSet { points: s.points.iter().map(|p| p * working_scale).collect() };
    Ok(GpaStage {
        template: scale(&res.template),
        aligned: res.aligned.iter().map(scale).collect(),
        log_sizes: res.log_sizes,
        working_scale,
        iterations: res.iterations,
        converged: res.converged,
    })
}

pub fn write_gpa(out: &mut OutputDir, ids: &[String], g: &GpaStage) -> Result<(), CliError> {
    out.write_matrix("gpa/template.csv", &g.template.to_matrix())?;
    let mut sizes = String::from("id,log_size\n");
    for (id, l) in ids.iter().zip(&g.log_sizes) {
        sizes.push_str(&format!("{id},{l}\n"));
    }
    out.write_text("gpa/sizes.csv", &sizes)?;
    for (id, a) in ids.iter().zip(&g.aligned) {
        out.write_matrix(&format!("gpa/aligned/{id}.csv"), &a.to_matrix())?;
    }
    out.write_json("gpa/summary.json", &serde_json::json!({
        "iterations": g.iterations,
        "converged": g.converged,
        "working_scale": g.working_scale,
    }))?;
    Ok(())
}

/// Matches every target in parallel; results come back in input order.
pub fn run_matching(
    k: &KernelSpec<f64>,
    template: &LandmarkSet<f64>,
    targets: &[LandmarkSet<f64>],
    lambda: f64,
    opts: &MatchOptions<f64>,
) -> Result<Vec<MatchResult<f64>>, CliError> {
    targets
        .par_iter()
        .map(|t| match_landmarks(k, template, t, lambda, opts))
        .collect::<Result<Vec<_>, _>>()
        .stage("match")
}

#[derive(Serialize)]
pub struct MomentaSidecar {
    pub kernel_sigmas: Vec<f64>,
    pub kernel_weights: Vec<f64>,
    pub lambda: f64,
    pub template_sha256: String,
    pub steps: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub termination: Termination,
}

pub fn momenta_sidecar(k: &KernelSpec<f64>, lambda: f64, template: &LandmarkSet<f64>, opts: &MatchOptions<f64>, r: &MatchResult<f64>) -> MomentaSidecar {
    MomentaSidecar {
        kernel_sigmas: k.sigmas().to_vec(),
        kernel_weights: k.weights().to_vec(),
        lambda,
        template_sha256: sha256_hex(shapecov::io::matrix_to_csv(&template.to_matrix()).as_bytes()),
        steps: opts.steps,
        max_iter: opts.bfgs.max_iter,
        grad_tol: opts.bfgs.grad_tol,
        initial_objective: r.initial_objective,
        final_objective: r.objective,
        iterations: r.iterations,
        termination: r.termination,
    }
}

pub fn write_momenta(out: &mut OutputDir, stem: &str, k: &KernelSpec<f64>, lambda: f64, template: &LandmarkSet<f64>, opts: &MatchOptions<f64>, r: &MatchResult<f64>) -> Result<(), CliError> {
    out.write_matrix(&format!("{stem}.csv"), &r.momenta.to_matrix())?;
    out.write_json(&format!("{stem}.json"), &momenta_sidecar(k, lambda, template, opts, r))?;
    Ok(())
}

pub struct SpdStage {
    pub covariances: Vec<SpdMatrix<f64>>,
    pub floored: Vec<bool>,
    pub mean: SpdMatrix<f64>,
    /// `n × K(K+1)/2` tangent coordinates at the mean.
    pub tangents: DMatrix<f64>,
}

pub fn run_spd(panels: &[shapecov::spd::TimeSeriesPanel<f64>], eps_pd: f64) -> Result<SpdStage, CliError> {
    let reductions = panels.iter().map(|p| spd::covariance_from_runs(p, eps_pd)).collect::<Result<Vec<_>, _>>().stage("spd")?;
    let floored = reductions.iter().map(|r| r.floored).collect();
    let covariances: Vec<SpdMatrix<f64>> = reductions.into_iter().map(|r| r.covariance).collect();
    let mean = spd::frechet_mean(&covariances).stage("spd")?;
    let vecs = covariances
        .iter()
        .map(|c| spd::tangent_coords(c, &mean).map(|t| t.vector))
        .collect::<Result<Vec<DVector<f64>>, _>>()
        .stage("spd")?;
    let d = vecs.first().map_or(0, |v| v.len());
    let tangents = DMatrix::from_fn(vecs.len(), d, |i, j| vecs[i][j]);
    Ok(SpdStage { covariances, floored, mean, tangents })
}

pub fn write_spd(out: &mut OutputDir, ids: &[String], s: &SpdStage) -> Result<(), CliError> {
    for (id, c) in ids.iter().zip(&s.covariances) {
        out.write_matrix(&format!("spd/{id}.csv"), c.matrix())?;
    }
    out.write_matrix("spd/frechet_mean.csv", s.mean.matrix())?;
    out.write_matrix("spd/tangents.csv", &s.tangents)?;
    let floored: Vec<&String> = ids.iter().zip(&s.floored).filter(|(_, f)| **f).map(|(id, _)| id).collect();
    out.write_json("spd/summary.json", &serde_json::json!({ "floored_subjects": floored }))?;
    Ok(())
}

#[derive(Serialize)]
pub struct BasisMeta<'a> {
    pub metric: shapecov::tangent_stats::MetricTag,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub scale_factors: &'a [f64],
    pub mean: Vec<f64>,
}

/// Components as rows (`p × ambient`) plus JSON metadata.
pub fn write_basis(out: &mut OutputDir, stem: &str, b: &PcaBasis<f64>, scales: &[f64]) -> Result<(), CliError> {
    out.write_matrix(&format!("{stem}.csv"), &b.components.transpose())?;
    out.write_json(
        &format!("{stem}.json"),
        &BasisMeta {
            metric: b.metric,
            explained_variance: b.explained_variance.iter().copied().collect(),
            total_variance: b.total_variance,
            scale_factors: scales,
            mean: b.mean.iter().copied().collect(),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
pub struct FitReport<'a> {
    pub n: usize,
    pub partition: &'a TraitPartition,
    pub sigma_g: Vec<Vec<f64>>,
    pub sigma_e: Vec<Vec<f64>>,
    pub chol_g: Vec<Vec<f64>>,
    pub chol_e: Vec<Vec<f64>>,
    pub fixed_effects: Option<Vec<Vec<f64>>>,
    pub reml: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub identifiability_warning: bool,
    pub min_curvature: Option<f64>,
    pub se_g: Option<Vec<Vec<f64>>>,
    pub se_e: Option<Vec<Vec<f64>>>,
    pub starts: &'a [StartReport],
    pub heritability: &'a HeritabilityReport,
}

pub fn fit_report<'a>(n: usize, fit: &'a VcFit<f64>, part: &'a TraitPartition, h2: &'a HeritabilityReport) -> FitReport<'a> {
    FitReport {
        n,
        partition: part,
        sigma_g: rows(&fit.sigma_g),
        sigma_e: rows(&fit.sigma_e),
        chol_g: rows(&fit.chol_g),
        chol_e: rows(&fit.chol_e),
        fixed_effects: fit.b.as_ref().map(rows),
        reml: fit.reml,
        converged: fit.converged,
        iterations: fit.iterations,
        termination: fit.termination,
        identifiability_warning: fit.identifiability_warning,
        min_curvature: fit.min_curvature,
        se_g: fit.se_g.as_ref().map(rows),
        se_e: fit.se_e.as_ref().map(rows),
        starts: &fit.starts,
        heritability: h2,
    }
}

#[derive(Serialize)]
pub struct ModeReport {
    pub source: ModeSource,
    pub component_index: usize,
    pub correlation: f64,
    pub theta_s: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub sigma_shape: Option<f64>,
    pub sigma_connectivity: Option<f64>,
}

pub fn mode_report(m: &CcaMode<f64>, sigmas: Option<(f64, f64)>) -> ModeReport {
    ModeReport {
        source: m.source,
        component_index: m.component_index,
        correlation: m.correlation,
        theta_s: m.theta_s.iter().copied().collect(),
        theta_c: m.theta_c.iter().copied().collect(),
        sigma_shape: sigmas.map(|s| s.0),
        sigma_connectivity: sigmas.map(|s| s.1),
    }
}

/// Genetic then environmental modes.
pub fn both_modes(fit_g: &DMatrix<f64>, fit_e: &DMatrix<f64>, part: &TraitPartition, n_modes: usize, ridge: Option<f64>) -> Result<Vec<CcaMode<f64>>, CliError> {
    let mut modes = cca::cca_modes(fit_g, part, n_modes, ridge, ModeSource::Genetic).stage("cca")?;
    modes.extend(cca::cca_modes(fit_e, part, n_modes, ridge, ModeSource::Environmental).stage("cca")?);
    Ok(modes)
}

pub fn source_name(s: ModeSource) -> &'static str {
    match s {
        ModeSource::Genetic => "genetic",
        ModeSource::Environmental => "environmental",
    }
}

pub struct DisplayContext<'a> {
    pub shape: &'a DisplayBasis<f64>,
    pub connectivity: &'a DisplayBasis<f64>,
    pub anchors: &'a DisplayAnchors<f64>,
    pub labels: &'a [String],
    pub order: &'a [usize],
    pub scale: f64,
}

/// Writes `±cσ` displays for every mode and returns the per-mode σ values.
pub fn write_mode_displays(out: &mut OutputDir, modes: &[CcaMode<f64>], ctx: &DisplayContext) -> Result<Vec<(f64, f64)>, CliError> {
    let mut sigmas = Vec::new();
    for m in modes {
        let d = cca::mode_displays(m, ctx.shape, ctx.connectivity, (ctx.scale, ctx.scale), ctx.anchors).stage("displays")?;
        let stem = format!("displays/{}_mode{}", source_name(m.source), m.component_index + 1);
        out.write_matrix(&format!("{stem}_shape_plus.csv"), &d.shape_plus.to_matrix())?;
        out.write_matrix(&format!("{stem}_shape_minus.csv"), &d.shape_minus.to_matrix())?;
        out.write_matrix(&format!("{stem}_connectivity_plus.csv"), d.connectivity_plus.matrix())?;
        out.write_matrix(&format!("{stem}_connectivity_minus.csv"), d.connectivity_minus.matrix())?;
        for (tag, c) in [("plus", &d.connectivity_plus), ("minus", &d.connectivity_minus)] {
            let title = format!("{} mode {} connectivity, {}{}σ", source_name(m.source), m.component_index + 1, if tag == "plus" { "+" } else { "−" }, ctx.scale);
            out.write_text(&format!("{stem}_connectivity_{tag}.svg"), &crate::svg::heatmap(c.matrix(), ctx.labels, ctx.order, &title))?;
        }
        sigmas.push((d.sigma_shape, d.sigma_connectivity));
    }
    Ok(sigmas)
}

pub fn write_size_displays(out: &mut OutputDir, fit: &VcFit<f64>, part: &TraitPartition, ctx: &DisplayContext) -> Result<serde_json::Value, CliError> {
    let mut report = serde_json::Map::new();
    for (source, sigma) in [(ModeSource::Genetic, &fit.sigma_g), (ModeSource::Environmental, &fit.sigma_e)] {
        let d = cca::size_regression_display(sigma, part, ctx.connectivity, ctx.scale, ctx.anchors).stage("displays")?;
        let stem = format!("displays/{}_size", source_name(source));
        out.write_matrix(&format!("{stem}_connectivity_plus.csv"), d.plus.matrix())?;
        out.write_matrix(&format!("{stem}_connectivity_minus.csv"), d.minus.matrix())?;
        for (tag, c) in [("plus", &d.plus), ("minus", &d.minus)] {
            let title = format!("{} size regression, {}{}σ", source_name(source), if tag == "plus" { "+" } else { "−" }, ctx.scale);
            out.write_text(&format!("{stem}_connectivity_{tag}.svg"), &crate::svg::heatmap(c.matrix(), ctx.labels, ctx.order, &title))?;
        }
        report.insert(
            source_name(source).to_string(),
            serde_json::json!({ "beta": d.beta.iter().copied().collect::<Vec<_>>(), "sigma_size": d.sigma_size }),
        );
    }
    Ok(serde_json::Value::Object(report))
}

/// Heatmap labels and display order: config labels when given, else `r1..rK`.
pub fn label_order(k: usize, regions: &[String], labels: Option<Vec<String>>) -> (Vec<String>, Vec<usize>) {
    let names: Vec<String> = if regions.len() == k { regions.to_vec() } else { (1..=k).map(|i| format!("r{i}")).collect() };
    let order = match labels {
        Some(wanted) => {
            let mut order: Vec<usize> = wanted.iter().filter_map(|w| names.iter().position(|n| n == w)).collect();
            for i in 0..k {
                if !order.contains(&i) {
                    order.push(i);
                }
            }
            order
        }
        None => (0..k).collect(),
    };
    (names, order)
}

pub fn shape_tangents(momenta: &[MatchResult<f64>]) -> DMatrix<f64> {
    let flat: Vec<DVector<f64>> = momenta.iter().map(|m| m.momenta.flatten()).collect();
    let d = flat.first().map_or(0, |v| v.len());
    DMatrix::from_fn(flat.len(), d, |i, j| flat[i][j])
}

pub fn momentum_gram(k: &KernelSpec<f64>, template: &LandmarkSet<f64>, momenta: &[MatchResult<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ms: Vec<_> = momenta.iter().map(|m| m.momenta.clone()).collect();
    lddmm::momentum_gram(k, template, &ms).stage("pca")
}
