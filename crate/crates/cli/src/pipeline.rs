//! End-to-end run: shapes and connectivity to variance components, modes and displays.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use shapecov::cca::{DisplayAnchors, DisplayBasis};
use shapecov::pedigree::{kinship, parse_pedigree, KinshipMatrix};
use shapecov::tangent_stats::{self, ConfounderTable, PcaMetric};
use shapecov::variance_components::{heritability, reml_fit, TraitBlock, VcModel, VcOptions};

use crate::config::LoadedConfig;
use crate::error::{CliError, Stage};
use crate::inputs;
use crate::output::{hash_file, Manifest, OutputDir};
use crate::stages::{self, DisplayContext};

/// Restricts a pedigree kinship to `ids`, in that order.
pub fn kinship_for(k: &KinshipMatrix<f64>, ids: &[String]) -> Result<KinshipMatrix<f64>, CliError> {
    let idx = ids
        .iter()
        .map(|id| k.ids.iter().position(|x| x == id).ok_or_else(|| CliError::validation(format!("subject {id} is not in the pedigree"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(k.subset(&idx))
}

pub fn vc_options(cfg: &crate::config::Config) -> VcOptions<f64> {
    let mut o = VcOptions { e_floor: cfg.model.e_floor, ..VcOptions::default() };
    o.bfgs.max_iter = cfg.model.max_iter;
    o.bfgs.grad_tol = cfg.model.grad_tol;
    o
}

/// Runs the pipeline, writing into `out`. On failure the manifest records the failing stage
/// and everything written so far is kept.
pub fn run(loaded: &LoadedConfig, config_text: &str, out: &mut OutputDir) -> Result<(), CliError> {
    let mut inputs = BTreeMap::new();
    let result = run_stages(loaded, out, &mut inputs);
    let mut manifest = Manifest::new(config_text, inputs, out);
    if let Err(e) = &result {
        manifest.status = format!("failed at {}", e.stage.unwrap_or("setup"));
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(out.root().join("manifest.json"), json).map_err(|e| CliError::validation(format!("manifest: {e}")))?;
    result
}

fn run_stages(loaded: &LoadedConfig, out: &mut OutputDir, hashes: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let cfg = &loaded.config;

    // Inputs.
    let ped_path = loaded.require(&cfg.inputs.pedigree, "pedigree").stage("inputs")?;
    let lm_path = loaded.require(&cfg.inputs.landmarks, "landmark manifest").stage("inputs")?;
    let ts_path = loaded.require(&cfg.inputs.timeseries, "time-series manifest").stage("inputs")?;
    hashes.insert("pedigree".into(), hash_file(&ped_path)?);
    hashes.insert("landmarks".into(), hash_file(&lm_path)?);
    hashes.insert("timeseries".into(), hash_file(&ts_path)?);

    let subjects = inputs::landmark_manifest(&lm_path).stage("inputs")?;
    let ids: Vec<String> = subjects.iter().map(|(id, _)| id.clone()).collect();
    let mut shapes = Vec::with_capacity(ids.len());
    for (id, path) in &subjects {
        hashes.insert(format!("landmarks/{id}"), hash_file(path)?);
        shapes.push(inputs::landmarks(path).stage("inputs")?);
    }
    let ts = inputs::timeseries_manifest(&ts_path).stage("inputs")?;
    let mut panels = Vec::with_capacity(ids.len());
    for id in &ids {
        let runs = ts.runs.get(id).ok_or_else(|| CliError::validation(format!("subject {id} has no time series")).at("inputs"))?;
        for (r, p) in runs.iter().enumerate() {
            hashes.insert(format!("timeseries/{id}/{r}"), hash_file(p)?);
        }
        panels.push(inputs::panel(runs).stage("inputs")?);
    }
    let conf = match loaded.resolve(&cfg.inputs.confounders) {
        Some(p) => {
            hashes.insert("confounders".into(), hash_file(&p).stage("inputs")?);
            inputs::confounders(&p, &ids, &cfg.inputs.continuous).stage("inputs")?
        }
        None => ConfounderTable::none(ids.len()),
    };
    let region_labels = match loaded.resolve(&cfg.inputs.region_labels) {
        Some(p) => {
            hashes.insert("region_labels".into(), hash_file(&p).stage("inputs")?);
            Some(inputs::labels(&p).stage("inputs")?)
        }
        None => None,
    };

    // Kinship.
    let ped = parse_pedigree(&ped_path).stage("kinship")?;
    let k = kinship_for(&kinship::<f64>(&ped), &ids).stage("kinship")?;
    out.write_text("kinship/K.csv", &k.to_csv())?;

    // Shapes.
    let g = stages::run_gpa(&shapes, cfg.shape.remove_scale, cfg.shape.rescale_to_mean_size)?;
    stages::write_gpa(out, &ids, &g)?;
    let kern = stages::kernel(cfg).stage("match")?;
    let mopts = stages::match_options(cfg);
    let matches = stages::run_matching(&kern, &g.template, &g.aligned, cfg.shape.lambda, &mopts)?;
    for (id, m) in ids.iter().zip(&matches) {
        stages::write_momenta(out, &format!("momenta/{id}"), &kern, cfg.shape.lambda, &g.template, &mopts, m)?;
    }

    // Connectivity.
    let spd = stages::run_spd(&panels, cfg.connectivity.eps_pd)?;
    stages::write_spd(out, &ids, &spd)?;

    // Deconfounding: size, momenta and connectivity tangents share one residual projector.
    let n = ids.len();
    let resid = tangent_stats::regress_out(&DMatrix::<f64>::identity(n, n), &conf).stage("deconfound")?;
    let size = &resid * DVector::from_vec(g.log_sizes.clone());
    let momenta = &resid * stages::shape_tangents(&matches);
    let gram = stages::momentum_gram(&kern, &g.template, &matches)?;
    let gram = shapecov::linalg::symmetrize(&(&resid * gram * &resid));
    let conn = &resid * &spd.tangents;

    // PCA.
    let (shape_basis, shape_scores) = tangent_stats::fit_pca(&momenta, &PcaMetric::Gram(gram), cfg.shape.p_s).stage("pca")?;
    let (conn_basis, conn_scores) = tangent_stats::fit_pca(&conn, &PcaMetric::Frobenius, cfg.connectivity.p_c).stage("pca")?;

    // Scores.
    let (raw, part) = tangent_stats::assemble_scores(&size, &shape_scores, &conn_scores).stage("scores")?;
    let (a, scales) = tangent_stats::standardize(&raw).stage("scores")?;
    let pick = |block: TraitBlock| DVector::from_iterator(part.indices(block).len(), part.indices(block).into_iter().map(|j| scales[j]));
    let shape_scales = pick(TraitBlock::Shape);
    let conn_scales = pick(TraitBlock::Connectivity);
    stages::write_basis(out, "pca/shape", &shape_basis, shape_scales.as_slice())?;
    stages::write_basis(out, "pca/connectivity", &conn_basis, conn_scales.as_slice())?;
    out.write_text("scores.csv", &tangent_stats::scores_to_csv(&a, &part).stage("scores")?)?;

    // Variance components.
    let model = VcModel::new(k.k.clone(), None, a.ncols()).stage("vcfit")?;
    let fit = reml_fit(&a, &model, &vc_options(cfg)).stage("vcfit")?;
    let h2 = heritability(&fit.sigma_g, &fit.sigma_e, &part).stage("vcfit")?;
    out.write_json("fit.json", &stages::fit_report(n, &fit, &part, &h2))?;

    // Modes and displays.
    let ridge = (cfg.cca.ridge >= 0.0).then_some(cfg.cca.ridge);
    let modes = stages::both_modes(&fit.sigma_g, &fit.sigma_e, &part, cfg.cca.n_modes, ridge)?;
    let shape_display = DisplayBasis { basis: shape_basis, scales: shape_scales };
    let conn_display = DisplayBasis { basis: conn_basis, scales: conn_scales };
    let anchors = DisplayAnchors { template: g.template.clone(), kernel: kern.clone(), steps: cfg.shape.steps, frechet_mean: spd.mean.clone() };
    let (labels, order) = stages::label_order(spd.mean.dim(), &ts.regions, region_labels);
    let ctx = DisplayContext { shape: &shape_display, connectivity: &conn_display, anchors: &anchors, labels: &labels, order: &order, scale: cfg.cca.scale };
    let sigmas = stages::write_mode_displays(out, &modes, &ctx)?;
    let size_report = stages::write_size_displays(out, &fit, &part, &ctx)?;
    let reports: Vec<_> = modes.iter().zip(&sigmas).map(|(m, s)| stages::mode_report(m, Some(*s))).collect();
    out.write_json("modes.json", &serde_json::json!({ "modes": reports, "size_regression": size_report }))?;
    Ok(())
}
