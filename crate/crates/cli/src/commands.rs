//! Command-line surface and per-subcommand drivers.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;
use shapecov::lddmm::{match_landmarks, LandmarkSet};
use shapecov::pedigree::{kinship, parse_pedigree, read_kinship_csv};
use shapecov::simulation::{desk_base_kinship, run_study, SimConfig};
use shapecov::tangent_stats::{self, PcaMetric};
use shapecov::variance_components::{heritability, reml_fit, TraitPartition, VcModel};

use crate::config::{Config, LoadedConfig};
use crate::error::{CliError, Stage};
use crate::inputs;
use crate::output::{Manifest, OutputDir};
use crate::{pipeline, stages};

#[derive(Debug, Parser)]
#[command(name = "shapecov", version, about = "Kinship-informed joint statistics of brain shape and connectivity")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relatedness matrix K = 2Φ from a pedigree CSV.
    Kinship {
        pedigree: PathBuf,
        /// Keep only individuals without children.
        #[arg(long)]
        subjects_only: bool,
    },
    /// Generalized Procrustes alignment of a landmark manifest.
    Gpa {
        manifest: PathBuf,
        /// Keep centroid size instead of normalizing it away.
        #[arg(long)]
        keep_scale: bool,
    },
    /// Geodesic matching of one target to a template.
    Match {
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Covariances, Fréchet mean and tangent coordinates from a time-series manifest.
    Spd { manifest: PathBuf },
    /// PCA of the rows of a CSV, optionally under a Gram-matrix inner product.
    Pca {
        vectors: PathBuf,
        #[arg(long)]
        p: usize,
        /// `n × n` Gram matrix of the rows.
        #[arg(long)]
        gram: Option<PathBuf>,
    },
    /// REML fit of genetic and environmental covariances.
    Vcfit { scores: PathBuf, kinship: PathBuf },
    /// Canonical modes from a fit JSON.
    Cca {
        fit: PathBuf,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Parameter-recovery simulation study.
    Simulate,
    /// Full run driven by the config file.
    Pipeline,
    /// Print the default configuration.
    Defaults,
}

struct Context {
    loaded: LoadedConfig,
    text: String,
    out: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let (mut loaded, text) = match &cli.config {
            Some(p) => {
                let loaded = LoadedConfig::load(p)?;
                let text = std::fs::read_to_string(p)?;
                (loaded, text)
            }
            None => (LoadedConfig::defaults(), String::new()),
        };
        if let Some(seed) = cli.seed {
            loaded.config.seed = seed;
        }
        let out = cli.out.clone().unwrap_or_else(|| loaded.resolve(&loaded.config.output.dir).unwrap_or_else(|| PathBuf::from("out")));
        // The effective config is what the manifest hashes, so a `--seed` override changes it.
        let text = if cli.seed.is_some() { format!("{text}\n# seed override\n{}", loaded.config.seed) } else { text };
        Ok(Self { loaded, text, out })
    }

    fn cfg(&self) -> &Config {
        &self.loaded.config
    }

    fn out_dir(&self) -> Result<OutputDir, CliError> {
        OutputDir::create(&self.out)
    }
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!("file not found: {}", p.display())))
    }
}

#[derive(Deserialize)]
struct FitInput {
    sigma_g: Vec<Vec<f64>>,
    sigma_e: Vec<Vec<f64>>,
    partition: TraitPartition,
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::validation(format!("{what} is not square")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::validation("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    }
    if let Command::Defaults = cli.command {
        print!("{}", Config::default().to_toml());
        return Ok(());
    }
    let ctx = Context::new(&cli)?;
    match &cli.command {
        Command::Defaults => unreachable!(),
        Command::Kinship { pedigree, subjects_only } => {
            require_file(pedigree)?;
            let ped = parse_pedigree(pedigree).stage("kinship")?;
            let mut k = kinship::<f64>(&ped);
            if *subjects_only {
                k = k.subset(&ped.leaves());
            }
            ctx.out_dir()?.write_text("K.csv", &k.to_csv())?;
        }
        Command::Gpa { manifest, keep_scale } => {
            require_file(manifest)?;
            let subjects = inputs::landmark_manifest(manifest)?;
            let ids: Vec<String> = subjects.iter().map(|(id, _)| id.clone()).collect();
            let shapes = subjects.iter().map(|(_, p)| inputs::landmarks(p)).collect::<Result<Vec<_>, _>>()?;
            let rescale = !keep_scale && ctx.cfg().shape.rescale_to_mean_size;
            let g = stages::run_gpa(&shapes, !keep_scale, rescale)?;
            stages::write_gpa(&mut ctx.out_dir()?, &ids, &g)?;
        }
        Command::Match { template, target } => {
            require_file(template)?;
            require_file(target)?;
            let t: LandmarkSet<f64> = inputs::landmarks(template)?;
            let y = inputs::landmarks(target)?;
            let k = stages::kernel(ctx.cfg())?;
            let opts = stages::match_options(ctx.cfg());
            let r = match_landmarks(&k, &t, &y, ctx.cfg().shape.lambda, &opts).stage("match")?;
            let stem = target.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "target".into());
            stages::write_momenta(&mut ctx.out_dir()?, &format!("momenta_{stem}"), &k, ctx.cfg().shape.lambda, &t, &opts, &r)?;
        }
        Command::Spd { manifest } => {
            require_file(manifest)?;
            let ts = inputs::timeseries_manifest(manifest)?;
            let ids: Vec<String> = ts.runs.keys().cloned().collect();
            let panels = ts.runs.values().map(|r| inputs::panel(r)).collect::<Result<Vec<_>, _>>()?;
            let s = stages::run_spd(&panels, ctx.cfg().connectivity.eps_pd)?;
            stages::write_spd(&mut ctx.out_dir()?, &ids, &s)?;
        }
        Command::Pca { vectors, p, gram } => {
            require_file(vectors)?;
            let x = shapecov::io::read_matrix_csv::<f64>(vectors)?;
            let metric = match gram {
                Some(g) => {
                    require_file(g)?;
                    PcaMetric::Gram(shapecov::io::read_matrix_csv(g)?)
                }
                None => PcaMetric::Frobenius,
            };
            let (basis, scores) = tangent_stats::fit_pca(&x, &metric, *p).stage("pca")?;
            let mut out = ctx.out_dir()?;
            let ones = vec![1.0; *p];
            stages::write_basis(&mut out, "basis", &basis, &ones)?;
            out.write_matrix("scores.csv", &scores.scores)?;
        }
        Command::Vcfit { scores, kinship } => {
            require_file(scores)?;
            require_file(kinship)?;
            let text = std::fs::read_to_string(scores)?;
            let (a, part) = tangent_stats::scores_from_csv::<f64>(&text, &scores.display().to_string())?;
            let k = read_kinship_csv::<f64>(kinship)?;
            let model = VcModel::new(k.k.clone(), None, a.ncols())?;
            let fit = reml_fit(&a, &model, &pipeline::vc_options(ctx.cfg())).stage("vcfit")?;
            let h2 = heritability(&fit.sigma_g, &fit.sigma_e, &part).stage("vcfit")?;
            ctx.out_dir()?.write_json("fit.json", &stages::fit_report(a.nrows(), &fit, &part, &h2))?;
        }
        Command::Cca { fit, modes, ridge } => {
            require_file(fit)?;
            let text = std::fs::read_to_string(fit)?;
            let f: FitInput = serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", fit.display())))?;
            let g = from_rows(&f.sigma_g, "sigma_g")?;
            let e = from_rows(&f.sigma_e, "sigma_e")?;
            let n_modes = modes.unwrap_or(ctx.cfg().cca.n_modes);
            let cfg_ridge = (ctx.cfg().cca.ridge >= 0.0).then_some(ctx.cfg().cca.ridge);
            let ms = stages::both_modes(&g, &e, &f.partition, n_modes, ridge.or(cfg_ridge))?;
            let reports: Vec<_> = ms.iter().map(|m| stages::mode_report(m, None)).collect();
            ctx.out_dir()?.write_json("modes.json", &serde_json::json!({ "modes": reports }))?;
        }
        Command::Simulate => simulate(&ctx)?,
        Command::Pipeline => {
            let mut out = ctx.out_dir()?;
            pipeline::run(&ctx.loaded, &ctx.text, &mut out)?;
        }
    }
    Ok(())
}

fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let sim = &cfg.simulation;
    let base = match ctx.loaded.resolve(&sim.base_kinship) {
        Some(p) => {
            require_file(&p)?;
            read_kinship_csv::<f64>(&p)?
        }
        None => desk_base_kinship(cfg.seed).stage("simulate")?,
    };
    let mut sc = if sim.preset == "full" { SimConfig::full(base, cfg.seed) } else { SimConfig::desk(base, cfg.seed) };
    if !sim.d_values.is_empty() {
        sc.d_values = sim.d_values.clone();
    }
    if !sim.p_values.is_empty() {
        sc.p_values = sim.p_values.clone();
    }
    if let Some(r) = sim.replicates {
        sc.replicates = r;
    }
    sc.vc = pipeline::vc_options(cfg);
    sc.vc.standard_errors = false;
    sc.validate()?;
    let res = run_study(&sc).stage("simulate")?;
    let mut out = ctx.out_dir()?;
    out.write_text("results.csv", &res.to_csv()?)?;
    out.write_json("summary.json", &serde_json::json!({ "thresholds": res.thresholds, "cells": res.summary }))?;
    for p in &sc.p_values {
        let groups: Vec<_> = res
            .summary
            .iter()
            .filter(|c| c.p == *p)
            .filter_map(|c| c.err_g.clone().map(|q| (format!("d={}", c.d), q)))
            .collect();
        let threshold = res.thresholds.iter().find(|t| t.p == *p).map(|t| t.value);
        out.write_text(&format!("boxplot_p{p}.svg"), &crate::svg::boxplot(&groups, threshold, &format!("Genetic covariance error, p = {p}")))?;
    }
    let json = serde_json::to_string_pretty(&Manifest::new(&ctx.text, Default::default(), &out)).expect("manifest serializes") + "\n";
    std::fs::write(out.root().join("manifest.json"), json)?;
    Ok(())
}
