//! Synthetic twenty-subject cohort used by the end-to-end tests and the README walkthrough.
//!
//! Ten nuclear families (five MZ and five DZ pairs) share latent traits drawn from the
//! variance-component model: trait 0 drives size, traits 1–2 momentum patterns on an
//! ellipsoid template, traits 3–4 log-covariance perturbations of a five-region network.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use shapecov::lddmm::{shoot, KernelSpec, LandmarkSet, Momenta};
use shapecov::pedigree::{synthetic_cohort, FamilyMix};
use shapecov::simulation::{counter_rng, subject_kinship};
use shapecov::spd::{matrix_exp, matrix_log, SpdMatrix};
use shapecov::variance_components::{sample_scores, VcModel};

use crate::error::CliError;

pub const SEED: u64 = 20;
const N_LANDMARKS: usize = 12;
const RADII: [f64; 3] = [40.0, 30.0, 25.0];
const REGIONS: usize = 5;
const RUNS: usize = 2;
const SAMPLES: usize = 80;

/// Landmarks spread over an ellipsoid by a golden-angle spiral.
pub fn ellipsoid_template() -> LandmarkSet<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let points = (0..N_LANDMARKS)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / N_LANDMARKS as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Vector3::new(RADII[0] * r * a.cos(), RADII[1] * r * a.sin(), RADII[2] * z)
        })
        .collect();
    LandmarkSet { points }
}

fn momentum_patterns(t: &LandmarkSet<f64>) -> [Momenta<f64>; 2] {
    // Top-bottom elongation and a left-right shear.
    let stretch = t.points.iter().map(|p| Vector3::new(0.0, 0.0, 2.0 * p.z / RADII[2])).collect();
    let shear = t.points.iter().map(|p| Vector3::new(1.5 * p.y / RADII[1], 0.0, 0.0)).collect();
    [Momenta { vectors: stretch }, Momenta { vectors: shear }]
}

fn sym(entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(REGIONS, REGIONS);
    for &(i, j, v) in entries {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

fn trait_covariances() -> (DMatrix<f64>, DMatrix<f64>) {
    let g = DMatrix::from_row_slice(5, 5, &[
        0.6, 0.2, 0.0, 0.1, 0.0,
        0.2, 0.7, 0.0, 0.3, 0.0,
        0.0, 0.0, 0.4, 0.0, 0.1,
        0.1, 0.3, 0.0, 0.6, 0.0,
        0.0, 0.0, 0.1, 0.0, 0.3,
    ]);
    let e = DMatrix::from_row_slice(5, 5, &[
        0.4, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.3, 0.1, 0.0, 0.0,
        0.0, 0.1, 0.6, 0.0, 0.2,
        0.0, 0.0, 0.0, 0.4, 0.0,
        0.0, 0.0, 0.2, 0.0, 0.7,
    ]);
    (g, e)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn write(root: &Path, rel: &str, text: &str) -> Result<(), CliError> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

const CONFIG: &str = r#"seed = 2024

[inputs]
pedigree = "pedigree.csv"
landmarks = "landmarks.csv"
timeseries = "timeseries.json"
confounders = "confounders.csv"
continuous = ["age"]

[shape]
sigmas = [40.0, 20.0, 10.0]
lambda = 0.01
steps = 10
p_s = 2

[connectivity]
p_c = 2

[cca]
n_modes = 2

[output]
dir = "out"
"#;

/// Writes the fixture into `root`. Output is a pure function of [`SEED`].
pub fn generate(root: &Path) -> Result<(), CliError> {
    let mix = FamilyMix { mz_pair: 0.5, dz_pair: 0.5, sib_pair: 0.0, singleton: 0.0 };
    let ped = synthetic_cohort(10, mix, SEED)?;
    let kin = subject_kinship(&ped);
    let ids = kin.ids.clone();
    let (sg, se) = trait_covariances();
    let latent = sample_scores(&VcModel::new(kin.k.clone(), None, 5)?, &sg, &se, SEED)?;

    write(root, "pedigree.csv", &ped.to_csv())?;
    write(root, "config.toml", CONFIG)?;

    let template = ellipsoid_template();
    let patterns = momentum_patterns(&template);
    let kernel = KernelSpec::new(vec![40.0, 20.0, 10.0], None)?;
    let base_log = matrix_log(&SpdMatrix::new(DMatrix::from_fn(REGIONS, REGIONS, |i, j| if i == j { 1.0 } else { 0.3 }))?)?;
    let dirs = [sym(&[(0, 1, 0.25), (2, 3, -0.2)]), sym(&[(1, 4, 0.25), (0, 3, 0.15)])];

    let mut manifest = String::from("id,path\n");
    let mut confounders = String::from("id,age,sex\n");
    let mut subjects = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let mut rng = counter_rng(SEED, &[i as u64]);
        let row = latent.row(i);
        let age = rng.random_range(20.0..40.0f64);
        let sex = rng.random_range(0..2u8);
        confounders.push_str(&format!("{id},{age},{sex}\n"));

        // Shape: shoot the latent momentum combination, then scale, rotate, translate and jitter.
        let p = Momenta { vectors: (0..N_LANDMARKS).map(|l| patterns[0].vectors[l] * row[1] + patterns[1].vectors[l] * row[2]).collect() };
        let end = shoot(&kernel, &template, &p, 10)?.endpoint().clone();
        let scale = (0.08 * row[0] + 0.005 * (age - 30.0)).exp();
        let axis = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
        let rot: Matrix3<f64> = Rotation3::new(axis * 0.2).into_inner();
        let shift = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 5.0;
        let pts: Vec<Vector3<f64>> = end
            .points
            .iter()
            .map(|x| rot * (x * scale) + shift + Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 0.1)
            .collect();
        write(root, &format!("landmarks/{id}.csv"), &shapecov::io::matrix_to_csv(&LandmarkSet { points: pts }.to_matrix()))?;
        manifest.push_str(&format!("{id},landmarks/{id}.csv\n"));

        // Connectivity: perturb the log-covariance, then draw Gaussian time series.
        let log_c = &base_log + &dirs[0] * row[3] + &dirs[1] * row[4];
        let c = matrix_exp(&log_c);
        let chol = c.matrix().clone().cholesky().expect("matrix exponential is SPD").l();
        let mut runs = Vec::new();
        for r in 0..RUNS {
            let z = DMatrix::from_fn(SAMPLES, REGIONS, |_, _| normal(&mut rng));
            let x = z * chol.transpose();
            let rel = format!("timeseries/{id}_run{}.csv", r + 1);
            write(root, &rel, &shapecov::io::matrix_to_csv(&x))?;
            runs.push(rel);
        }
        subjects.push(serde_json::json!({ "id": id, "runs": runs }));
    }
    write(root, "landmarks.csv", &manifest)?;
    write(root, "confounders.csv", &confounders)?;
    let regions: Vec<String> = (1..=REGIONS).map(|r| format!("region{r}")).collect();
    let ts = serde_json::json!({ "regions": regions, "subjects": subjects });
    write(root, "timeseries.json", &(serde_json::to_string_pretty(&ts).expect("json") + "\n"))?;
    Ok(())
}
