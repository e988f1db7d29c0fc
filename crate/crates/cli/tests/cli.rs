use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapecov"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/twenty")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).env_clear().output().expect("spawn shapecov")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            std::fs::copy(e.path(), dest).unwrap();
        }
    }
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn kinship_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn defaults_print_parseable_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["defaults"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let cfg: shapecov_cli::config::Config = toml::from_str(&text).unwrap();
    assert_eq!(cfg, shapecov_cli::config::Config::default());
    assert!(text.contains("sigmas"));
}

#[test]
fn kinship_of_a_trio_plus_founder() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ped.csv"), "id,father,mother,mz_group\na,,,\nb,,,\nc,a,b,\nd,,,\n").unwrap();
    let o = run(&["--out", "res", "kinship", "ped.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = kinship_rows(&std::fs::read_to_string(dir.path().join("res/K.csv")).unwrap());
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.len() == 5));
    assert_eq!(rows[3][1], "0.5");
}

#[test]
fn mz_pair_gives_unit_relatedness() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", "res", "kinship", "--subjects-only", fixture().join("pedigree.csv").to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = kinship_rows(&std::fs::read_to_string(dir.path().join("res/K.csv")).unwrap());
    assert_eq!(rows.len(), 21);
    let ped = std::fs::read_to_string(fixture().join("pedigree.csv")).unwrap();
    let twin = ped.lines().find(|l| l.ends_with(|c: char| c.is_ascii_digit()) && l.contains(",mz")).unwrap();
    let id = twin.split(',').next().unwrap();
    let co_twin = ped.lines().filter(|l| l.contains(twin.rsplit(',').next().unwrap())).map(|l| l.split(',').next().unwrap()).find(|x| *x != id).unwrap();
    let i = rows[0].iter().position(|h| h == id).unwrap();
    let row = rows.iter().find(|r| r[0] == co_twin).unwrap();
    assert_eq!(row[i], "1");
}

#[test]
fn missing_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kinship", "no_such_pedigree.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_pedigree.csv"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[shape]\nsigma = [1.0]\n").unwrap();
    let o = run(&["--config", "c.toml", "pipeline"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn pipeline_on_fixture_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("fixture");
    copy_dir(&fixture(), &work);
    std::fs::remove_dir_all(work.join("out")).ok();

    let start = std::time::Instant::now();
    let a = run(&["--config", "config.toml", "--out", "a", "--jobs", "1", "pipeline"], &work);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(start.elapsed().as_secs() < 600);

    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(work.join("a/fit.json")).unwrap()).unwrap();
    assert_eq!(fit["n"], 20);
    assert_eq!(fit["sigma_g"].as_array().unwrap().len(), 5);
    assert_eq!(fit["converged"], true);
    let modes: serde_json::Value = serde_json::from_slice(&std::fs::read(work.join("a/modes.json")).unwrap()).unwrap();
    assert_eq!(modes["modes"].as_array().unwrap().len(), 4);
    assert!(work.join("a/displays/genetic_mode1_shape_plus.csv").is_file());
    assert!(work.join("a/displays/genetic_size_connectivity_plus.svg").is_file());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(work.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert!(manifest["outputs"]["fit.json"].is_string());

    let b = run(&["--config", "config.toml", "--out", "b", "--jobs", "1", "pipeline"], &work);
    let c = run(&["--config", "config.toml", "--out", "c", "--jobs", "8", "pipeline"], &work);
    assert!(b.status.success() && c.status.success());
    let ta = read_tree(&work.join("a"));
    assert_eq!(ta, read_tree(&work.join("b")));
    assert_eq!(ta, read_tree(&work.join("c")));
}

#[test]
fn truncation_beyond_cohort_size_fails_at_pca() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("fixture");
    copy_dir(&fixture(), &work);
    let cfg = std::fs::read_to_string(work.join("config.toml")).unwrap().replace("p_s = 2", "p_s = 25");
    std::fs::write(work.join("big.toml"), cfg).unwrap();
    let o = run(&["--config", "big.toml", "--out", "o", "pipeline"], &work);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("[pca]") && err.contains("truncation 25"), "{err}");
    // Earlier stages are kept and the manifest records where the run stopped.
    assert!(work.join("o/fit.json").exists() == false);
    assert!(work.join("o/spd/frechet_mean.csv").is_file());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(work.join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed at pca");
}

fn sim_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("sim.toml");
    std::fs::write(&p, format!("[simulation]\n{body}\n")).unwrap();
    p
}

#[test]
fn simulate_zero_replicates_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    sim_config(dir.path(), "replicates = 0");
    let o = run(&["--config", "sim.toml", "simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_seed_changes_values_not_schema() {
    let dir = tempfile::tempdir().unwrap();
    sim_config(dir.path(), "d_values = [1]\np_values = [2]\nreplicates = 3");
    let a = run(&["--config", "sim.toml", "--out", "s1", "--seed", "1", "simulate"], dir.path());
    let b = run(&["--config", "sim.toml", "--out", "s2", "--seed", "2", "simulate"], dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success(), "{}", stderr(&b));
    let ra = std::fs::read_to_string(dir.path().join("s1/results.csv")).unwrap();
    let rb = std::fs::read_to_string(dir.path().join("s2/results.csv")).unwrap();
    assert_eq!(ra.lines().next(), Some("d,p,replicate,err_g,err_e,converged"));
    assert_eq!(ra.lines().next(), rb.lines().next());
    assert_eq!(ra.lines().count(), 4);
    assert_ne!(ra, rb);
    assert!(dir.path().join("s1/boxplot_p2.svg").is_file());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s1/summary.json")).unwrap()).unwrap();
    assert!(summary["thresholds"][0]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn fixture_regenerates_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    shapecov_cli::fixture::generate(dir.path()).unwrap();
    let mut committed = read_tree(&fixture());
    committed.retain(|(p, _)| !p.starts_with("out"));
    assert_eq!(read_tree(dir.path()), committed);
}

#[test]
fn stage_subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let f = |name: &str| fx.join(name).to_str().unwrap().to_string();
    let o = run(&["--out", "g", "gpa", &f("landmarks.csv")], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["--config", &f("config.toml"), "--out", "m", "match", "--template", "g/gpa/template.csv", "--target", &f("landmarks/f0000_c1.csv")], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let side: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("m/momenta_f0000_c1.json")).unwrap()).unwrap();
    assert!(side["final_objective"].as_f64().unwrap() <= side["initial_objective"].as_f64().unwrap());
    assert_eq!(side["template_sha256"].as_str().unwrap().len(), 64);
    let o = run(&["--out", "s", "spd", &f("timeseries.json")], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["--out", "p", "pca", "s/spd/tangents.csv", "--p", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["--out", "p2", "pca", "s/spd/tangents.csv", "--p", "30"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    let full = run(&["--config", &f("config.toml"), "--out", "full", "pipeline"], dir.path());
    assert!(full.status.success(), "{}", stderr(&full));
    let o = run(&["--out", "v", "vcfit", "full/scores.csv", "full/kinship/K.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["--out", "c", "cca", "v/fit.json", "--modes", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let modes: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("c/modes.json")).unwrap()).unwrap();
    assert_eq!(modes["modes"].as_array().unwrap().len(), 2);
}
