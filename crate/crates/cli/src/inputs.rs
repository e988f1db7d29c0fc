//! Readers for the manifest and table formats consumed by the pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;
use shapecov::lddmm::LandmarkSet;
use shapecov::spd::TimeSeriesPanel;
use shapecov::tangent_stats::ConfounderTable;

use crate::error::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn sibling(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// `id,path` rows; paths relative to the manifest.
pub fn landmark_manifest(path: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let text = read(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "path"] {
        return Err(CliError::validation(format!("{}: header must be id,path", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        out.push((rec[0].to_string(), sibling(path, &rec[1])));
    }
    if out.is_empty() {
        return Err(CliError::validation(format!("{}: no subjects listed", path.display())));
    }
    Ok(out)
}

pub fn landmarks(path: &Path) -> Result<LandmarkSet<f64>, CliError> {
    let m: DMatrix<f64> = shapecov::io::matrix_from_csv(&read(path)?, path)?;
    Ok(LandmarkSet::from_matrix(&m).map_err(|e| CliError::from(e).at("input"))?)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSeriesManifest {
    #[serde(default)]
    pub regions: Vec<String>,
    pub subjects: Vec<TimeSeriesSubject>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSeriesSubject {
    pub id: String,
    pub runs: Vec<String>,
}

/// Parsed manifest plus the resolved run paths of every subject.
pub struct TimeSeriesInputs {
    pub regions: Vec<String>,
    pub runs: BTreeMap<String, Vec<PathBuf>>,
}

pub fn timeseries_manifest(path: &Path) -> Result<TimeSeriesInputs, CliError> {
    let m: TimeSeriesManifest = serde_json::from_str(&read(path)?).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let mut runs = BTreeMap::new();
    for s in m.subjects {
        if s.runs.is_empty() {
            return Err(CliError::validation(format!("{}: subject {} has no runs", path.display(), s.id)));
        }
        let paths = s.runs.iter().map(|r| sibling(path, r)).collect();
        if runs.insert(s.id.clone(), paths).is_some() {
            return Err(CliError::validation(format!("{}: subject {} listed twice", path.display(), s.id)));
        }
    }
    Ok(TimeSeriesInputs { regions: m.regions, runs })
}

pub fn panel(paths: &[PathBuf]) -> Result<TimeSeriesPanel<f64>, CliError> {
    let runs = paths.iter().map(|p| Ok(shapecov::io::matrix_from_csv(&read(p)?, p)?)).collect::<Result<Vec<_>, CliError>>()?;
    Ok(TimeSeriesPanel { runs })
}

/// Confounder CSV (`id,<columns>`), reordered to `ids`.
pub fn confounders(path: &Path, ids: &[String], continuous: &[String]) -> Result<ConfounderTable<f64>, CliError> {
    let text = read(path)?;
    let err = |m: String| CliError::validation(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_string).collect();
    if headers.first().map(String::as_str) != Some("id") {
        return Err(err("first column must be id".into()));
    }
    let names = &headers[1..];
    for c in continuous {
        if !names.contains(c) {
            return Err(err(format!("continuous column {c:?} not present")));
        }
    }
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let vals = rec.iter().skip(1).map(|v| v.trim().parse::<f64>().map_err(|_| err(format!("non-numeric value {v:?}")))).collect::<Result<Vec<_>, _>>()?;
        rows.insert(rec[0].to_string(), vals);
    }
    let mut z = DMatrix::zeros(ids.len(), names.len());
    for (i, id) in ids.iter().enumerate() {
        let row = rows.get(id).ok_or_else(|| err(format!("no confounders for subject {id}")))?;
        for (j, v) in row.iter().enumerate() {
            z[(i, j)] = *v;
        }
    }
    let mask = names.iter().map(|n| continuous.contains(n)).collect();
    Ok(ConfounderTable::new(z, mask)?)
}

/// One label per non-empty line.
pub fn labels(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}
