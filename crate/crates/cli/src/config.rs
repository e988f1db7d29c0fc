//! Pipeline configuration (TOML). Every field has a default; `shapecov defaults` prints them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub inputs: Inputs,
    pub shape: ShapeConfig,
    pub connectivity: ConnectivityConfig,
    pub model: ModelConfig,
    pub cca: CcaConfig,
    pub simulation: SimulationConfig,
    pub output: OutputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 2024,
            inputs: Inputs::default(),
            shape: ShapeConfig::default(),
            connectivity: ConnectivityConfig::default(),
            model: ModelConfig::default(),
            cca: CcaConfig::default(),
            simulation: SimulationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Input files; relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Pedigree CSV (`id,father,mother,mz_group`).
    pub pedigree: String,
    /// Landmark manifest CSV (`id,path`); defines the subjects and their order.
    pub landmarks: String,
    /// Time-series manifest JSON.
    pub timeseries: String,
    /// Optional confounder CSV (`id,<columns>`); empty means intercept only.
    pub confounders: String,
    /// Confounder columns that also get a squared term.
    pub continuous: Vec<String>,
    /// Optional region label file (one label per line) used to order heatmaps.
    pub region_labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub sigmas: Vec<f64>,
    /// Kernel weights; empty means equal weights.
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub steps: usize,
    pub max_iter: usize,
    pub remove_scale: bool,
    /// Rescale size-normalized shapes to the geometric-mean cohort size before matching.
    pub rescale_to_mean_size: bool,
    pub p_s: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![8.0, 4.0, 2.0, 1.0, 0.5, 0.1],
            weights: Vec::new(),
            lambda: 1e-3,
            steps: 10,
            max_iter: 300,
            remove_scale: true,
            rescale_to_mean_size: true,
            p_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectivityConfig {
    pub eps_pd: f64,
    pub p_c: usize,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        Self { eps_pd: 1e-10, p_c: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub e_floor: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { e_floor: 1e-8, max_iter: 500, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcaConfig {
    pub n_modes: usize,
    /// Negative means the per-block default `1e-8 · trace / dim`.
    pub ridge: f64,
    /// Display multiplier `c` in `±cσ`.
    pub scale: f64,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self { n_modes: 3, ridge: -1.0, scale: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// `desk` or `full`; the lists below override the preset when non-empty.
    pub preset: String,
    pub d_values: Vec<usize>,
    pub p_values: Vec<usize>,
    pub replicates: Option<usize>,
    /// Kinship CSV for the base cohort; empty means the synthetic 200-subject cohort.
    pub base_kinship: String,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { preset: "desk".into(), d_values: Vec::new(), p_values: Vec::new(), replicates: None, base_kinship: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// A parsed config together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let config: Config = toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base };
        loaded.config.validate()?;
        Ok(loaded)
    }

    pub fn defaults() -> Self {
        Self { config: Config::default(), base: PathBuf::new() }
    }

    /// Resolves a configured path; `None` for empty strings.
    pub fn resolve(&self, p: &str) -> Option<PathBuf> {
        if p.is_empty() {
            None
        } else {
            let path = Path::new(p);
            Some(if path.is_absolute() { path.to_path_buf() } else { self.base.join(path) })
        }
    }

    pub fn require(&self, p: &str, what: &str) -> Result<PathBuf, CliError> {
        let path = self.resolve(p).ok_or_else(|| CliError::validation(format!("config does not name a {what} file")))?;
        if !path.is_file() {
            return Err(CliError::validation(format!("{what} file not found: {}", path.display())));
        }
        Ok(path)
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::validation(m.to_string()));
        if self.shape.sigmas.is_empty() || self.shape.sigmas.iter().any(|s| !(*s > 0.0)) {
            return bad("shape.sigmas must be non-empty and positive");
        }
        if !self.shape.weights.is_empty() && self.shape.weights.len() != self.shape.sigmas.len() {
            return bad("shape.weights must match shape.sigmas in length");
        }
        if !(self.shape.lambda > 0.0) {
            return bad("shape.lambda must be positive");
        }
        if self.shape.steps == 0 || self.shape.max_iter == 0 {
            return bad("shape.steps and shape.max_iter must be positive");
        }
        if self.shape.p_s == 0 || self.connectivity.p_c == 0 {
            return bad("p_s and p_c must be positive");
        }
        if !(self.connectivity.eps_pd > 0.0) {
            return bad("connectivity.eps_pd must be positive");
        }
        if !(self.model.e_floor > 0.0) || !(self.model.grad_tol > 0.0) || self.model.max_iter == 0 {
            return bad("model settings must be positive");
        }
        if self.cca.n_modes == 0 || !(self.cca.scale >= 0.0) {
            return bad("cca.n_modes must be positive and cca.scale non-negative");
        }
        if !matches!(self.simulation.preset.as_str(), "desk" | "full") {
            return bad("simulation.preset must be \"desk\" or \"full\"");
        }
        if self.simulation.replicates == Some(0) {
            return bad("simulation.replicates must be positive");
        }
        if self.simulation.d_values.contains(&0) || self.simulation.p_values.contains(&0) {
            return bad("simulation d and p values must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: Config = toml::from_str("[shape]\np_s = 4\n").unwrap();
        assert_eq!(c.shape.p_s, 4);
        assert_eq!(c.shape.lambda, 1e-3);
    }
}
