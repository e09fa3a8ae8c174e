//! Run configuration: one human-editable TOML file; CLI flags override
//! file values. Every option has a documented default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub seeds: SeedsConfig,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub retail: RetailConfig,
    #[serde(default)]
    pub wholesale: WholesaleConfig,
    #[serde(default)]
    pub meanfield: MeanFieldConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub ood: OodConfig,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PathsConfig {
    #[serde(default)]
    pub transactions: PathBuf,
    #[serde(default)]
    pub products: PathBuf,
    #[serde(default)]
    pub customers: PathBuf,
    /// Planted parameter file for mock backends (written by `generate`).
    #[serde(default)]
    pub planted: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedsConfig {
    pub run: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig { run: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendsConfig {
    #[serde(default)]
    pub selection_seed: u64,
    #[serde(default)]
    pub pool: Vec<BackendEntry>,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig {
            selection_seed: 0,
            pool: vec![BackendEntry {
                name: "oracle".to_string(),
                kind: BackendKind::MockPlanted,
                endpoint: None,
                model: None,
                temperature: 0.0,
                timeout_secs: 30,
                max_retries: 2,
                api_key_env: None,
                base: 3.0,
                slope: 0.5,
                text: String::new(),
                proposal: None,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    /// Replays planted decision rules (requires paths.planted).
    MockPlanted,
    /// Quantity responds linearly to the embedded mean-field mean.
    MockLinear,
    /// Dealer/service/manufacturer role player.
    MockWholesale,
    /// Fixed canned text.
    MockCanned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendEntry {
    pub name: String,
    pub kind: BackendKind,
    // http
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub api_key_env: Option<String>,
    // mock-linear
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_slope")]
    pub slope: f64,
    // mock-canned
    #[serde(default)]
    pub text: String,
    // mock-wholesale
    #[serde(default)]
    pub proposal: Option<String>,
}

fn default_timeout() -> u64 {
    30
}

fn default_retries() -> u32 {
    2
}

fn default_base() -> f64 {
    3.0
}

fn default_slope() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetailConfig {
    pub k_distractors: usize,
    pub n_instances: usize,
    /// Stability samples per instance (>= 2 enables the stability metric).
    pub samples_per_instance: usize,
    pub consistency_sigma: f64,
    /// 0 disables the consistency diagnostic.
    pub consistency_k: usize,
    pub bottom_half_only: bool,
    pub strategies: bool,
    pub attention: bool,
    pub trends_window: u32,
}

impl Default for RetailConfig {
    fn default() -> Self {
        RetailConfig {
            k_distractors: 4,
            n_instances: 100,
            samples_per_instance: 2,
            consistency_sigma: 0.0,
            consistency_k: 0,
            bottom_half_only: false,
            strategies: false,
            attention: false,
            trends_window: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WholesaleConfig {
    pub n_rounds: usize,
    pub n_dialogues: usize,
    /// Empty string uses the built-in role templates.
    #[serde(default)]
    pub templates_dir: String,
}

impl Default for WholesaleConfig {
    fn default() -> Self {
        WholesaleConfig {
            n_rounds: 6,
            n_dialogues: 5,
            templates_dir: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    pub window: u32,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Empty string means "the month after the last transaction".
    #[serde(default)]
    pub as_of_month: String,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            window: 3,
            damping: 0.5,
            tol: 1e-6,
            max_iter: 50,
            as_of_month: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_buckets: usize,
    pub min_count: u64,
    pub w_min: f64,
    pub w_max: f64,
    pub delta: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n_buckets: 11,
            min_count: 5,
            w_min: 0.2,
            w_max: 5.0,
            delta: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OodConfig {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<(RunConfig, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let hash = config_hash(&text)?;
        Ok((config, hash))
    }

    /// Data paths must exist at load time (output dir is created on demand).
    pub fn check_paths(&self, need_data: bool) -> CliResult<()> {
        if !need_data {
            return Ok(());
        }
        for (label, path) in [
            ("transactions", &self.paths.transactions),
            ("products", &self.paths.products),
            ("customers", &self.paths.customers),
        ] {
            if path.as_os_str().is_empty() {
                return Err(CliError::usage(format!("paths.{label} is not set")));
            }
            if !path.exists() {
                return Err(CliError::usage(format!(
                    "paths.{label} does not exist: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Sort every map recursively so the hash is stable under field reordering.
fn canonical_json(value: &serde_json::Value) -> serde_json::Value {
    match value {
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<String, serde_json::Value> = map
                .iter()
                .map(|(k, v)| (k.clone(), canonical_json(v)))
                .collect();
            serde_json::to_value(sorted).expect("canonical map")
        }
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.iter().map(canonical_json).collect())
        }
        other => other.clone(),
    }
}

/// Fingerprint of the configuration content, independent of key order.
pub fn config_hash(config_text: &str) -> CliResult<String> {
    let value: toml::Value = toml::from_str(config_text)
        .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
    let json = serde_json::to_value(&value)
        .map_err(|e| CliError::runtime(format!("config not serializable: {e}")))?;
    let canonical = canonical_json(&json).to_string();
    Ok(marketsim_core::seed::hash_hex(&canonical))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.retail.k_distractors, 4);
        assert_eq!(config.wholesale.n_rounds, 6);
        assert_eq!(config.meanfield.damping, 0.5);
        assert_eq!(config.calibration.w_max, 5.0);
        assert_eq!(config.seeds.run, 1);
    }

    #[test]
    fn hash_is_stable_under_field_reordering() {
        let a = "[seeds]\nrun = 5\n[retail]\nk_distractors = 3\nn_instances = 10\n";
        let b = "[retail]\nn_instances = 10\nk_distractors = 3\n[seeds]\nrun = 5\n";
        assert_eq!(config_hash(a).unwrap(), config_hash(b).unwrap());
        let c = "[seeds]\nrun = 6\n[retail]\nk_distractors = 3\nn_instances = 10\n";
        assert_ne!(config_hash(a).unwrap(), config_hash(c).unwrap());
    }
}
