use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_CI_S;
use crate::pipeline::DetectorConfig;
use crate::selection::{ObjectiveRegistry, DEFAULT_D_MAX};
use crate::synth::BenchmarkConfig;

/// Environment variables named `TFEC_<KEY>` override config keys, e.g.
/// `TFEC_SEED` or `TFEC_DETECTOR_MIN_BLOB_AREA`.
pub const ENV_PREFIX: &str = "TFEC_";

const SECTIONS: [&str; 5] = ["synth", "detector", "metrics", "selection", "sweep"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Width of the matching window in seconds.
    pub ci_s: f64,
    pub n_perm: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ci_s: DEFAULT_CI_S,
            n_perm: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub d_max: usize,
    pub objective: String,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            d_max: DEFAULT_D_MAX,
            objective: "f_score".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub backgrounds: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            backgrounds: (0..5).collect(),
        }
    }
}

/// Everything a command needs. The top-level `seed` drives every random
/// stream: the generator uses it directly and the permutation test uses it
/// as its base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// File with one clustering feature name per line; overrides
    /// `detector.features` when set.
    pub features_path: Option<PathBuf>,
    pub synth: BenchmarkConfig,
    pub detector: DetectorConfig,
    pub metrics: MetricsConfig,
    pub selection: SelectionConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            features_path: None,
            synth: BenchmarkConfig::default(),
            detector: DetectorConfig::default(),
            metrics: MetricsConfig::default(),
            selection: SelectionConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_env(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|s| (s.to_ascii_lowercase(), v))
        })
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let section = SECTIONS.iter().find(|s| key.starts_with(&format!("{s}_")));
        let value = env_value(&raw);
        match section {
            Some(s) => {
                let sub = table
                    .entry(s.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| cfg_err(format!("'{s}' must be a table")))?;
                sub.insert(key[s.len() + 1..].to_string(), value);
            }
            None => {
                table.insert(key, value);
            }
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses config text, applies environment overrides and validates.
    pub fn from_toml(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| cfg_err(format!("{e}")))?;
        if table.get("synth").and_then(|s| s.get("seed")).is_some() {
            return Err(cfg_err("set the seed with the top-level 'seed' key"));
        }
        apply_env(&mut table, env)?;
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| cfg_err(e.to_string()))?;
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    /// Loads `path` (defaults when absent) with overrides from the process
    /// environment. Relative `features_path` values resolve against the
    /// config file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => {
                fs::read_to_string(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?
            }
            None => String::new(),
        };
        let mut cfg = Self::from_toml(&text, std::env::vars())?;
        if let (Some(fp), Some(p)) = (&cfg.features_path, path) {
            if fp.is_relative() {
                cfg.features_path = Some(p.parent().unwrap_or(Path::new(".")).join(fp));
            }
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
    }

    /// Reads the feature list file into `detector.features` and checks every
    /// section.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(p) = &self.features_path {
            let text =
                fs::read_to_string(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?;
            self.detector.features = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect();
            if self.detector.features.is_empty() {
                return Err(cfg_err(format!("{} lists no features", p.display())));
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Parameter(m) | Error::Data(m) => Error::Config(m),
            other => other,
        };
        self.synth.validate().map_err(as_config)?;
        self.detector.validate().map_err(as_config)?;
        if !(self.metrics.ci_s > 0.0 && self.metrics.ci_s.is_finite()) {
            return Err(cfg_err("metrics.ci_s must be positive"));
        }
        if self.metrics.n_perm == 0 {
            return Err(cfg_err("metrics.n_perm must be at least 1"));
        }
        if self.selection.d_max == 0 {
            return Err(cfg_err("selection.d_max must be at least 1"));
        }
        if ObjectiveRegistry::with_builtins()
            .get(&self.selection.objective)
            .is_none()
        {
            return Err(cfg_err(format!(
                "unknown objective '{}'",
                self.selection.objective
            )));
        }
        if self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(cfg_err("sweep.snr_db must be finite"));
        }
        if let Some(&b) = self
            .sweep
            .backgrounds
            .iter()
            .find(|&&b| b >= self.synth.n_backgrounds)
        {
            return Err(cfg_err(format!("sweep background {b} out of range")));
        }
        Ok(())
    }

    /// Canonical TOML of the configuration; loading it back yields `self`.
    pub fn to_toml(&self) -> Result<String> {
        let mut table = toml::Table::try_from(self).map_err(|e| cfg_err(e.to_string()))?;
        if let Some(s) = table.get_mut("synth").and_then(toml::Value::as_table_mut) {
            s.remove("seed");
        }
        toml::to_string(&table).map_err(|e| cfg_err(e.to_string()))
    }
}
