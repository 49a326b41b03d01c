//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use backboot::backtest::{BacktestPlan, CovariatePerturbation, HistoricEstimates};
use backboot::dataset::{DataSchema, Frequency, Panel};
use backboot::eval::{EvalPlan, MethodSpec, SyntheticSpec};
use backboot::forecasters::ModelConfig;
use backboot::{BootstrapConfig, SelectorConfig};
use serde::{Deserialize, Serialize};

use crate::exit::ConfigError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub selector: SelectorConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub eval: EvalPlan,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SyntheticSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            runtime: RuntimeConfig::default(),
            data: DataConfig::default(),
            model: None,
            backtest: BacktestConfig::default(),
            selector: SelectorConfig::default(),
            bootstrap: BootstrapConfig::default(),
            forecast: ForecastConfig::default(),
            eval: EvalPlan::default(),
            methods: Vec::new(),
            simulate: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Worker threads; all available cores when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub id_col: String,
    pub time_col: String,
    pub target_col: String,
    pub freq: Frequency,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = DataSchema::default();
        Self {
            path: None,
            id_col: s.id_col,
            time_col: s.time_col,
            target_col: s.target_col,
            freq: s.freq,
            covariates: s.covariates,
        }
    }
}

impl DataConfig {
    pub fn schema(&self) -> DataSchema {
        DataSchema {
            id_col: self.id_col.clone(),
            time_col: self.time_col.clone(),
            target_col: self.target_col.clone(),
            freq: self.freq,
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationConfig {
    #[default]
    None,
    GaussianNoise {
        scales: BTreeMap<String, f64>,
    },
    HistoricEstimates {
        targets: Vec<String>,
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    /// First split point; defaults to the first point with enough training data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<i64>,
    #[serde(default = "one")]
    pub step: usize,
    #[serde(default = "default_max_horizon")]
    pub max_horizon: usize,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub meta_covariates: Vec<String>,
}

fn one() -> usize {
    1
}
fn default_max_horizon() -> usize {
    8
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            start: None,
            step: one(),
            max_horizon: default_max_horizon(),
            perturbation: PerturbationConfig::None,
            meta_covariates: Vec::new(),
        }
    }
}

impl BacktestConfig {
    pub fn plan(&self, panel: &Panel<f64>, min_train_len: usize) -> anyhow::Result<BacktestPlan<f64>> {
        let start = match self.start {
            Some(s) => s,
            None => panel.min_start().context("data has no series")? + min_train_len.max(1) as i64 - 1,
        };
        let perturbation = match &self.perturbation {
            PerturbationConfig::None => CovariatePerturbation::None,
            PerturbationConfig::GaussianNoise { scales } => CovariatePerturbation::GaussianNoise { scales: scales.clone() },
            PerturbationConfig::HistoricEstimates { targets, path } => CovariatePerturbation::HistoricEstimates {
                targets: targets.clone(),
                estimates: Arc::new(HistoricEstimates::load(path)?),
            },
        };
        Ok(BacktestPlan::new(start, self.step, self.max_horizon)?
            .with_perturbation(perturbation)
            .with_meta_covariates(self.meta_covariates.clone()))
    }
}

fn default_taus() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    /// Steps ahead for models without future covariates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub write_samples: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { taus: default_taus(), horizon: None, write_samples: false }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError(format!("unsupported config version {}, expected {CONFIG_VERSION}", cfg.version)).into());
        }
        Ok(cfg)
    }

    pub fn model(&self) -> anyhow::Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| ConfigError("missing [model] section".into()).into())
    }

    pub fn data_path(&self, flag: Option<&Path>) -> anyhow::Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data.path.clone())
            .ok_or_else(|| ConfigError("no data file: pass --data or set data.path".into()).into())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_materializes_defaults() {
        let cfg = RunConfig::parse("version = 1\n[model]\nkind = \"ridge\"\n").unwrap();
        assert_eq!(cfg.bootstrap.b, 1000);
        assert_eq!(cfg.backtest.max_horizon, 8);
        assert_eq!(cfg.eval.n_folds, 20);
        let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("version = 1\n[bootstrap]\nformla = \"additive\"\n").unwrap_err();
        assert!(err.to_string().contains("formla"), "{err}");
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(RunConfig::parse("version = 2\n").is_err());
        assert!(RunConfig::parse("[model]\nkind = \"ridge\"\n").is_err());
    }
}
