//! Training and forecasting facade over backtest, selector and bootstrap.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::{load_collection, run_backtest, save_collection, BacktestPlan, ResidualCollection};
use crate::bootstrap::{forecast_distribution, BootstrapConfig, DistributionForecast, ForecastTarget};
use crate::dataset::{load_panel, save_panel, DataSchema, Panel};
use crate::error::{Error, Result, Stage};
use crate::forecasters::{FittedForecaster, ForecastKind, ModelParams, PointForecaster};
use crate::scalar::Scalar;
use crate::selector::{SelectorConfig, SelectorModel};

const BUNDLE_VERSION: u32 = 1;

/// Bundle metadata stored in `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    pub version: u32,
    pub model: String,
    pub kind: ForecastKind,
    pub data_fingerprint: String,
    pub bootstrap: BootstrapConfig,
    pub selector: SelectorConfig,
    /// Settings changed after training, e.g. from the command line.
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

/// A point forecaster trained on the full panel together with its backtest
/// residuals and fitted selector.
pub struct TrainedDFModel<T: Scalar> {
    fitted: Box<dyn FittedForecaster<T>>,
    residuals: ResidualCollection<T>,
    selector: SelectorModel<T>,
    history: Panel<T>,
    config: BundleConfig,
}

impl<T: Scalar> fmt::Debug for TrainedDFModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrainedDFModel")
            .field("model", &self.config.model)
            .field("residuals", &self.residuals.len())
            .field("selector", &self.selector.variant)
            .field("bootstrap", &self.config.bootstrap)
            .finish()
    }
}

impl<T: Scalar> PartialEq for TrainedDFModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.fitted.params() == other.fitted.params()
            && self.residuals == other.residuals
            && self.selector == other.selector
            && self.history == other.history
            && self.config == other.config
    }
}

/// Backtest, selector fit and final fit on the whole panel, in that order.
pub fn train<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    plan: &BacktestPlan<T>,
    selector: &SelectorConfig,
    cfg: &BootstrapConfig,
) -> Result<TrainedDFModel<T>> {
    cfg.validate()?;
    let residuals = run_backtest(panel, forecaster, plan, cfg.seed).map_err(|e| e.in_stage(Stage::Backtest))?;
    let selector_model = selector.fit(&residuals).map_err(|e| e.in_stage(Stage::Selector))?;
    let fitted = forecaster.fit(panel).map_err(|e| e.in_stage(Stage::Fit))?;
    let config = BundleConfig {
        version: BUNDLE_VERSION,
        model: forecaster.describe(),
        kind: forecaster.kind(),
        data_fingerprint: panel.fingerprint(),
        bootstrap: cfg.clone(),
        selector: selector.clone(),
        overrides: BTreeMap::new(),
    };
    Ok(TrainedDFModel { fitted, residuals, selector: selector_model, history: panel.clone(), config })
}

impl<T: Scalar> TrainedDFModel<T> {
    pub fn residuals(&self) -> &ResidualCollection<T> {
        &self.residuals
    }

    pub fn selector(&self) -> &SelectorModel<T> {
        &self.selector
    }

    pub fn bootstrap(&self) -> &BootstrapConfig {
        &self.config.bootstrap
    }

    pub fn history(&self) -> &Panel<T> {
        &self.history
    }

    pub fn config(&self) -> &BundleConfig {
        &self.config
    }

    pub fn fitted(&self) -> &dyn FittedForecaster<T> {
        self.fitted.as_ref()
    }

    /// Replaces the bootstrap settings and records `overrides`.
    pub fn with_bootstrap(mut self, cfg: BootstrapConfig, overrides: BTreeMap<String, String>) -> Result<Self> {
        cfg.validate()?;
        self.config.bootstrap = cfg;
        self.config.overrides.extend(overrides);
        Ok(self)
    }

    /// Residual selection for a single future point.
    pub fn select(&self, future: &crate::selector::FutureMeta<T>) -> Result<crate::selector::Selection> {
        self.selector.select(&self.residuals, future)
    }

    /// Distribution forecasts from the end of the training history.
    pub fn forecast(&self, targets: &[ForecastTarget<T>]) -> Result<Vec<DistributionForecast<T>>> {
        self.forecast_with_history(&self.history, targets)
    }

    /// Distribution forecasts from the end of `history`, which may extend the
    /// training panel with newer observations.
    pub fn forecast_with_history(
        &self,
        history: &Panel<T>,
        targets: &[ForecastTarget<T>],
    ) -> Result<Vec<DistributionForecast<T>>> {
        forecast_distribution(self.fitted.as_ref(), history, targets, &self.selector, &self.residuals, &self.config.bootstrap)
            .map_err(|e| e.in_stage(Stage::Forecast))
    }

    /// Writes the bundle: `model.json`, `residuals.csv`, `provenance.json`,
    /// `selector.json`, `config.json` and `history.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.save_inner(dir.as_ref()).map_err(|e| e.in_stage(Stage::Persistence))
    }

    fn save_inner(&self, dir: &Path) -> Result<()> {
        let params = self
            .fitted
            .params()
            .ok_or_else(|| Error::InvalidInput(format!("model {} cannot be persisted", self.config.model)))?;
        save_collection(&self.residuals, dir)?;
        write_json(&dir.join("model.json"), &params)?;
        write_json(&dir.join("selector.json"), &self.selector)?;
        write_json(&dir.join("config.json"), &self.config)?;
        save_panel(&self.history, dir.join("history.csv"), &DataSchema::default())
    }

    /// Reads a bundle written by [`TrainedDFModel::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::load_inner(dir.as_ref()).map_err(|e| e.in_stage(Stage::Persistence))
    }

    fn load_inner(dir: &Path) -> Result<Self> {
        let config: BundleConfig = read_json(&dir.join("config.json"))?;
        if config.version != BUNDLE_VERSION {
            return Err(Error::Schema(format!("unsupported bundle version {}", config.version)));
        }
        let params: ModelParams<T> = read_json(&dir.join("model.json"))?;
        let selector: SelectorModel<T> = read_json(&dir.join("selector.json"))?;
        let residuals = load_collection(dir.join("residuals.csv"))?;
        let history = load_panel(dir.join("history.csv"), &DataSchema::default())?;
        if history.fingerprint() != config.data_fingerprint {
            return Err(Error::ProvenanceMismatch("history.csv does not match the fingerprint in config.json".into()));
        }
        if residuals.provenance().data_fingerprint != config.data_fingerprint {
            return Err(Error::ProvenanceMismatch("residuals were produced on a different panel than the model fit".into()));
        }
        Ok(Self { fitted: params.into_fitted()?, residuals, selector, history, config })
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{Provenance, ResidualRecord};
    use crate::dataset::Series;
    use crate::forecasters::{Instrumented, Ridge, SeasonalNaive};
    use crate::selector::FutureMeta;

    fn toy_panel() -> Panel<f64> {
        let mk = |id: &str, scale: f64| {
            let ys: Vec<f64> = (0..40).map(|t| scale * (10.0 + t as f64) + ((t * 7) % 5) as f64 - 2.0).collect();
            let xs: Vec<Vec<f64>> = (0..40).map(|t| vec![scale, scale * t as f64]).collect();
            Series::new(id, 0, ys, xs).unwrap()
        };
        Panel::new(vec![mk("a", 1.0), mk("b", 2.0)], vec!["level".into(), "slope".into()]).unwrap()
    }

    fn targets(panel: &Panel<f64>, k: usize) -> Vec<ForecastTarget<f64>> {
        panel
            .series()
            .iter()
            .map(|s| {
                let scale = s.covariates()[0][0];
                let fut = (40..40 + k).map(|t| vec![scale, scale * t as f64]).collect();
                ForecastTarget::new(s.id(), fut)
            })
            .collect()
    }

    fn trained() -> TrainedDFModel<f64> {
        let panel = toy_panel();
        let plan = BacktestPlan::new(20, 2, 3).unwrap();
        let ridge = Ridge::new(0.1).unwrap();
        train(&panel, &ridge, &plan, &SelectorConfig::default(), &BootstrapConfig::additive(200, 7)).unwrap()
    }

    #[test]
    fn saved_bundle_reloads_equal() {
        let m = trained();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        for f in ["model.json", "residuals.csv", "provenance.json", "selector.json", "config.json", "history.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = TrainedDFModel::<f64>::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let t = targets(&toy_panel(), 3);
        assert_eq!(back.forecast(&t).unwrap(), m.forecast(&t).unwrap());
    }

    #[test]
    fn identity_selector_selects_everything() {
        let m = trained();
        let sel = m.select(&FutureMeta::new("a", 39, 1, 50.0)).unwrap();
        assert_eq!(sel.indices.len(), m.residuals().len());
        assert!(!sel.fallback);
    }

    #[test]
    fn plan_without_splits_fails_in_backtest_stage() {
        let panel = toy_panel();
        let plan = BacktestPlan::new(39, 1, 3).unwrap();
        let err = train(&panel, &Ridge::new(0.1).unwrap(), &plan, &SelectorConfig::default(), &BootstrapConfig::additive(10, 0))
            .unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Backtest));
        assert!(matches!(err.root(), Error::EmptyPlan(_)));
    }

    #[test]
    fn forecasting_never_refits() {
        let panel = toy_panel();
        let inst = Instrumented::new(Ridge::new(0.1).unwrap());
        let counter = inst.counter();
        let plan = BacktestPlan::new(20, 2, 3).unwrap();
        let m = train(&panel, &inst, &plan, &SelectorConfig::default(), &BootstrapConfig::additive(100, 1)).unwrap();
        let fits = counter.fits();
        let a = m.forecast(&targets(&panel, 3)).unwrap();
        let b = m.forecast(&targets(&panel, 3)).unwrap();
        assert_eq!(counter.fits(), fits);
        assert_eq!(a, b);
        let q = a[0].quantile(0.37).unwrap();
        assert!(q.is_finite());
    }

    #[test]
    fn horizon_beyond_collection_falls_back() {
        let mut recs = Vec::new();
        for h in 1..=2i64 {
            for k in 0..40 {
                let eps = if h == 1 { -1.0 } else { 1.0 } * (1.0 + k as f64 / 40.0);
                recs.push(ResidualRecord::new(format!("s{}", k % 2), 10 + k, 10 + k + h, 5.0, 5.0 + eps).unwrap());
            }
        }
        let coll = ResidualCollection::new(recs, Provenance::manual("h2"));
        assert_eq!(coll.max_horizon(), 2);
        let selector = SelectorConfig::rules(&["horizon <= 1"]).fit(&coll).unwrap();
        let within = selector.select(&coll, &FutureMeta::new("a", 50, 2, 5.0)).unwrap();
        assert_eq!(within.indices.len(), 40);
        assert!(!within.fallback);
        let beyond = selector.select(&coll, &FutureMeta::new("a", 50, 5, 5.0)).unwrap();
        assert_eq!(beyond.indices.len(), 80);
        assert!(beyond.fallback);

        let history = Panel::new(vec![Series::univariate("a", 0, vec![5.0; 12]).unwrap()], Vec::new()).unwrap();
        let fitted = SeasonalNaive::new(1).unwrap().fit(&history).unwrap();
        let dfs = forecast_distribution(
            fitted.as_ref(),
            &history,
            &[ForecastTarget::univariate("a", 5)],
            &selector,
            &coll,
            &BootstrapConfig::additive(50, 3),
        )
        .unwrap();
        assert_eq!(dfs.len(), 5);
        assert!(!dfs[1].selector_fallback);
        assert!(dfs[4].selector_fallback);
    }
}
