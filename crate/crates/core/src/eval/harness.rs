//! Nested rolling-origin evaluation of distribution forecasts.
//!
//! Each fold cuts the panel at an origin. Residuals for the backtest methods
//! come from a separate backtest run inside the fold's training data only
//! (its latter `nested_residual_fraction`), the PF is fitted on the full
//! training data, and the next `horizon` points of each series are scored.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ace, mape, pinball};
use super::synthetic::QuantileOracle;
use crate::backtest::{run_backtest_on, BacktestPlan, ResidualCollection};
use crate::bootstrap::{
    baseline_fm, baseline_fr, forecast_distribution, BaggingStat, BootstrapConfig, DistributionForecast, ForecastTarget,
    DEFAULT_FM_REFITS,
};
use crate::dataset::{split_at, Panel};
use crate::error::{Error, Result};
use crate::forecasters::{FittedForecaster, PointForecaster};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::selector::SelectorConfig;

fn default_folds() -> usize {
    20
}
fn default_horizon() -> usize {
    8
}
fn default_taus() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}
fn default_fraction() -> f64 {
    0.5
}
fn default_step() -> usize {
    1
}

/// Evaluation settings (`eval.*` keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPlan {
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_fraction")]
    pub nested_residual_fraction: f64,
    /// Step between split points of the nested backtest.
    #[serde(default = "default_step")]
    pub backtest_step: usize,
    /// First fold origin; defaults to the middle of the panel's time range.
    #[serde(default)]
    pub first_origin: Option<i64>,
    #[serde(default)]
    pub seed: u64,
    /// Covariates copied into residual meta (for `extra.*` selector features).
    #[serde(default)]
    pub meta_covariates: Vec<String>,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            n_folds: default_folds(),
            horizon: default_horizon(),
            taus: default_taus(),
            nested_residual_fraction: default_fraction(),
            backtest_step: default_step(),
            first_origin: None,
            seed: 0,
            meta_covariates: Vec::new(),
        }
    }
}

impl EvalPlan {
    pub fn new(n_folds: usize, horizon: usize) -> Self {
        Self { n_folds, horizon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_folds == 0 || self.horizon == 0 || self.backtest_step == 0 {
            return Err(Error::InvalidInput("n_folds, horizon and backtest_step must be >= 1".into()));
        }
        if self.taus.is_empty() {
            return Err(Error::InvalidInput("at least one tau is required".into()));
        }
        if let Some(&t) = self.taus.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidTau(t));
        }
        if self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("taus must be strictly increasing".into()));
        }
        if !(self.nested_residual_fraction > 0.0 && self.nested_residual_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "nested_residual_fraction must be in (0, 1], got {}",
                self.nested_residual_fraction
            )));
        }
        Ok(())
    }

    /// Evenly spaced fold origins.
    pub fn origins<T: Scalar>(&self, panel: &Panel<T>, min_train_len: usize) -> Result<Vec<i64>> {
        self.validate()?;
        let (Some(min_s), Some(max_d)) = (panel.min_start(), panel.max_end()) else {
            return Err(Error::Infeasible("panel is empty".into()));
        };
        let last = max_d - self.horizon as i64;
        let first = self.first_origin.unwrap_or(min_s + (max_d - min_s) / 2);
        // The nested backtest needs a split point with a trainable history.
        let earliest = min_s + min_train_len.max(1) as i64;
        if first < earliest {
            return Err(Error::Infeasible(format!(
                "first origin {first} leaves no room for a nested backtest; it must be >= {earliest}"
            )));
        }
        if last < first {
            return Err(Error::Infeasible(format!(
                "horizon {} needs origins <= {last} (last time {max_d}), but the first origin is {first}",
                self.horizon
            )));
        }
        let span = (last - first) as usize;
        if self.n_folds > span + 1 {
            return Err(Error::Infeasible(format!(
                "{} folds need {} distinct origins, but only {} fit between {first} and {last}",
                self.n_folds,
                self.n_folds,
                span + 1
            )));
        }
        if self.n_folds == 1 {
            return Ok(vec![last]);
        }
        Ok((0..self.n_folds)
            .map(|k| first + ((k * span) as f64 / (self.n_folds - 1) as f64).round() as i64)
            .collect())
    }

    /// Split points of the nested backtest for a fold at `origin`.
    pub fn nested_splits(&self, min_s: i64, origin: i64, min_train_len: usize) -> Vec<i64> {
        let span = (origin - min_s) as f64;
        let lo = origin - (self.nested_residual_fraction * span).floor() as i64;
        let lo = lo.max(min_s + min_train_len.max(1) as i64 - 1);
        (lo..origin).step_by(self.backtest_step).collect()
    }
}

/// How a method turns training data into distribution forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodKind {
    /// Backtest residuals with selector and bootstrap (BA or BM).
    Backtest {
        #[serde(default)]
        bootstrap: BootstrapConfig,
        #[serde(default)]
        selector: SelectorConfig,
    },
    /// Fitted-residual baseline.
    Fr {
        #[serde(default)]
        bootstrap: BootstrapConfig,
    },
    /// Fitted-model baseline.
    Fm {
        #[serde(default)]
        bootstrap: BootstrapConfig,
        #[serde(default = "default_refits")]
        refits: usize,
    },
    /// True conditional quantiles from a synthetic oracle.
    Oracle,
}

fn default_refits() -> usize {
    DEFAULT_FM_REFITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: MethodKind,
}

impl MethodSpec {
    pub fn backtest(name: impl Into<String>, bootstrap: BootstrapConfig, selector: SelectorConfig) -> Self {
        Self { name: name.into(), kind: MethodKind::Backtest { bootstrap, selector } }
    }

    pub fn fr(name: impl Into<String>, bootstrap: BootstrapConfig) -> Self {
        Self { name: name.into(), kind: MethodKind::Fr { bootstrap } }
    }

    pub fn fm(name: impl Into<String>, bootstrap: BootstrapConfig, refits: usize) -> Self {
        Self { name: name.into(), kind: MethodKind::Fm { bootstrap, refits } }
    }

    pub fn oracle(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: MethodKind::Oracle }
    }
}

/// Everything a fold learns from its training data.
pub struct FoldTraining<T: Scalar> {
    pub fold: usize,
    pub origin: i64,
    pub train: Panel<T>,
    pub residuals: Option<ResidualCollection<T>>,
    pub model: Box<dyn FittedForecaster<T>>,
}

/// Trains fold `fold` at `origin`: nested backtest (if `with_residuals`)
/// and final PF fit, both on data up to `origin` only.
pub fn fold_training<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    plan: &EvalPlan,
    fold: usize,
    origin: i64,
    with_residuals: bool,
) -> Result<FoldTraining<T>> {
    let (train, _) = split_at(panel, origin);
    let min_len = forecaster.min_train_len();
    let residuals = if with_residuals {
        let min_s = train.min_start().ok_or_else(|| Error::Infeasible(format!("fold {fold}: empty training data")))?;
        let splits = plan.nested_splits(min_s, origin, min_len);
        let bplan = BacktestPlan::new(splits.first().copied().unwrap_or(origin), plan.backtest_step, plan.horizon)?
            .with_meta_covariates(plan.meta_covariates.clone());
        Some(run_backtest_on(&train, forecaster, &bplan, derive_seed(plan.seed, &[fold as u64]), &splits)?)
    } else {
        None
    };
    let model = forecaster.fit(&train.filter(|s| s.len() >= min_len))?;
    Ok(FoldTraining { fold, origin, train, residuals, model })
}

/// One scored future point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub fold: usize,
    pub origin: i64,
    pub series_id: String,
    pub horizon: usize,
    pub truth: f64,
    pub point_forecast: Option<f64>,
    pub bagging_pf: Option<f64>,
    pub quantiles: Vec<f64>,
    pub selector_fallback: bool,
}

/// Coverage statistics for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub tau: f64,
    /// `None` when pooled over horizons.
    pub horizon: Option<usize>,
    pub n: usize,
    pub co: f64,
    pub ace: f64,
    pub pinball: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub n_points: usize,
    /// Mean over the (τ, horizon) cells of `|CO − τ|`, with CO pooled over
    /// folds and series within each cell.
    pub mean_ace: f64,
    /// Mean over τ of `|CO − τ|` with CO pooled over folds, series and
    /// horizons.
    pub mean_ace_pooled: f64,
    pub mean_pinball: f64,
    pub per_tau: Vec<CellStats>,
    pub per_horizon_tau: Vec<CellStats>,
    pub mape_pf: Option<f64>,
    pub mape_bagging: Option<f64>,
    pub mape_excluded: usize,
    pub selector_fallbacks: usize,
}

/// Per-(fold, method, τ, horizon) row of the flat CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldCell {
    pub fold: usize,
    pub origin: i64,
    pub method: String,
    pub tau: f64,
    pub horizon: usize,
    pub n: usize,
    pub co: f64,
    pub ace: f64,
    pub pinball: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plan: EvalPlan,
    pub model: String,
    pub n_folds: usize,
    pub origins: Vec<i64>,
    pub methods: Vec<MethodReport>,
    pub fold_cells: Vec<FoldCell>,
    pub runtime_secs: f64,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Writes [`FoldCell`] rows as CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for c in &self.fold_cells {
            w.serialize(c)?;
        }
        w.flush().map_err(|e| Error::io("<eval csv>", e))?;
        Ok(())
    }
}

fn score_dfs<T: Scalar>(
    panel: &Panel<T>,
    fold: usize,
    dfs: &[DistributionForecast<T>],
    taus: &[f64],
) -> Result<Vec<ScoredPoint>> {
    dfs.iter()
        .map(|d| {
            Ok(ScoredPoint {
                fold,
                origin: d.origin,
                series_id: d.series_id.clone(),
                horizon: d.horizon,
                truth: truth(panel, &d.series_id, d.target_time)?,
                point_forecast: Some(d.point_forecast.as_f64()),
                bagging_pf: Some(d.bagging(BaggingStat::Median)?.as_f64()),
                quantiles: d.quantiles(taus)?.into_iter().map(Scalar::as_f64).collect(),
                selector_fallback: d.selector_fallback,
            })
        })
        .collect()
}

fn truth<T: Scalar>(panel: &Panel<T>, id: &str, t: i64) -> Result<f64> {
    panel
        .get(id)
        .and_then(|s| s.target_at(t))
        .map(Scalar::as_f64)
        .ok_or_else(|| Error::InvalidInput(format!("no observation for series {id:?} at {t}")))
}

fn reseed(cfg: &BootstrapConfig, fold: usize) -> BootstrapConfig {
    BootstrapConfig { seed: derive_seed(cfg.seed, &[fold as u64]), ..cfg.clone() }
}

fn run_fold<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    methods: &[MethodSpec],
    plan: &EvalPlan,
    oracle: Option<&dyn QuantileOracle>,
    fold: usize,
    origin: i64,
) -> Result<Vec<Vec<ScoredPoint>>> {
    let needs_backtest = methods.iter().any(|m| matches!(m.kind, MethodKind::Backtest { .. }));
    let tr = fold_training(panel, forecaster, plan, fold, origin, needs_backtest)?;
    let min_len = forecaster.min_train_len();
    let targets: Vec<ForecastTarget<T>> = ForecastTarget::from_panel(panel, origin, plan.horizon)
        .into_iter()
        .filter(|t| tr.train.get(&t.series_id).is_some_and(|s| s.len() >= min_len))
        .collect();
    methods
        .iter()
        .map(|m| {
            let dfs = match &m.kind {
                MethodKind::Backtest { bootstrap, selector } => {
                    let coll = tr.residuals.as_ref().expect("computed when a backtest method is present");
                    let sel = selector.fit(coll)?;
                    forecast_distribution(tr.model.as_ref(), &tr.train, &targets, &sel, coll, &reseed(bootstrap, fold))?
                }
                MethodKind::Fr { bootstrap } => baseline_fr(forecaster, &tr.train, &targets, &reseed(bootstrap, fold))?,
                MethodKind::Fm { bootstrap, refits } => {
                    baseline_fm(forecaster, &tr.train, &targets, &reseed(bootstrap, fold), *refits)?
                }
                MethodKind::Oracle => {
                    let oracle = oracle.ok_or_else(|| Error::InvalidInput("oracle method needs a quantile oracle".into()))?;
                    let mut out = Vec::new();
                    for t in &targets {
                        for h in 1..=t.horizon() {
                            let quantiles = plan
                                .taus
                                .iter()
                                .map(|&tau| {
                                    oracle.quantile(&t.series_id, origin, h, tau).ok_or_else(|| {
                                        Error::InvalidInput(format!("oracle has no quantile for {:?}", t.series_id))
                                    })
                                })
                                .collect::<Result<Vec<f64>>>()?;
                            out.push(ScoredPoint {
                                fold,
                                origin,
                                series_id: t.series_id.clone(),
                                horizon: h,
                                truth: truth(panel, &t.series_id, origin + h as i64)?,
                                point_forecast: None,
                                bagging_pf: None,
                                quantiles,
                                selector_fallback: false,
                            });
                        }
                    }
                    return Ok(out);
                }
            };
            score_dfs(panel, fold, &dfs, &plan.taus)
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: usize,
    hits: usize,
    loss: f64,
}

impl Acc {
    fn add(&mut self, truth: f64, q: f64, tau: f64) {
        self.n += 1;
        self.hits += usize::from(truth <= q);
        self.loss += pinball(truth, q, tau);
    }

    fn stats(&self, tau: f64, horizon: Option<usize>) -> CellStats {
        let co = self.hits as f64 / self.n.max(1) as f64;
        CellStats { tau, horizon, n: self.n, co, ace: ace(co, tau), pinball: self.loss / self.n.max(1) as f64 }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarize(name: &str, points: &[ScoredPoint], taus: &[f64]) -> Result<MethodReport> {
    let mut pooled = vec![Acc::default(); taus.len()];
    let mut cells: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    for p in points {
        for (k, (&tau, &q)) in taus.iter().zip(&p.quantiles).enumerate() {
            pooled[k].add(p.truth, q, tau);
            cells.entry((p.horizon, k)).or_default().add(p.truth, q, tau);
        }
    }
    let per_tau: Vec<CellStats> = taus.iter().zip(&pooled).map(|(&t, a)| a.stats(t, None)).collect();
    let per_horizon_tau: Vec<CellStats> = cells.iter().map(|(&(h, k), a)| a.stats(taus[k], Some(h))).collect();

    let with_pf: Vec<&ScoredPoint> = points.iter().filter(|p| p.point_forecast.is_some()).collect();
    let (mape_pf, mape_bagging, mape_excluded) = if with_pf.is_empty() {
        (None, None, 0)
    } else {
        let truths: Vec<f64> = with_pf.iter().map(|p| p.truth).collect();
        let pf: Vec<f64> = with_pf.iter().map(|p| p.point_forecast.unwrap_or(f64::NAN)).collect();
        let bag: Vec<f64> = with_pf.iter().map(|p| p.bagging_pf.unwrap_or(f64::NAN)).collect();
        match (mape(&truths, &pf), mape(&truths, &bag)) {
            (Ok(a), Ok(b)) => (Some(a.value), Some(b.value), a.excluded),
            _ => (None, None, truths.len()),
        }
    };
    Ok(MethodReport {
        name: name.to_string(),
        n_points: points.len(),
        mean_ace: mean(per_horizon_tau.iter().map(|c| c.ace)),
        mean_ace_pooled: mean(per_tau.iter().map(|c| c.ace)),
        mean_pinball: mean(per_tau.iter().map(|c| c.pinball)),
        per_tau,
        per_horizon_tau,
        mape_pf,
        mape_bagging,
        mape_excluded,
        selector_fallbacks: points.iter().filter(|p| p.selector_fallback).count(),
    })
}

fn fold_cells(method: &str, fold: usize, origin: i64, points: &[ScoredPoint], taus: &[f64]) -> Vec<FoldCell> {
    let mut cells: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
    for p in points {
        for (k, (&tau, &q)) in taus.iter().zip(&p.quantiles).enumerate() {
            cells.entry((k, p.horizon)).or_default().add(p.truth, q, tau);
        }
    }
    cells
        .into_iter()
        .map(|((k, h), a)| {
            let s = a.stats(taus[k], Some(h));
            FoldCell { fold, origin, method: method.to_string(), tau: s.tau, horizon: h, n: s.n, co: s.co, ace: s.ace, pinball: s.pinball }
        })
        .collect()
}

/// Scored points of every method and fold, in (fold, method) order.
pub fn evaluate_points<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    methods: &[MethodSpec],
    plan: &EvalPlan,
    oracle: Option<&dyn QuantileOracle>,
) -> Result<(Vec<i64>, Vec<Vec<Vec<ScoredPoint>>>)> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("no evaluation methods given".into()));
    }
    let origins = plan.origins(panel, forecaster.min_train_len())?;
    let per_fold = origins
        .par_iter()
        .enumerate()
        .map(|(fold, &origin)| run_fold(panel, forecaster, methods, plan, oracle, fold, origin))
        .collect::<Result<Vec<_>>>()?;
    Ok((origins, per_fold))
}

/// Runs the nested evaluation for every method.
pub fn run_evaluation<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    methods: &[MethodSpec],
    plan: &EvalPlan,
    oracle: Option<&dyn QuantileOracle>,
) -> Result<EvalReport> {
    let started = Instant::now();
    let (origins, per_fold) = evaluate_points(panel, forecaster, methods, plan, oracle)?;
    let mut reports = Vec::with_capacity(methods.len());
    let mut cells = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        let points: Vec<ScoredPoint> = per_fold.iter().flat_map(|f| f[mi].iter().cloned()).collect();
        reports.push(summarize(&m.name, &points, &plan.taus)?);
        for (fold, f) in per_fold.iter().enumerate() {
            cells.extend(fold_cells(&m.name, fold, origins[fold], &f[mi], &plan.taus));
        }
    }
    Ok(EvalReport {
        plan: plan.clone(),
        model: forecaster.describe(),
        n_folds: origins.len(),
        origins,
        methods: reports,
        fold_cells: cells,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}
