//! Move-forward backtester that harvests predictive residuals.
//!
//! For each split point `j = a, a + l, a + 2l, … < max_i(d_i)` the forecaster is
//! fitted on every observation with `t <= j` and asked to forecast the
//! following `H` steps of each series. Each forecast error becomes a
//! [`ResidualRecord`] carrying the meta information later used by the
//! residual selector.

mod io;
mod perturb;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_at, Panel};
use crate::error::{Error, Result};
use crate::forecasters::{ForecastRequest, PointForecaster};
use crate::rng::stream;
use crate::scalar::Scalar;

pub use io::{load_collection, read_residuals_csv, save_collection, write_residuals_csv};
pub use perturb::{perturb_covariates, CovariatePerturbation, HistoricEstimates};

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestPlan<T> {
    start: i64,
    step: usize,
    max_horizon: usize,
    perturbation: CovariatePerturbation<T>,
    meta_covariates: Vec<String>,
}

impl<T: Scalar> BacktestPlan<T> {
    pub fn new(start: i64, step: usize, max_horizon: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidInput("backtest step must be >= 1".into()));
        }
        if max_horizon == 0 {
            return Err(Error::InvalidInput("backtest max_horizon must be >= 1".into()));
        }
        Ok(Self { start, step, max_horizon, perturbation: CovariatePerturbation::None, meta_covariates: Vec::new() })
    }

    pub fn with_perturbation(mut self, perturbation: CovariatePerturbation<T>) -> Self {
        self.perturbation = perturbation;
        self
    }

    /// Covariates copied into each record's `extra` meta map (the value used
    /// for forecasting, i.e. after perturbation).
    pub fn with_meta_covariates(mut self, names: Vec<String>) -> Self {
        self.meta_covariates = names;
        self
    }

    pub fn start(&self) -> i64 {
        self.start
    }
    pub fn step(&self) -> usize {
        self.step
    }
    pub fn max_horizon(&self) -> usize {
        self.max_horizon
    }
    pub fn perturbation(&self) -> &CovariatePerturbation<T> {
        &self.perturbation
    }
    pub fn meta_covariates(&self) -> &[String] {
        &self.meta_covariates
    }

    /// Split points `a, a + l, …` strictly below the panel's last time index.
    pub fn split_points(&self, panel: &Panel<T>) -> Result<Vec<i64>> {
        let (Some(min_s), Some(max_d)) = (panel.min_start(), panel.max_end()) else {
            return Err(Error::EmptyPlan("panel is empty".into()));
        };
        if self.start < min_s {
            return Err(Error::InvalidInput(format!(
                "backtest start {} precedes the earliest observation {min_s}; the first training split would be empty",
                self.start
            )));
        }
        if self.start > max_d - 1 {
            return Err(Error::EmptyPlan(format!(
                "start {} leaves no test observations (last time index is {max_d})",
                self.start
            )));
        }
        Ok((self.start..max_d).step_by(self.step).collect())
    }

    pub fn validate(&self, panel: &Panel<T>) -> Result<()> {
        self.perturbation.validate(panel.covariate_names())?;
        if let Some(n) = self.meta_covariates.iter().find(|n| panel.covariate_index(n).is_none()) {
            return Err(Error::UnknownFeature(n.clone()));
        }
        self.split_points(panel).map(|_| ())
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            start: self.start,
            step: self.step,
            max_horizon: self.max_horizon,
            perturbation: self.perturbation.describe(),
            meta_covariates: self.meta_covariates.clone(),
        }
    }
}

/// Serializable description of a [`BacktestPlan`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub start: i64,
    pub step: usize,
    pub max_horizon: usize,
    pub perturbation: String,
    pub meta_covariates: Vec<String>,
}

/// Meta information attached to a predictive residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetaVector<T> {
    pub series_id: String,
    pub split_point: i64,
    pub target_time: i64,
    pub horizon: usize,
    /// Backtest forecast for `target_time` made at `split_point`.
    pub forecast: T,
    pub observed: T,
    pub extra: BTreeMap<String, T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResidualRecord<T> {
    /// `observed − forecast`.
    pub eps: T,
    pub meta: MetaVector<T>,
}

impl<T: Scalar> ResidualRecord<T> {
    /// Builds a record from a forecast/observation pair.
    pub fn new(series_id: impl Into<String>, split_point: i64, target_time: i64, forecast: T, observed: T) -> Result<Self> {
        let horizon = target_time - split_point;
        if horizon < 1 {
            return Err(Error::InvalidInput(format!("target time {target_time} is not after split point {split_point}")));
        }
        let eps = observed - forecast;
        if !eps.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite residual at split {split_point}, time {target_time}")));
        }
        Ok(Self {
            eps,
            meta: MetaVector {
                series_id: series_id.into(),
                split_point,
                target_time,
                horizon: horizon as usize,
                forecast,
                observed,
                extra: BTreeMap::new(),
            },
        })
    }

    pub fn with_extra(mut self, name: impl Into<String>, value: T) -> Self {
        self.meta.extra.insert(name.into(), value);
        self
    }
}

/// Where a residual collection came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub plan: PlanSummary,
    pub model: String,
    pub data_fingerprint: String,
    pub seed: u64,
    pub min_train_len: usize,
    pub split_points: Vec<i64>,
    pub warnings: Vec<String>,
}

impl Provenance {
    /// Provenance for collections assembled by hand.
    pub fn manual(description: impl Into<String>) -> Self {
        Self {
            plan: PlanSummary {
                start: 0,
                step: 1,
                max_horizon: 0,
                perturbation: "none".into(),
                meta_covariates: Vec::new(),
            },
            model: description.into(),
            data_fingerprint: String::new(),
            seed: 0,
            min_train_len: 0,
            split_points: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn same_origin(&self, other: &Self) -> bool {
        let plan_eq = |a: &PlanSummary, b: &PlanSummary| {
            a.step == b.step
                && a.max_horizon == b.max_horizon
                && a.perturbation == b.perturbation
                && a.meta_covariates == b.meta_covariates
        };
        plan_eq(&self.plan, &other.plan)
            && self.model == other.model
            && self.data_fingerprint == other.data_fingerprint
            && self.seed == other.seed
            && self.min_train_len == other.min_train_len
    }
}

/// Immutable set of predictive residuals in canonical `(j, series_id, t)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualCollection<T> {
    records: Vec<ResidualRecord<T>>,
    provenance: Provenance,
    max_horizon: usize,
}

fn canonical_sort<T>(records: &mut [ResidualRecord<T>]) {
    records.sort_by(|a, b| {
        (a.meta.split_point, &a.meta.series_id, a.meta.target_time).cmp(&(
            b.meta.split_point,
            &b.meta.series_id,
            b.meta.target_time,
        ))
    });
}

impl<T: Scalar> ResidualCollection<T> {
    pub fn new(mut records: Vec<ResidualRecord<T>>, provenance: Provenance) -> Self {
        canonical_sort(&mut records);
        let max_horizon = records.iter().map(|r| r.meta.horizon).max().unwrap_or(0);
        Self { records, provenance, max_horizon }
    }

    /// Largest horizon among the records (0 when empty).
    pub fn max_horizon(&self) -> usize {
        self.max_horizon
    }

    pub fn records(&self) -> &[ResidualRecord<T>] {
        &self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn eps(&self) -> Vec<T> {
        self.records.iter().map(|r| r.eps).collect()
    }

    /// Names present in the records' `extra` maps.
    pub fn extra_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.records.iter().flat_map(|r| r.meta.extra.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }
}

struct SplitOutcome<T> {
    records: Vec<ResidualRecord<T>>,
    warnings: Vec<String>,
    failed: bool,
}

fn run_split<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    plan: &BacktestPlan<T>,
    seed: u64,
    j: i64,
) -> SplitOutcome<T> {
    let mut warnings = Vec::new();
    let fail = |msg: String| SplitOutcome { records: Vec::new(), warnings: vec![msg], failed: true };

    let (train, _) = split_at(panel, j);
    let min_len = forecaster.min_train_len();
    let eligible = train.filter(|s| s.len() >= min_len);
    let skipped = train.len() - eligible.len();
    if skipped > 0 {
        warnings.push(format!("split {j}: skipped {skipped} series shorter than {min_len} observations"));
    }
    if eligible.is_empty() {
        return fail(format!("split {j}: no series with at least {min_len} training observations"));
    }
    let fitted = match forecaster.fit(&eligible) {
        Ok(f) => f,
        Err(e) => return fail(format!("split {j}: fit failed: {e}")),
    };

    let names = panel.covariate_names();
    let meta_idx: Vec<(String, usize)> = plan
        .meta_covariates
        .iter()
        .filter_map(|n| panel.covariate_index(n).map(|i| (n.clone(), i)))
        .collect();
    let mut rng = stream(seed, &[j as u64]);
    let mut records = Vec::new();
    for hist in eligible.series() {
        let full = panel.get(hist.id()).expect("training series come from the panel");
        if full.end() <= j {
            continue;
        }
        let k = plan.max_horizon.min((full.end() - j) as usize);
        let mut future = Vec::with_capacity(k);
        for t in (j + 1)..=(j + k as i64) {
            let x = full.covariates_at(t).expect("within series range");
            match perturb_covariates(x, &plan.perturbation, names, full.id(), t, &mut rng) {
                Ok(v) => future.push(v),
                Err(e) => return fail(format!("split {j}: {e}")),
            }
        }
        let preds = ForecastRequest::new(hist.id(), j, hist.targets(), hist.covariates(), &future)
            .and_then(|req| fitted.predict(&req));
        let preds = match preds {
            Ok(p) => p,
            Err(e) => {
                warnings.push(format!("split {j}: series {:?} forecast failed: {e}", hist.id()));
                continue;
            }
        };
        for (h, (&forecast, x)) in preds.iter().zip(&future).enumerate() {
            let t = j + h as i64 + 1;
            let observed = full.target_at(t).expect("within series range");
            match ResidualRecord::new(hist.id(), j, t, forecast, observed) {
                Ok(mut rec) => {
                    for (name, i) in &meta_idx {
                        rec.meta.extra.insert(name.clone(), x[*i]);
                    }
                    records.push(rec);
                }
                Err(e) => warnings.push(format!("split {j}: series {:?}: {e}", hist.id())),
            }
        }
    }
    SplitOutcome { records, warnings, failed: false }
}

/// Runs the backtest over every split point of `plan`.
///
/// Splits run in parallel on the current rayon pool; the result is identical
/// to a sequential run because each split draws from its own RNG stream and
/// records are merged in canonical order.
pub fn run_backtest<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    plan: &BacktestPlan<T>,
    seed: u64,
) -> Result<ResidualCollection<T>> {
    plan.validate(panel)?;
    let splits = plan.split_points(panel)?;
    run_backtest_on(panel, forecaster, plan, seed, &splits)
}

/// Runs the backtest over an explicit subset of split points.
pub fn run_backtest_on<T: Scalar>(
    panel: &Panel<T>,
    forecaster: &dyn PointForecaster<T>,
    plan: &BacktestPlan<T>,
    seed: u64,
    splits: &[i64],
) -> Result<ResidualCollection<T>> {
    plan.perturbation.validate(panel.covariate_names())?;
    if splits.is_empty() {
        return Err(Error::EmptyPlan("no split points requested".into()));
    }
    let outcomes: Vec<SplitOutcome<T>> =
        splits.par_iter().map(|&j| run_split(panel, forecaster, plan, seed, j)).collect();
    if outcomes.iter().all(|o| o.failed) {
        let first = outcomes.iter().flat_map(|o| o.warnings.first()).next().cloned().unwrap_or_default();
        return Err(Error::AllSplitsFailed(first));
    }
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for o in outcomes {
        records.extend(o.records);
        warnings.extend(o.warnings);
    }
    let provenance = Provenance {
        plan: plan.summary(),
        model: forecaster.describe(),
        data_fingerprint: panel.fingerprint(),
        seed,
        min_train_len: forecaster.min_train_len(),
        split_points: splits.to_vec(),
        warnings,
    };
    Ok(ResidualCollection::new(records, provenance))
}

/// Concatenates collections produced by the same configuration over
/// different split ranges.
pub fn merge_collections<T: Scalar>(collections: Vec<ResidualCollection<T>>) -> Result<ResidualCollection<T>> {
    let mut iter = collections.into_iter();
    let first = iter.next().ok_or(Error::Empty("no collections to merge"))?;
    let mut provenance = first.provenance;
    let mut records = first.records;
    for c in iter {
        if !provenance.same_origin(&c.provenance) {
            return Err(Error::ProvenanceMismatch(format!(
                "cannot merge residuals from {:?} with {:?}",
                provenance.model, c.provenance.model
            )));
        }
        provenance.split_points.extend(c.provenance.split_points);
        provenance.warnings.extend(c.provenance.warnings);
        provenance.plan.start = provenance.plan.start.min(c.provenance.plan.start);
        records.extend(c.records);
    }
    provenance.split_points.sort_unstable();
    provenance.split_points.dedup();
    Ok(ResidualCollection::new(records, provenance))
}
