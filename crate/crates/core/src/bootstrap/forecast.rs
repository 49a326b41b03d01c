//! Direct and iterative bootstrap forecasting.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rayon::prelude::*;

use super::{build_ratio_set, BootstrapConfig, DistributionForecast, Formula};
use crate::backtest::ResidualCollection;
use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::forecasters::{FittedForecaster, ForecastKind, ForecastRequest};
use crate::rng::{hash_str, stream};
use crate::scalar::{sort_ascending, Scalar};
use crate::selector::{FutureMeta, SelectorModel};

const TRAJECTORY_TAG: u64 = 0x7472616a;

/// Future inputs for one series: covariate rows for times `origin + 1 ..`.
/// The number of rows is the forecast horizon `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTarget<T> {
    pub series_id: String,
    pub future_covariates: Vec<Vec<T>>,
}

impl<T: Scalar> ForecastTarget<T> {
    pub fn new(series_id: impl Into<String>, future_covariates: Vec<Vec<T>>) -> Self {
        Self { series_id: series_id.into(), future_covariates }
    }

    /// Target for a panel without covariates.
    pub fn univariate(series_id: impl Into<String>, k: usize) -> Self {
        Self::new(series_id, vec![Vec::new(); k])
    }

    pub fn horizon(&self) -> usize {
        self.future_covariates.len()
    }

    /// Targets for every series of `full` that has data after `origin`,
    /// taking up to `k` future covariate rows from it.
    pub fn from_panel(full: &Panel<T>, origin: i64, k: usize) -> Vec<Self> {
        full.series()
            .iter()
            .filter(|s| s.end() > origin && s.start() <= origin)
            .map(|s| {
                let steps = k.min((s.end() - origin) as usize);
                let rows = (1..=steps as i64)
                    .map(|h| s.covariates_at(origin + h).expect("within range").to_vec())
                    .collect();
                Self::new(s.id(), rows)
            })
            .collect()
    }
}

/// Selected values ready for resampling.
struct Prepared<T> {
    values: Vec<T>,
    fallback: bool,
    excluded: usize,
}

/// Shared selection state. Selections depend only on the selector key, so
/// they are computed once per key.
struct Sampler<'a, T> {
    coll: &'a ResidualCollection<T>,
    selector: &'a SelectorModel<T>,
    cfg: &'a BootstrapConfig,
    delta: T,
    meta_columns: Vec<(String, usize)>,
    cache: RwLock<HashMap<Vec<usize>, Arc<Prepared<T>>>>,
}

impl<'a, T: Scalar> Sampler<'a, T> {
    fn new(
        coll: &'a ResidualCollection<T>,
        selector: &'a SelectorModel<T>,
        cfg: &'a BootstrapConfig,
        history: &Panel<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        if coll.is_empty() {
            return Err(Error::Empty("residual collection"));
        }
        let meta_columns = coll
            .provenance()
            .plan
            .meta_covariates
            .iter()
            .filter_map(|n| history.covariate_index(n).map(|i| (n.clone(), i)))
            .collect();
        Ok(Self { coll, selector, cfg, delta: cfg.resolve_delta(coll), meta_columns, cache: RwLock::new(HashMap::new()) })
    }

    fn meta(&self, series: &str, origin: i64, horizon: usize, pf: T, x: &[T]) -> FutureMeta<T> {
        let mut m = FutureMeta::new(series, origin, horizon, pf);
        for (name, i) in &self.meta_columns {
            if let Some(&v) = x.get(*i) {
                m.extra.insert(name.clone(), v);
            }
        }
        m
    }

    fn prepared(&self, future: &FutureMeta<T>) -> Result<Arc<Prepared<T>>> {
        let key = self.selector.selection_key(self.coll, future)?;
        if let Some(p) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let sel = self.selector.select(self.coll, future)?;
        let prepared = match self.cfg.formula {
            Formula::Additive => Prepared {
                values: sel.indices.iter().map(|&i| self.coll.records()[i].eps).collect(),
                fallback: sel.fallback,
                excluded: 0,
            },
            Formula::Multiplicative => {
                let r = build_ratio_set(self.coll, &sel.indices, self.cfg.ratio_denominator, self.delta)?;
                Prepared { values: r.ratios, fallback: sel.fallback, excluded: r.excluded }
            }
        };
        if prepared.values.is_empty() {
            return Err(Error::Empty("selected residuals"));
        }
        let prepared = Arc::new(prepared);
        self.cache.write().expect("cache lock").insert(key, prepared.clone());
        Ok(prepared)
    }

    fn apply(&self, pf: T, v: T) -> T {
        match self.cfg.formula {
            Formula::Additive => pf + v,
            Formula::Multiplicative => pf * (T::one() + v),
        }
    }

    fn degenerate(&self, pf: T) -> bool {
        self.cfg.formula == Formula::Multiplicative && pf == T::zero()
    }
}

pub(super) fn history_of<'p, T: Scalar>(history: &'p Panel<T>, target: &ForecastTarget<T>) -> Result<&'p Series<T>> {
    let s = history
        .get(&target.series_id)
        .ok_or_else(|| Error::InvalidInput(format!("no history for series {:?}", target.series_id)))?;
    if let Some(row) = target.future_covariates.iter().find(|r| r.len() != s.covariate_width()) {
        return Err(Error::DimensionMismatch { expected: s.covariate_width(), got: row.len() });
    }
    Ok(s)
}

pub(super) fn point_forecasts<T: Scalar>(
    fitted: &dyn FittedForecaster<T>,
    history: &Panel<T>,
    targets: &[ForecastTarget<T>],
) -> Result<Vec<Vec<T>>> {
    targets
        .par_iter()
        .map(|t| {
            if t.horizon() == 0 {
                return Ok(Vec::new());
            }
            let s = history_of(history, t)?;
            let preds = fitted.predict(&ForecastRequest::from_series(s, &t.future_covariates)?)?;
            if preds.len() != t.horizon() {
                return Err(Error::DimensionMismatch { expected: t.horizon(), got: preds.len() });
            }
            Ok(preds)
        })
        .collect()
}

/// Distribution forecasts for a direct PF model.
///
/// For every target series and horizon `h`, the PF is computed, the selector
/// picks residuals using the future meta (horizon `h`, forecast PF), and `B`
/// samples are drawn with the configured formula. Each (series, time) pair
/// has its own RNG stream.
pub fn forecast_direct<T: Scalar>(
    fitted: &dyn FittedForecaster<T>,
    history: &Panel<T>,
    targets: &[ForecastTarget<T>],
    selector: &SelectorModel<T>,
    coll: &ResidualCollection<T>,
    cfg: &BootstrapConfig,
) -> Result<Vec<DistributionForecast<T>>> {
    if fitted.kind() != ForecastKind::Direct {
        return Err(Error::InvalidInput("forecast_direct needs a direct PF model".into()));
    }
    let sampler = Sampler::new(coll, selector, cfg, history)?;
    let preds = point_forecasts(fitted, history, targets)?;
    let units: Vec<(usize, usize)> =
        targets.iter().enumerate().flat_map(|(i, t)| (1..=t.horizon()).map(move |h| (i, h))).collect();
    units
        .par_iter()
        .map(|&(i, h)| {
            let target = &targets[i];
            let origin = history_of(history, target)?.end();
            let pf = preds[i][h - 1];
            let future = sampler.meta(&target.series_id, origin, h, pf, &target.future_covariates[h - 1]);
            let prep = sampler.prepared(&future)?;
            let t = origin + h as i64;
            let mut rng = stream(cfg.seed, &[hash_str(&target.series_id), t as u64]);
            let n = prep.values.len();
            let mut samples: Vec<T> =
                (0..cfg.b).map(|_| sampler.apply(pf, prep.values[rng.random_range(0..n)])).collect();
            sort_ascending(&mut samples);
            Ok(DistributionForecast {
                series_id: target.series_id.clone(),
                origin,
                horizon: h,
                target_time: t,
                point_forecast: pf,
                samples,
                selector_fallback: prep.fallback,
                excluded_ratio_count: prep.excluded,
                degenerate_multiplicative: sampler.degenerate(pf),
                dropped_samples: 0,
            })
        })
        .collect()
}

struct StepDraw<T> {
    value: T,
    fallback: bool,
    excluded: usize,
}

fn trajectory<T: Scalar>(
    fitted: &dyn FittedForecaster<T>,
    sampler: &Sampler<'_, T>,
    series: &Series<T>,
    target: &ForecastTarget<T>,
    b: usize,
) -> Result<Vec<StepDraw<T>>> {
    let origin = series.end();
    let mut rng = stream(sampler.cfg.seed, &[hash_str(series.id()), origin as u64, b as u64, TRAJECTORY_TAG]);
    let mut hist = series.targets().to_vec();
    let mut hcov = series.covariates().to_vec();
    let mut out = Vec::with_capacity(target.horizon());
    for (s, x) in target.future_covariates.iter().enumerate() {
        let step = std::slice::from_ref(x);
        let req = ForecastRequest::new(series.id(), origin + s as i64, &hist, &hcov, step)?;
        let pf = *fitted.predict(&req)?.first().ok_or(Error::Empty("model prediction"))?;
        let future = sampler.meta(series.id(), origin, s + 1, pf, x);
        let prep = sampler.prepared(&future)?;
        let v = sampler.apply(pf, prep.values[rng.random_range(0..prep.values.len())]);
        out.push(StepDraw { value: v, fallback: prep.fallback, excluded: prep.excluded });
        hist.push(v);
        hcov.push(x.clone());
    }
    Ok(out)
}

/// Distribution forecasts for an iterative PF model.
///
/// `B` trajectories are simulated per series: at each step the model
/// forecasts from the trajectory's own history, residuals are selected with
/// that step's meta (horizon = step, forecast = current PF), and one drawn
/// value extends the trajectory. Every intermediate horizon is returned.
/// Trajectories have their own RNG streams.
pub fn forecast_iterative<T: Scalar>(
    fitted: &dyn FittedForecaster<T>,
    history: &Panel<T>,
    targets: &[ForecastTarget<T>],
    selector: &SelectorModel<T>,
    coll: &ResidualCollection<T>,
    cfg: &BootstrapConfig,
) -> Result<Vec<DistributionForecast<T>>> {
    if fitted.kind() != ForecastKind::Iterative {
        return Err(Error::InvalidInput("forecast_iterative needs an iterative PF model".into()));
    }
    let sampler = Sampler::new(coll, selector, cfg, history)?;
    let preds = point_forecasts(fitted, history, targets)?;
    let mut out = Vec::new();
    for (target, pfs) in targets.iter().zip(&preds) {
        if target.horizon() == 0 {
            continue;
        }
        let series = history_of(history, target)?;
        let paths = (0..cfg.b)
            .into_par_iter()
            .map(|b| trajectory(fitted, &sampler, series, target, b))
            .collect::<Result<Vec<_>>>()?;
        for (s, &pf) in pfs.iter().enumerate() {
            let mut samples: Vec<T> = paths.iter().map(|p| p[s].value).collect();
            sort_ascending(&mut samples);
            let origin = series.end();
            out.push(DistributionForecast {
                series_id: target.series_id.clone(),
                origin,
                horizon: s + 1,
                target_time: origin + s as i64 + 1,
                point_forecast: pf,
                samples,
                selector_fallback: paths.iter().any(|p| p[s].fallback),
                excluded_ratio_count: paths.iter().map(|p| p[s].excluded).max().unwrap_or(0),
                degenerate_multiplicative: sampler.degenerate(pf),
                dropped_samples: 0,
            });
        }
    }
    Ok(out)
}

/// Dispatches to [`forecast_direct`] or [`forecast_iterative`] by model kind.
pub fn forecast_distribution<T: Scalar>(
    fitted: &dyn FittedForecaster<T>,
    history: &Panel<T>,
    targets: &[ForecastTarget<T>],
    selector: &SelectorModel<T>,
    coll: &ResidualCollection<T>,
    cfg: &BootstrapConfig,
) -> Result<Vec<DistributionForecast<T>>> {
    match fitted.kind() {
        ForecastKind::Direct => forecast_direct(fitted, history, targets, selector, coll, cfg),
        ForecastKind::Iterative => forecast_iterative(fitted, history, targets, selector, coll, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{Provenance, ResidualRecord};
    use crate::forecasters::{ArModel, SeasonalNaive};
    use std::collections::BTreeSet;

    fn history() -> Panel<f64> {
        let a = Series::univariate("a", 0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Series::univariate("b", 0, vec![10.0, 10.0, 10.0, 10.0]).unwrap();
        Panel::new(vec![a, b], Vec::new()).unwrap()
    }

    fn coll(rows: &[(usize, f64)]) -> ResidualCollection<f64> {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(k, &(h, eps))| ResidualRecord::new("a", k as i64, (k + h) as i64, 5.0, 5.0 + eps).unwrap())
            .collect();
        ResidualCollection::new(recs, Provenance::manual("t"))
    }

    fn naive() -> Box<dyn FittedForecaster<f64>> {
        Box::new(SeasonalNaive::new(1).unwrap())
    }

    #[test]
    fn zero_residuals_collapse_to_pf() {
        let targets = vec![ForecastTarget::univariate("a", 3)];
        let dfs = forecast_direct(
            naive().as_ref(),
            &history(),
            &targets,
            &SelectorModel::identity(),
            &coll(&[(1, 0.0)]),
            &BootstrapConfig::additive(50, 1),
        )
        .unwrap();
        assert_eq!(dfs.len(), 3);
        assert!(dfs.iter().all(|d| d.samples.iter().all(|&v| v == 4.0) && d.point_forecast == 4.0));
        assert_eq!(dfs[2].target_time, 6);
    }

    #[test]
    fn horizon_rule_draws_from_different_subsets() {
        let c = coll(&[(1, -1.0), (1, -2.0), (2, 7.0), (2, 8.0)]);
        let sel = SelectorModel::rules(vec!["horizon <= 1".parse().unwrap()]).with_n_min(1);
        let dfs = forecast_direct(
            naive().as_ref(),
            &history(),
            &[ForecastTarget::univariate("a", 2)],
            &sel,
            &c,
            &BootstrapConfig::additive(200, 3),
        )
        .unwrap();
        let support = |d: &DistributionForecast<f64>| d.samples.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>();
        assert_eq!(support(&dfs[0]), [3.0f64, 2.0].iter().map(|v| v.to_bits()).collect());
        assert_eq!(support(&dfs[1]), [11.0f64, 12.0].iter().map(|v| v.to_bits()).collect());
    }

    #[test]
    fn single_sample_and_determinism() {
        let c = coll(&[(1, -1.0), (1, 0.5), (2, 3.0)]);
        let run = |b| {
            forecast_direct(
                naive().as_ref(),
                &history(),
                &[ForecastTarget::univariate("a", 2), ForecastTarget::univariate("b", 2)],
                &SelectorModel::identity(),
                &c,
                &BootstrapConfig::additive(b, 77),
            )
            .unwrap()
        };
        assert!(run(1).iter().all(|d| d.samples.len() == 1));
        let a = run(300);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        assert_eq!(a, pool.install(|| run(300)));
    }

    #[test]
    fn rejects_wrong_kind_and_unknown_series() {
        let ar: Box<dyn FittedForecaster<f64>> = Box::new(ArModel { coefficients: vec![1.0], intercept: 0.0 });
        let c = coll(&[(1, 0.0)]);
        let cfg = BootstrapConfig::additive(5, 0);
        let t = [ForecastTarget::univariate("a", 1)];
        assert!(forecast_direct(ar.as_ref(), &history(), &t, &SelectorModel::identity(), &c, &cfg).is_err());
        let t = [ForecastTarget::univariate("zzz", 1)];
        assert!(forecast_direct(naive().as_ref(), &history(), &t, &SelectorModel::identity(), &c, &cfg).is_err());
    }

    #[test]
    fn random_walk_with_zero_residuals_is_deterministic() {
        let ar: Box<dyn FittedForecaster<f64>> = Box::new(ArModel { coefficients: vec![1.0], intercept: 0.0 });
        let dfs = forecast_iterative(
            ar.as_ref(),
            &history(),
            &[ForecastTarget::univariate("a", 3)],
            &SelectorModel::identity(),
            &coll(&[(1, 0.0)]),
            &BootstrapConfig::additive(40, 5),
        )
        .unwrap();
        assert_eq!(dfs.len(), 3);
        assert!(dfs.iter().all(|d| d.samples.iter().all(|&v| v == 4.0)));
    }

    #[test]
    fn two_step_tree_support() {
        // AR(1) with coefficient 0.5: y1 = 2 ± 1, y2 = 0.5·y1 ± 1.
        let ar: Box<dyn FittedForecaster<f64>> = Box::new(ArModel { coefficients: vec![0.5], intercept: 0.0 });
        let dfs = forecast_iterative(
            ar.as_ref(),
            &history(),
            &[ForecastTarget::univariate("a", 2)],
            &SelectorModel::identity(),
            &coll(&[(1, -1.0), (1, 1.0)]),
            &BootstrapConfig::additive(400, 8),
        )
        .unwrap();
        let mut expect = BTreeSet::new();
        for e1 in [-1.0, 1.0] {
            for e2 in [-1.0, 1.0] {
                expect.insert((((2.0 + e1) * 0.5 + e2) * 1e9f64).round() as i64);
            }
        }
        let got: BTreeSet<i64> = dfs[1].samples.iter().map(|v| (v * 1e9).round() as i64).collect();
        assert_eq!(got, expect);
        assert_eq!(dfs[1].point_forecast, 1.0);
    }

    #[test]
    fn iterative_is_deterministic_across_pools() {
        let ar: Box<dyn FittedForecaster<f64>> = Box::new(ArModel { coefficients: vec![0.9], intercept: 0.5 });
        let c = coll(&[(1, -1.0), (1, 0.3), (2, 2.0), (3, -0.7)]);
        let sel = SelectorModel::rules(vec!["horizon <= 1".parse().unwrap()]).with_n_min(1);
        let run = || {
            forecast_iterative(
                ar.as_ref(),
                &history(),
                &[ForecastTarget::univariate("a", 4), ForecastTarget::univariate("b", 2)],
                &sel,
                &c,
                &BootstrapConfig::multiplicative(100, 12),
            )
            .unwrap()
        };
        let a = run();
        for n in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            assert_eq!(a, pool.install(run));
        }
    }
}
