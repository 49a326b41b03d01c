//! Classic bootstrap baselines built on in-sample fitted residuals.

use rand::Rng;
use rayon::prelude::*;

use super::forecast::{forecast_distribution, history_of, point_forecasts};
use super::{BootstrapConfig, DistributionForecast, ForecastTarget, Formula};
use crate::backtest::{Provenance, ResidualCollection, ResidualRecord};
use crate::dataset::Panel;
use crate::error::{Error, Result};
use crate::forecasters::{FittedForecaster, ForecastKind, ForecastRequest, PointForecaster};
use crate::rng::stream;
use crate::scalar::{sort_ascending, Scalar};
use crate::selector::SelectorModel;

/// Default number of refits for the FM baseline.
pub const DEFAULT_FM_REFITS: usize = 200;

const FM_TAG: u64 = 0x666d;

/// In-sample residuals `Y − fitted` of `fitted` on `panel`, as a residual
/// collection with horizon 1 and split point `t − 1`.
pub fn fitted_residual_collection<T: Scalar>(
    fitted: &dyn FittedForecaster<T>,
    panel: &Panel<T>,
) -> Result<ResidualCollection<T>> {
    let mut records = Vec::new();
    for s in panel.series() {
        for ((t, y, _), f) in s.iter().zip(fitted.fitted_values(s)?) {
            if let Some(f) = f {
                records.push(ResidualRecord::new(s.id(), t - 1, t, f, y)?);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::InsufficientData("model produced no in-sample fitted values".into()));
    }
    Ok(ResidualCollection::new(records, Provenance::manual("in-sample fitted residuals")))
}

fn fit_eligible<T: Scalar>(forecaster: &dyn PointForecaster<T>, panel: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
    let min_len = forecaster.min_train_len();
    forecaster.fit(&panel.filter(|s| s.len() >= min_len))
}

/// Fitted-residual (FR) bootstrap: one fit on the full history, additive
/// resampling of its in-sample residuals with no selection.
pub fn baseline_fr<T: Scalar>(
    forecaster: &dyn PointForecaster<T>,
    panel: &Panel<T>,
    targets: &[ForecastTarget<T>],
    cfg: &BootstrapConfig,
) -> Result<Vec<DistributionForecast<T>>> {
    let fitted = fit_eligible(forecaster, panel)?;
    let coll = fitted_residual_collection(fitted.as_ref(), panel)?;
    let cfg = BootstrapConfig { formula: Formula::Additive, ..cfg.clone() };
    forecast_distribution(fitted.as_ref(), panel, targets, &SelectorModel::identity(), &coll, &cfg)
}

/// Fitted-model (FM) bootstrap with `m` refits.
///
/// Each refit trains on a panel whose targets are the original fitted values
/// plus resampled fitted residuals (points without a fitted value keep their
/// observation). Its forecast plus one more resampled residual is one
/// sample. Failed refits are dropped and counted.
pub fn baseline_fm<T: Scalar>(
    forecaster: &dyn PointForecaster<T>,
    panel: &Panel<T>,
    targets: &[ForecastTarget<T>],
    cfg: &BootstrapConfig,
    m: usize,
) -> Result<Vec<DistributionForecast<T>>> {
    if forecaster.kind() != ForecastKind::Direct {
        return Err(Error::InvalidInput("the FM baseline needs a direct PF model".into()));
    }
    if m == 0 {
        return Err(Error::InvalidInput("FM refit count must be >= 1".into()));
    }
    let min_len = forecaster.min_train_len();
    let train = panel.filter(|s| s.len() >= min_len);
    let fitted = forecaster.fit(&train)?;
    let fitted_values = train.series().iter().map(|s| fitted.fitted_values(s)).collect::<Result<Vec<_>>>()?;
    let pool: Vec<T> = train
        .series()
        .iter()
        .zip(&fitted_values)
        .flat_map(|(s, f)| s.targets().iter().zip(f).filter_map(|(&y, f)| f.map(|f| y - f)))
        .collect();
    if pool.is_empty() {
        return Err(Error::InsufficientData("model produced no in-sample fitted values".into()));
    }
    let base = point_forecasts(fitted.as_ref(), panel, targets)?;

    let refit = |r: usize| -> Result<Vec<Vec<T>>> {
        let mut rng = stream(cfg.seed, &[FM_TAG, r as u64]);
        let series = train
            .series()
            .iter()
            .zip(&fitted_values)
            .map(|(s, f)| {
                let y = s
                    .targets()
                    .iter()
                    .zip(f)
                    .map(|(&y, f)| match f {
                        Some(f) => *f + pool[rng.random_range(0..pool.len())],
                        None => y,
                    })
                    .collect();
                s.with_targets(y)
            })
            .collect::<Result<Vec<_>>>()?;
        let boot = Panel::new(series, train.covariate_names().to_vec())?;
        let model = forecaster.fit(&boot)?;
        targets
            .iter()
            .map(|t| {
                if t.horizon() == 0 {
                    return Ok(Vec::new());
                }
                let s = history_of(panel, t)?;
                let preds = model.predict(&ForecastRequest::from_series(s, &t.future_covariates)?)?;
                Ok(preds.into_iter().map(|p| p + pool[rng.random_range(0..pool.len())]).collect())
            })
            .collect()
    };
    let runs: Vec<Result<Vec<Vec<T>>>> = (0..m).into_par_iter().map(refit).collect();
    let dropped = runs.iter().filter(|r| r.is_err()).count();
    if dropped == m {
        let first = runs.into_iter().find_map(|r| r.err()).expect("all failed");
        return Err(Error::InsufficientData(format!("all {m} FM refits failed; first error: {first}")));
    }
    let ok: Vec<Vec<Vec<T>>> = runs.into_iter().filter_map(|r| r.ok()).collect();

    let mut out = Vec::new();
    for (i, target) in targets.iter().enumerate() {
        let origin = history_of(panel, target)?.end();
        for h in 1..=target.horizon() {
            let mut samples: Vec<T> = ok.iter().map(|run| run[i][h - 1]).collect();
            sort_ascending(&mut samples);
            out.push(DistributionForecast {
                series_id: target.series_id.clone(),
                origin,
                horizon: h,
                target_time: origin + h as i64,
                point_forecast: base[i][h - 1],
                samples,
                selector_fallback: false,
                excluded_ratio_count: 0,
                degenerate_multiplicative: false,
                dropped_samples: dropped,
            });
        }
    }
    Ok(out)
}
