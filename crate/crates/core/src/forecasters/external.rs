use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{FittedForecaster, ForecastKind, ForecastRequest, ModelParams, PointForecaster};
use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forecasts produced by an external model, keyed by `(series, origin, time)`.
///
/// File format: CSV with columns `series_id, origin, time, forecast`, where
/// `origin` is the last observed grid index the forecast conditions on.
#[derive(Debug)]
pub struct ExternalPredictions<T> {
    path: PathBuf,
    table: HashMap<(String, i64, i64), T>,
}

impl<T: Scalar> ExternalPredictions<T> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("external predictions missing column {name:?}")))
        };
        let (ci, co, ct, cf) = (col("series_id")?, col("origin")?, col("time")?, col("forecast")?);
        let mut table = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            let int = |i: usize| {
                rec[i].parse::<i64>().map_err(|_| Error::Parse { row, message: format!("{:?} is not an integer", &rec[i]) })
            };
            let value: T = rec[cf]
                .parse()
                .map_err(|_| Error::Parse { row, message: format!("{:?} is not a number", &rec[cf]) })?;
            table.insert((rec[ci].to_string(), int(co)?, int(ct)?), value);
        }
        Ok(Self { path: path.to_path_buf(), table })
    }

    pub fn from_table(path: impl Into<PathBuf>, table: HashMap<(String, i64, i64), T>) -> Self {
        Self { path: path.into(), table }
    }

    pub fn get(&self, series: &str, origin: i64, time: i64) -> Option<T> {
        self.table.get(&(series.to_string(), origin, time)).copied()
    }
}

/// Plugs precomputed forecasts into the pipeline. Fitting is a no-op; every
/// prediction is a table lookup.
#[derive(Debug, Clone)]
pub struct ExternalForecaster<T> {
    predictions: Arc<ExternalPredictions<T>>,
}

impl<T: Scalar> ExternalForecaster<T> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(ExternalPredictions::load(path)?))
    }

    pub fn new(predictions: ExternalPredictions<T>) -> Self {
        Self { predictions: Arc::new(predictions) }
    }

    pub fn fitted(&self) -> Self {
        self.clone()
    }
}

impl<T: Scalar> PointForecaster<T> for ExternalForecaster<T> {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Direct
    }

    fn describe(&self) -> String {
        format!("external({})", self.predictions.path.display())
    }

    fn fit(&self, _train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        Ok(Box::new(self.clone()))
    }
}

impl<T: Scalar> FittedForecaster<T> for ExternalForecaster<T> {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Direct
    }

    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>> {
        (1..=req.horizon() as i64)
            .map(|h| {
                let t = req.origin() + h;
                self.predictions.get(req.series_id(), req.origin(), t).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "no external prediction for series {:?}, origin {}, time {t}",
                        req.series_id(),
                        req.origin()
                    ))
                })
            })
            .collect()
    }

    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>> {
        Ok(vec![None; series.len()])
    }

    fn params(&self) -> Option<ModelParams<T>> {
        Some(ModelParams::External { predictions: self.predictions.path.clone() })
    }
}
