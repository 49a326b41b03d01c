use serde::{Deserialize, Serialize};

use super::{FittedForecaster, ForecastKind, ForecastRequest, ModelParams, PointForecaster};
use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Repeats the last `period` observations cyclically.
///
/// Has no parameters to learn, so it serves as both specification and fitted
/// model. Horizon `h` never depends on the model's own earlier outputs, so it
/// is a direct model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonalNaive {
    period: usize,
}

impl SeasonalNaive {
    pub fn new(period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidInput("seasonal period must be >= 1".into()));
        }
        Ok(Self { period })
    }

    pub fn period(&self) -> usize {
        self.period
    }
}

impl<T: Scalar> PointForecaster<T> for SeasonalNaive {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Direct
    }

    fn min_train_len(&self) -> usize {
        self.period
    }

    fn describe(&self) -> String {
        format!("seasonal_naive(period={})", self.period)
    }

    fn fit(&self, _train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        Ok(Box::new(*self))
    }
}

impl<T: Scalar> FittedForecaster<T> for SeasonalNaive {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Direct
    }

    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>> {
        let hist = req.history();
        if hist.len() < self.period {
            return Err(Error::InsufficientData(format!(
                "seasonal naive needs {} observations, history has {}",
                self.period,
                hist.len()
            )));
        }
        let tail = &hist[hist.len() - self.period..];
        Ok((0..req.horizon()).map(|h| tail[h % self.period]).collect())
    }

    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>> {
        let y = series.targets();
        Ok((0..y.len()).map(|k| (k >= self.period).then(|| y[k - self.period])).collect())
    }

    fn params(&self) -> Option<ModelParams<T>> {
        Some(ModelParams::SeasonalNaive(*self))
    }
}
