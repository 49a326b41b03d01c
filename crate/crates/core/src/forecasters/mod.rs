//! Point-forecast (PF) model contract and the built-in reference models.
//!
//! A [`PointForecaster`] is an unfitted model specification; fitting it on a
//! [`Panel`] yields a [`FittedForecaster`] that answers [`ForecastRequest`]s.
//! Direct models forecast every horizon from covariates alone; iterative
//! models feed their own forecasts back in as lagged inputs.

mod ar;
mod external;
pub(crate) mod linalg;
mod ridge;
mod seasonal;
mod wrappers;

use std::fmt::Debug;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use ar::{Ar, ArModel};
pub use external::{ExternalForecaster, ExternalPredictions};
pub use ridge::{Ridge, RidgeModel};
pub use seasonal::SeasonalNaive;
pub use wrappers::{FitCounter, Instrumented, Offset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastKind {
    Direct,
    Iterative,
}

/// Inputs to a single forecast from origin `j` over horizons `1..=k`.
#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a, T> {
    series_id: &'a str,
    origin: i64,
    history: &'a [T],
    history_covariates: &'a [Vec<T>],
    future_covariates: &'a [Vec<T>],
}

impl<'a, T: Scalar> ForecastRequest<'a, T> {
    /// `history` holds `Y` for times `origin − len + 1 ..= origin`;
    /// `future_covariates[h − 1]` holds `X` at `origin + h`.
    pub fn new(
        series_id: &'a str,
        origin: i64,
        history: &'a [T],
        history_covariates: &'a [Vec<T>],
        future_covariates: &'a [Vec<T>],
    ) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::InvalidInput(format!("empty history for series {series_id:?}")));
        }
        if future_covariates.is_empty() {
            return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
        }
        if history_covariates.len() != history.len() {
            return Err(Error::DimensionMismatch { expected: history.len(), got: history_covariates.len() });
        }
        Ok(Self { series_id, origin, history, history_covariates, future_covariates })
    }

    /// Request whose history is the whole series.
    pub fn from_series(series: &'a Series<T>, future_covariates: &'a [Vec<T>]) -> Result<Self> {
        Self::new(series.id(), series.end(), series.targets(), series.covariates(), future_covariates)
    }

    pub fn series_id(&self) -> &'a str {
        self.series_id
    }
    pub fn origin(&self) -> i64 {
        self.origin
    }
    pub fn history(&self) -> &'a [T] {
        self.history
    }
    pub fn history_covariates(&self) -> &'a [Vec<T>] {
        self.history_covariates
    }
    pub fn future_covariates(&self) -> &'a [Vec<T>] {
        self.future_covariates
    }
    pub fn horizon(&self) -> usize {
        self.future_covariates.len()
    }
}

/// Unfitted PF model.
pub trait PointForecaster<T: Scalar>: Send + Sync {
    fn kind(&self) -> ForecastKind;

    /// Fewest observations a series needs to take part in a fit.
    fn min_train_len(&self) -> usize {
        1
    }

    fn describe(&self) -> String;

    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>>;
}

/// Fitted PF model. `predict` must be deterministic and reentrant.
pub trait FittedForecaster<T: Scalar>: Send + Sync + Debug {
    fn kind(&self) -> ForecastKind;

    /// Returns one value per requested horizon.
    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>>;

    /// One-step in-sample fitted values aligned with `series`; `None` where
    /// the model has no fitted value (e.g. the first `p` points of an AR(p)).
    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>>;

    /// Serializable parameters, if the model supports persistence.
    fn params(&self) -> Option<ModelParams<T>>;
}

/// Configuration of a built-in model, as found under `model.*` in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Ridge {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    SeasonalNaive {
        period: usize,
    },
    Ar {
        order: usize,
        #[serde(default)]
        lambda: f64,
    },
    External {
        predictions: PathBuf,
    },
}

fn default_lambda() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn build<T: Scalar>(&self) -> Result<Box<dyn PointForecaster<T>>> {
        Ok(match self {
            ModelConfig::Ridge { lambda } => Box::new(Ridge::new(T::of(*lambda))?),
            ModelConfig::SeasonalNaive { period } => Box::new(SeasonalNaive::new(*period)?),
            ModelConfig::Ar { order, lambda } => Box::new(Ar::new(*order)?.with_lambda(T::of(*lambda))?),
            ModelConfig::External { predictions } => Box::new(ExternalForecaster::<T>::load(predictions)?),
        })
    }
}

/// Persisted parameters of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum ModelParams<T> {
    Ridge(RidgeModel<T>),
    SeasonalNaive(SeasonalNaive),
    Ar(ArModel<T>),
    External { predictions: PathBuf },
    Offset { inner: Box<ModelParams<T>>, offset: T },
}

impl<T: Scalar> ModelParams<T> {
    pub fn into_fitted(self) -> Result<Box<dyn FittedForecaster<T>>> {
        Ok(match self {
            ModelParams::Ridge(m) => Box::new(m),
            ModelParams::SeasonalNaive(m) => Box::new(m),
            ModelParams::Ar(m) => Box::new(m),
            ModelParams::External { predictions } => Box::new(ExternalForecaster::<T>::load(predictions)?.fitted()),
            ModelParams::Offset { inner, offset } => Box::new(wrappers::OffsetModel::new(inner.into_fitted()?, offset)),
        })
    }
}

impl<T: Scalar, F: PointForecaster<T> + ?Sized> PointForecaster<T> for Box<F> {
    fn kind(&self) -> ForecastKind {
        (**self).kind()
    }
    fn min_train_len(&self) -> usize {
        (**self).min_train_len()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        (**self).fit(train)
    }
}

impl<T: Scalar, F: PointForecaster<T> + ?Sized> PointForecaster<T> for std::sync::Arc<F> {
    fn kind(&self) -> ForecastKind {
        (**self).kind()
    }
    fn min_train_len(&self) -> usize {
        (**self).min_train_len()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        (**self).fit(train)
    }
}
