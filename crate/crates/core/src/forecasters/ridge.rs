use serde::{Deserialize, Serialize};

use super::linalg::ridge_normal_equations;
use super::{FittedForecaster, ForecastKind, ForecastRequest, ModelParams, PointForecaster};
use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pooled ridge regression on the covariates; a direct model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge<T> {
    lambda: T,
}

impl<T: Scalar> Ridge<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("ridge lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RidgeModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub lambda: T,
}

impl<T: Scalar> RidgeModel<T> {
    /// Every `(series, t)` observation is one regression row.
    pub fn fit(train: &Panel<T>, lambda: T) -> Result<Self> {
        let ridge = Ridge::new(lambda)?;
        if train.n_observations() == 0 {
            return Err(Error::InsufficientData("ridge fit on an empty panel".into()));
        }
        let p = train.covariate_names().len();
        let mut rows: Vec<&[T]> = Vec::with_capacity(train.n_observations());
        let mut y = Vec::with_capacity(train.n_observations());
        for s in train.series() {
            for (_, yi, x) in s.iter() {
                rows.push(x);
                y.push(yi);
            }
        }
        let (weights, intercept) = ridge_normal_equations(&rows, &y, p, ridge.lambda)?;
        Ok(Self { weights, intercept, lambda })
    }

    pub fn predict_row(&self, x: &[T]) -> Result<T> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: x.len() });
        }
        Ok(self.weights.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.intercept)
    }

    /// Penalized least-squares objective at the given parameters.
    pub fn objective(train: &Panel<T>, weights: &[T], intercept: T, lambda: T) -> T {
        let mut sse = T::zero();
        for s in train.series() {
            for (_, y, x) in s.iter() {
                let f = weights.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + intercept;
                sse += (y - f) * (y - f);
            }
        }
        sse + lambda * weights.iter().map(|&w| w * w).sum::<T>()
    }
}

impl<T: Scalar> PointForecaster<T> for Ridge<T> {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Direct
    }

    fn describe(&self) -> String {
        format!("ridge(lambda={})", self.lambda)
    }

    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        Ok(Box::new(RidgeModel::fit(train, self.lambda)?))
    }
}

impl<T: Scalar> FittedForecaster<T> for RidgeModel<T> {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Direct
    }

    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>> {
        req.future_covariates().iter().map(|x| self.predict_row(x)).collect()
    }

    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>> {
        series.covariates().iter().map(|x| self.predict_row(x).map(Some)).collect()
    }

    fn params(&self) -> Option<ModelParams<T>> {
        Some(ModelParams::Ridge(self.clone()))
    }
}
