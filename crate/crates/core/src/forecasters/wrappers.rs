//! Decorators over arbitrary forecasters.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{FittedForecaster, ForecastKind, ForecastRequest, ModelParams, PointForecaster};
use crate::dataset::{Panel, Series};
use crate::error::Result;
use crate::scalar::Scalar;

/// Shared fit/predict call counters.
#[derive(Debug, Default)]
pub struct FitCounter {
    fits: AtomicUsize,
    predicts: AtomicUsize,
}

impl FitCounter {
    pub fn fits(&self) -> usize {
        self.fits.load(Ordering::SeqCst)
    }
    pub fn predicts(&self) -> usize {
        self.predicts.load(Ordering::SeqCst)
    }
}

/// Counts every fit and predict made through the wrapped model.
pub struct Instrumented<F> {
    inner: F,
    counter: Arc<FitCounter>,
}

impl<F> Instrumented<F> {
    pub fn new(inner: F) -> Self {
        Self { inner, counter: Arc::new(FitCounter::default()) }
    }

    pub fn counter(&self) -> Arc<FitCounter> {
        Arc::clone(&self.counter)
    }
}

#[derive(Debug)]
struct InstrumentedModel<T> {
    inner: Box<dyn FittedForecaster<T>>,
    counter: Arc<FitCounter>,
}

impl<T: Scalar, F: PointForecaster<T>> PointForecaster<T> for Instrumented<F> {
    fn kind(&self) -> ForecastKind {
        self.inner.kind()
    }
    fn min_train_len(&self) -> usize {
        self.inner.min_train_len()
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        self.counter.fits.fetch_add(1, Ordering::SeqCst);
        let inner = self.inner.fit(train)?;
        Ok(Box::new(InstrumentedModel { inner, counter: Arc::clone(&self.counter) }))
    }
}

impl<T: Scalar> FittedForecaster<T> for InstrumentedModel<T> {
    fn kind(&self) -> ForecastKind {
        self.inner.kind()
    }
    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>> {
        self.counter.predicts.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(req)
    }
    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>> {
        self.inner.fitted_values(series)
    }
    fn params(&self) -> Option<ModelParams<T>> {
        self.inner.params()
    }
}

/// Adds a constant to every forecast of the wrapped model; used to probe
/// systematic bias.
pub struct Offset<F, T> {
    inner: F,
    offset: T,
}

impl<F, T: Scalar> Offset<F, T> {
    pub fn new(inner: F, offset: T) -> Self {
        Self { inner, offset }
    }
}

#[derive(Debug)]
pub(crate) struct OffsetModel<T> {
    inner: Box<dyn FittedForecaster<T>>,
    offset: T,
}

impl<T: Scalar> OffsetModel<T> {
    pub(crate) fn new(inner: Box<dyn FittedForecaster<T>>, offset: T) -> Self {
        Self { inner, offset }
    }
}

impl<T: Scalar, F: PointForecaster<T>> PointForecaster<T> for Offset<F, T> {
    fn kind(&self) -> ForecastKind {
        self.inner.kind()
    }
    fn min_train_len(&self) -> usize {
        self.inner.min_train_len()
    }
    fn describe(&self) -> String {
        format!("{}+offset({})", self.inner.describe(), self.offset)
    }
    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        Ok(Box::new(OffsetModel::new(self.inner.fit(train)?, self.offset)))
    }
}

impl<T: Scalar> FittedForecaster<T> for OffsetModel<T> {
    fn kind(&self) -> ForecastKind {
        self.inner.kind()
    }
    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>> {
        Ok(self.inner.predict(req)?.into_iter().map(|v| v + self.offset).collect())
    }
    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>> {
        Ok(self.inner.fitted_values(series)?.into_iter().map(|v| v.map(|v| v + self.offset)).collect())
    }
    fn params(&self) -> Option<ModelParams<T>> {
        Some(ModelParams::Offset { inner: Box::new(self.inner.params()?), offset: self.offset })
    }
}
