use serde::{Deserialize, Serialize};

use super::linalg::ridge_normal_equations;
use super::{FittedForecaster, ForecastKind, ForecastRequest, ModelParams, PointForecaster};
use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pooled autoregression of order `p` with intercept; an iterative model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar<T> {
    order: usize,
    lambda: T,
}

impl<T: Scalar> Ar<T> {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("AR order must be >= 1".into()));
        }
        Ok(Self { order, lambda: T::zero() })
    }

    /// Optional ridge penalty on the lag coefficients.
    pub fn with_lambda(mut self, lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) {
            return Err(Error::InvalidInput(format!("AR lambda must be >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ArModel<T> {
    /// `coefficients[l]` multiplies `Y_{t−1−l}`.
    pub coefficients: Vec<T>,
    pub intercept: T,
}

impl<T: Scalar> ArModel<T> {
    /// Least squares over every window of `p + 1` consecutive points, pooled
    /// across series.
    ///
    /// A degenerate lag design (e.g. constant series) is retried with a tiny
    /// ridge penalty so the fit falls back to the intercept.
    pub fn fit(train: &Panel<T>, order: usize, lambda: T) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("AR order must be >= 1".into()));
        }
        if let Some(short) = train.series().iter().find(|s| s.len() <= order) {
            return Err(Error::InsufficientData(format!(
                "AR({order}) needs more than {order} observations; series {:?} has {}",
                short.id(),
                short.len()
            )));
        }
        let mut lags: Vec<Vec<T>> = Vec::new();
        let mut y = Vec::new();
        for s in train.series() {
            let v = s.targets();
            for t in order..v.len() {
                lags.push((1..=order).map(|l| v[t - l]).collect());
                y.push(v[t]);
            }
        }
        if y.is_empty() {
            return Err(Error::InsufficientData(format!("no complete window of length {}", order + 1)));
        }
        let rows: Vec<&[T]> = lags.iter().map(Vec::as_slice).collect();
        let (coefficients, intercept) = match ridge_normal_equations(&rows, &y, order, lambda) {
            Err(Error::SingularMatrix) => {
                let scale = y.iter().map(|v| v.abs()).fold(T::one(), T::max);
                ridge_normal_equations(&rows, &y, order, lambda + T::of(1e-9) * scale * scale)?
            }
            other => other?,
        };
        Ok(Self { coefficients, intercept })
    }

    fn step(&self, buf: &[T]) -> T {
        let n = buf.len();
        self.intercept + self.coefficients.iter().enumerate().map(|(l, &c)| c * buf[n - 1 - l]).sum::<T>()
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }
}

impl<T: Scalar> PointForecaster<T> for Ar<T> {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Iterative
    }

    fn min_train_len(&self) -> usize {
        self.order + 1
    }

    fn describe(&self) -> String {
        format!("ar(order={}, lambda={})", self.order, self.lambda)
    }

    fn fit(&self, train: &Panel<T>) -> Result<Box<dyn FittedForecaster<T>>> {
        Ok(Box::new(ArModel::fit(train, self.order, self.lambda)?))
    }
}

impl<T: Scalar> FittedForecaster<T> for ArModel<T> {
    fn kind(&self) -> ForecastKind {
        ForecastKind::Iterative
    }

    fn predict(&self, req: &ForecastRequest<'_, T>) -> Result<Vec<T>> {
        let p = self.order();
        let hist = req.history();
        if hist.len() < p {
            return Err(Error::InsufficientData(format!("AR({p}) needs {p} observations, history has {}", hist.len())));
        }
        let mut buf: Vec<T> = hist[hist.len() - p..].to_vec();
        let mut out = Vec::with_capacity(req.horizon());
        for _ in 0..req.horizon() {
            let next = self.step(&buf);
            out.push(next);
            buf.push(next);
        }
        Ok(out)
    }

    fn fitted_values(&self, series: &Series<T>) -> Result<Vec<Option<T>>> {
        let p = self.order();
        let y = series.targets();
        Ok((0..y.len()).map(|k| (k >= p).then(|| self.step(&y[k - p..k]))).collect())
    }

    fn params(&self) -> Option<ModelParams<T>> {
        Some(ModelParams::Ar(self.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(ys: Vec<f64>) -> Panel<f64> {
        Panel::new(vec![Series::univariate("a", 1, ys).unwrap()], vec![]).unwrap()
    }

    fn forecast(m: &ArModel<f64>, hist: &[f64], k: usize) -> Vec<f64> {
        let hcov = vec![Vec::new(); hist.len()];
        let fut = vec![Vec::new(); k];
        m.predict(&ForecastRequest::new("a", 0, hist, &hcov, &fut).unwrap()).unwrap()
    }

    #[test]
    fn recovers_unit_drift() {
        // Y_t = Y_{t-1} + 1 is an exact AR(1) with coefficient 1, intercept 1.
        let ys: Vec<f64> = (1..=10).map(f64::from).collect();
        let m = ArModel::fit(&panel(ys.clone()), 1, 0.0).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((m.intercept - 1.0).abs() < 1e-10);
        let f = forecast(&m, &ys, 3);
        for (got, want) in f.iter().zip([11.0, 12.0, 13.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_series_is_a_fixed_point() {
        let m = ArModel::fit(&panel(vec![5.0; 8]), 1, 0.0).unwrap();
        for v in forecast(&m, &[5.0; 3], 4) {
            assert!((v - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short_for_order() {
        assert!(matches!(ArModel::fit(&panel(vec![1.0, 2.0, 3.0, 4.0]), 5, 0.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn horizon_one_is_independent_of_k() {
        let ys: Vec<f64> = (0..30).map(|t| ((t as f64) * 0.9).sin() * 4.0 + t as f64 * 0.1).collect();
        let m = ArModel::fit(&panel(ys.clone()), 3, 0.0).unwrap();
        let one = forecast(&m, &ys, 1)[0];
        for k in 2..6 {
            assert_eq!(forecast(&m, &ys, k)[0], one);
        }
    }

    #[test]
    fn fitted_values_start_after_order() {
        let ys: Vec<f64> = (1..=6).map(f64::from).collect();
        let m = ArModel::fit(&panel(ys.clone()), 1, 0.0).unwrap();
        let s = Series::univariate("a", 1, ys).unwrap();
        let f = m.fitted_values(&s).unwrap();
        assert_eq!(f[0], None);
        assert!((f[1].unwrap() - 2.0).abs() < 1e-9);
        assert!((f[5].unwrap() - 6.0).abs() < 1e-9);
    }
}
