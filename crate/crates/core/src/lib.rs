//! Distribution forecasts from backtest residuals.
//!
//! A point forecaster is backtested over rolling split points, the resulting
//! predictive residuals are filtered by a selector that matches the meta
//! features of each future point, and the selected residuals are resampled
//! around the point forecast.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix it to
//! `f64`.

pub mod backtest;
pub mod bootstrap;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forecasters;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod selector;

pub use error::{Error, Result, Stage};
pub use pipeline::{train, BundleConfig};
pub use scalar::Scalar;

pub use backtest::Provenance;
pub use bootstrap::{BootstrapConfig, Formula, RatioDenominator};
pub use dataset::{DataSchema, Frequency};
pub use eval::{EvalPlan, EvalReport, MethodSpec, NoiseKind, SyntheticSpec};
pub use selector::{Feature, SelectorConfig, SelectorKind};

pub type Series = dataset::Series<f64>;
pub type Panel = dataset::Panel<f64>;
pub type BacktestPlan = backtest::BacktestPlan<f64>;
pub type ResidualRecord = backtest::ResidualRecord<f64>;
pub type ResidualCollection = backtest::ResidualCollection<f64>;
pub type SelectorModel = selector::SelectorModel<f64>;
pub type FutureMeta = selector::FutureMeta<f64>;
pub type ForecastTarget = bootstrap::ForecastTarget<f64>;
pub type DistributionForecast = bootstrap::DistributionForecast<f64>;
pub type TrainedDFModel = pipeline::TrainedDFModel<f64>;
