//! Evaluation: coverage metrics, the nested rolling-origin harness, and
//! synthetic panels with known conditional quantiles.

mod harness;
mod metrics;
mod synthetic;

pub use harness::{
    evaluate_points, fold_training, run_evaluation, CellStats, EvalPlan, EvalReport, FoldCell, FoldTraining, MethodKind,
    MethodReport, MethodSpec, ScoredPoint,
};
pub use metrics::{ace, coverage, mape, pinball, Mape};
pub use synthetic::{generate_synthetic, normal_quantile, NoiseKind, QuantileOracle, SyntheticData, SyntheticOracle, SyntheticSpec};
