//! Distribution forecasts from resampled backtest residuals.
//!
//! The additive formula adds a drawn residual to the point forecast; the
//! multiplicative formula scales the point forecast by `1 + r` for a drawn
//! error ratio `r`. Direct models resample once per horizon, iterative models
//! simulate whole trajectories. Classic fitted-residual (FR) and
//! fitted-model (FM) bootstraps are provided as baselines.

mod baselines;
mod forecast;
mod io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backtest::ResidualCollection;
use crate::error::{Error, Result};
use crate::scalar::{mean, sort_ascending, Scalar};

pub use baselines::{baseline_fm, baseline_fr, fitted_residual_collection, DEFAULT_FM_REFITS};
pub use forecast::{forecast_direct, forecast_distribution, forecast_iterative, ForecastTarget};
pub use io::{write_forecasts_csv, write_samples_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioDenominator {
    #[default]
    BacktestForecast,
    ObservedResponse,
}

fn default_b() -> usize {
    1000
}

/// Bootstrap settings (`bootstrap.*` keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default)]
    pub formula: Formula,
    #[serde(rename = "B", alias = "b", default = "default_b")]
    pub b: usize,
    #[serde(default)]
    pub ratio_denominator: RatioDenominator,
    #[serde(default)]
    pub seed: u64,
    /// Ratio guard; `None` uses `1e-6` times the mean absolute denominator
    /// over the whole collection.
    #[serde(default)]
    pub delta: Option<f64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            formula: Formula::Additive,
            b: default_b(),
            ratio_denominator: RatioDenominator::BacktestForecast,
            seed: 0,
            delta: None,
        }
    }
}

impl BootstrapConfig {
    pub fn additive(b: usize, seed: u64) -> Self {
        Self { b, seed, ..Self::default() }
    }

    pub fn multiplicative(b: usize, seed: u64) -> Self {
        Self { formula: Formula::Multiplicative, b, seed, ..Self::default() }
    }

    pub fn with_denominator(mut self, d: RatioDenominator) -> Self {
        self.ratio_denominator = d;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidInput("bootstrap B must be >= 1".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::InvalidInput(format!("bootstrap delta must be positive, got {d}")));
            }
        }
        Ok(())
    }

    /// Effective ratio guard for `coll`.
    pub fn resolve_delta<T: Scalar>(&self, coll: &ResidualCollection<T>) -> T {
        match self.delta {
            Some(d) => T::of(d),
            None => default_delta(coll, self.ratio_denominator),
        }
    }
}

/// `1e-6 · mean |denominator|` over the collection, or the smallest positive
/// value when every denominator is zero.
pub fn default_delta<T: Scalar>(coll: &ResidualCollection<T>, denom: RatioDenominator) -> T {
    let abs: Vec<T> = coll.records().iter().map(|r| denominator(r, denom).abs()).collect();
    let d = mean(&abs) * T::of(1e-6);
    if d > T::zero() {
        d
    } else {
        T::min_positive_value()
    }
}

fn denominator<T: Scalar>(r: &crate::backtest::ResidualRecord<T>, denom: RatioDenominator) -> T {
    match denom {
        RatioDenominator::BacktestForecast => r.meta.forecast,
        RatioDenominator::ObservedResponse => r.meta.observed,
    }
}

/// Error ratios of selected records.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSet<T> {
    pub ratios: Vec<T>,
    /// Records dropped because `|denominator| < delta`.
    pub excluded: usize,
    pub delta: T,
}

/// Builds `eps / denominator` for the records at `indices`.
pub fn build_ratio_set<T: Scalar>(
    coll: &ResidualCollection<T>,
    indices: &[usize],
    denom: RatioDenominator,
    delta: T,
) -> Result<RatioSet<T>> {
    if indices.is_empty() {
        return Err(Error::Empty("selected residuals"));
    }
    let records = coll.records();
    let mut ratios = Vec::with_capacity(indices.len());
    let mut excluded = 0;
    for &i in indices {
        let r = &records[i];
        let d = denominator(r, denom);
        if d.abs() < delta {
            excluded += 1;
        } else {
            ratios.push(r.eps / d);
        }
    }
    if ratios.is_empty() {
        return Err(Error::DegenerateRatios(excluded));
    }
    Ok(RatioSet { ratios, excluded, delta })
}

/// Sample quantile by linear interpolation at position `(n − 1)·τ` of the
/// sorted sample.
pub fn quantile<T: Scalar>(sorted: &[T], tau: f64) -> Result<T> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    if sorted.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let pos = (sorted.len() - 1) as f64 * tau;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return Ok(sorted[lo]);
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    Ok(a + (b - a) * T::of(frac))
}

/// Quantiles for several levels.
pub fn quantiles<T: Scalar>(sorted: &[T], taus: &[f64]) -> Result<Vec<T>> {
    taus.iter().map(|&t| quantile(sorted, t)).collect()
}

fn draw<T: Scalar, R: Rng + ?Sized>(values: &[T], b: usize, rng: &mut R, map: impl Fn(T) -> T) -> Vec<T> {
    let mut out: Vec<T> = (0..b).map(|_| map(values[rng.random_range(0..values.len())])).collect();
    sort_ascending(&mut out);
    out
}

/// `B` sorted samples `pf + ε_b` with `ε_b` drawn with replacement.
pub fn bootstrap_additive<T: Scalar, R: Rng + ?Sized>(pf: T, residuals: &[T], b: usize, rng: &mut R) -> Result<Vec<T>> {
    if residuals.is_empty() {
        return Err(Error::Empty("selected residuals"));
    }
    Ok(draw(residuals, b, rng, |e| pf + e))
}

/// `B` sorted samples `pf · (1 + r_b)` with `r_b` drawn with replacement.
pub fn bootstrap_multiplicative<T: Scalar, R: Rng + ?Sized>(pf: T, ratios: &[T], b: usize, rng: &mut R) -> Result<Vec<T>> {
    if ratios.is_empty() {
        return Err(Error::Empty("error ratios"));
    }
    Ok(draw(ratios, b, rng, |r| pf * (T::one() + r)))
}

/// Quantiles of the bootstrap distribution without sampling: the `B → ∞`
/// limit of [`bootstrap_additive`] / [`bootstrap_multiplicative`].
///
/// `values` are residuals (additive) or ratios (multiplicative).
pub fn quantile_shortcut_direct<T: Scalar>(pf: T, values: &[T], formula: Formula, taus: &[f64]) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(Error::Empty("selected residuals"));
    }
    let mut sorted = values.to_vec();
    sort_ascending(&mut sorted);
    taus.iter()
        .map(|&tau| match formula {
            Formula::Additive => Ok(pf + quantile(&sorted, tau)?),
            // A negative pf reverses the order of pf·(1 + r).
            Formula::Multiplicative if pf < T::zero() => Ok(pf * (T::one() + quantile(&sorted, 1.0 - tau)?)),
            Formula::Multiplicative => Ok(pf * (T::one() + quantile(&sorted, tau)?)),
        })
        .collect()
}

/// Bootstrap distribution forecast for one series and future time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DistributionForecast<T> {
    pub series_id: String,
    pub origin: i64,
    pub horizon: usize,
    pub target_time: i64,
    pub point_forecast: T,
    /// Sorted ascending.
    pub samples: Vec<T>,
    pub selector_fallback: bool,
    pub excluded_ratio_count: usize,
    /// Multiplicative formula with a zero point forecast: every sample is 0.
    pub degenerate_multiplicative: bool,
    /// Samples lost to failed refits (FM baseline only).
    pub dropped_samples: usize,
}

impl<T: Scalar> DistributionForecast<T> {
    pub fn quantile(&self, tau: f64) -> Result<T> {
        quantile(&self.samples, tau)
    }

    pub fn quantiles(&self, taus: &[f64]) -> Result<Vec<T>> {
        quantiles(&self.samples, taus)
    }

    pub fn bagging(&self, stat: BaggingStat) -> Result<T> {
        bagging_pf(self, stat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaggingStat {
    #[default]
    Median,
    Mean,
}

/// Bagged point forecast: the median or mean of the bootstrap samples.
pub fn bagging_pf<T: Scalar>(df: &DistributionForecast<T>, stat: BaggingStat) -> Result<T> {
    if df.samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    match stat {
        BaggingStat::Median => quantile(&df.samples, 0.5),
        BaggingStat::Mean => Ok(mean(&df.samples)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{Provenance, ResidualRecord};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn coll(rows: &[(f64, f64)]) -> ResidualCollection<f64> {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(k, &(forecast, observed))| ResidualRecord::new("s", k as i64, k as i64 + 1, forecast, observed).unwrap())
            .collect();
        ResidualCollection::new(recs, Provenance::manual("t"))
    }

    #[test]
    fn quantile_convention() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&x, 0.5).unwrap(), 5.5);
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0], 0.25).unwrap(), 0.75);
        for tau in [0.01, 0.5, 0.99] {
            assert_eq!(quantile(&[4.0], tau).unwrap(), 4.0);
        }
        assert!(matches!(quantile(&x, 0.0), Err(Error::InvalidTau(_))));
        assert!(matches!(quantile(&x, 1.0), Err(Error::InvalidTau(_))));
        assert!(quantile::<f64>(&[], 0.5).is_err());
    }

    #[test]
    fn quantile_handles_infinite_endpoints() {
        let x = [f64::NEG_INFINITY, 0.0, f64::INFINITY];
        assert_eq!(quantile(&x, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn additive_law() {
        let mut rng = stream(1, &[]);
        let s = bootstrap_additive(10.0, &[-1.0, 0.0, 1.0], 30_000, &mut rng).unwrap();
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
        for v in [9.0, 10.0, 11.0] {
            let frac = s.iter().filter(|&&x| x == v).count() as f64 / s.len() as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.015, "{v}: {frac}");
        }
        assert!(bootstrap_additive(3.0, &[0.0; 4], 20, &mut rng).unwrap().iter().all(|&v| v == 3.0));
        assert!(bootstrap_additive(0.0, &[5.0], 20, &mut rng).unwrap().iter().all(|&v| v == 5.0));
        assert!(bootstrap_additive::<f64, _>(0.0, &[], 20, &mut rng).is_err());
    }

    #[test]
    fn ratio_set_examples() {
        let c = coll(&[(10.0, 12.0)]);
        let r = build_ratio_set(&c, &[0], RatioDenominator::BacktestForecast, 1e-9).unwrap();
        assert!((r.ratios[0] - 0.2).abs() < 1e-15);
        let c = coll(&[(6.0, 8.0)]);
        let r = build_ratio_set(&c, &[0], RatioDenominator::ObservedResponse, 1e-9).unwrap();
        assert_eq!(r.ratios, vec![0.25]);
        let c = coll(&[(1e-12, 1.0), (10.0, 11.0)]);
        let r = build_ratio_set(&c, &[0, 1], RatioDenominator::BacktestForecast, 1e-6).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.ratios.len(), 1);
        assert!(matches!(
            build_ratio_set(&c, &[0], RatioDenominator::BacktestForecast, 1e-6),
            Err(Error::DegenerateRatios(1))
        ));
    }

    #[test]
    fn default_delta_scales_with_denominators() {
        let c = coll(&[(10.0, 12.0), (30.0, 29.0)]);
        assert!((default_delta(&c, RatioDenominator::BacktestForecast) - 2e-5).abs() < 1e-18);
        let z = coll(&[(0.0, 1.0)]);
        assert!(default_delta(&z, RatioDenominator::BacktestForecast) > 0.0);
    }

    #[test]
    fn multiplicative_examples() {
        let mut rng = stream(2, &[]);
        let s = bootstrap_multiplicative(10.0, &[-0.1, 0.0, 0.2], 500, &mut rng).unwrap();
        assert!(s.iter().all(|&v: &f64| [9.0, 10.0, 12.0].iter().any(|w| (v - w).abs() < 1e-12)));
        assert!(bootstrap_multiplicative(0.0, &[-0.5, 3.0], 50, &mut rng).unwrap().iter().all(|&v| v == 0.0));

        let c = coll(&[(10.0, 12.0), (10.0, 10.0)]);
        let r = build_ratio_set(&c, &[0, 1], RatioDenominator::BacktestForecast, 1e-9).unwrap();
        let s = bootstrap_multiplicative(100.0, &r.ratios, 200, &mut rng).unwrap();
        assert!(s.iter().all(|&v| (v - 100.0).abs() < 1e-9 || (v - 120.0).abs() < 1e-9));
        assert!(s.iter().any(|&v| v > 110.0));
    }

    #[test]
    fn shortcut_examples() {
        assert_eq!(quantile_shortcut_direct(10.0, &[-1.0, 0.0, 1.0], Formula::Additive, &[0.5]).unwrap(), vec![10.0]);
        assert_eq!(quantile_shortcut_direct(1.0, &[3.0], Formula::Additive, &[0.5]).unwrap(), vec![4.0]);
        let q = quantile_shortcut_direct(-10.0, &[-0.5, 0.0, 0.5], Formula::Multiplicative, &[0.1, 0.9]).unwrap();
        assert!(q[0] < q[1]);
    }

    fn iqr(v: &[f64]) -> f64 {
        let mut s = v.to_vec();
        sort_ascending(&mut s);
        quantile(&s, 0.75).unwrap() - quantile(&s, 0.25).unwrap()
    }

    #[test]
    fn sampled_quantiles_converge_to_shortcut() {
        let mut rng = stream(9, &[]);
        // Continuous residuals: on a coarse lattice sampled quantiles stick to atoms.
        let normal = rand_distr::Normal::new(0.5, 2.0).unwrap();
        let residuals: Vec<f64> = (0..2000).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect();
        let taus = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];
        let tol = 0.01 * iqr(&residuals);
        let exact = quantile_shortcut_direct(5.0, &residuals, Formula::Additive, &taus).unwrap();
        let s = bootstrap_additive(5.0, &residuals, 200_000, &mut rng).unwrap();
        for (tau, e) in taus.iter().zip(&exact) {
            let got = quantile(&s, *tau).unwrap();
            assert!((got - e).abs() <= tol, "tau {tau}: {got} vs {e}");
        }
        for pf in [7.0, -7.0] {
            let ratios: Vec<f64> = residuals.iter().map(|r| r / 20.0).collect();
            let exact = quantile_shortcut_direct(pf, &ratios, Formula::Multiplicative, &taus).unwrap();
            let s = bootstrap_multiplicative(pf, &ratios, 200_000, &mut rng).unwrap();
            let tol = 0.01 * iqr(&s);
            for (tau, e) in taus.iter().zip(&exact) {
                let got = quantile(&s, *tau).unwrap();
                assert!((got - e).abs() <= tol, "pf {pf} tau {tau}: {got} vs {e}");
            }
        }
    }

    #[test]
    fn bagging_examples() {
        let df = |samples: Vec<f64>| DistributionForecast {
            series_id: "s".into(),
            origin: 0,
            horizon: 1,
            target_time: 1,
            point_forecast: 0.0,
            samples,
            selector_fallback: false,
            excluded_ratio_count: 0,
            degenerate_multiplicative: false,
            dropped_samples: 0,
        };
        assert_eq!(bagging_pf(&df(vec![2.5]), BaggingStat::Median).unwrap(), 2.5);
        assert_eq!(bagging_pf(&df(vec![2.5]), BaggingStat::Mean).unwrap(), 2.5);
        let mut rng = stream(4, &[]);
        let biased: Vec<f64> = (0..101).map(|i| -3.0 + (i as f64 - 50.0) * 0.01).collect();
        let s = bootstrap_additive(20.0, &biased, 20_000, &mut rng).unwrap();
        assert!((bagging_pf(&df(s), BaggingStat::Median).unwrap() - 17.0).abs() < 0.05);
        assert!(bagging_pf(&df(vec![]), BaggingStat::Mean).is_err());
    }

    #[test]
    fn config_serde_uses_capital_b() {
        let c: BootstrapConfig = serde_json::from_str(r#"{"formula":"multiplicative","B":50,"seed":3}"#).unwrap();
        assert_eq!(c.b, 50);
        assert_eq!(c.formula, Formula::Multiplicative);
        assert!(BootstrapConfig::additive(0, 0).validate().is_err());
        assert!(BootstrapConfig::additive(1, 0).with_delta(-1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(mut v in prop::collection::vec(-100.0..100.0f64, 1..50), t1 in 0.001..0.999f64, t2 in 0.001..0.999f64) {
            sort_ascending(&mut v);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(quantile(&v, lo).unwrap() <= quantile(&v, hi).unwrap());
        }

        #[test]
        fn additive_shift_equivariance(res in prop::collection::vec(-10.0..10.0f64, 1..20), pf in -50.0..50.0f64, c in -50.0..50.0f64, seed in any::<u64>()) {
            let a = bootstrap_additive(pf, &res, 64, &mut stream(seed, &[])).unwrap();
            let b = bootstrap_additive(pf + c, &res, 64, &mut stream(seed, &[])).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - x - c).abs() <= 1e-9);
            }
        }

        #[test]
        fn multiplicative_scale_equivariance(r in prop::collection::vec(-0.9..2.0f64, 1..20), pf in 0.1..50.0f64, lambda in 0.01..100.0f64, seed in any::<u64>()) {
            let a = bootstrap_multiplicative(pf, &r, 64, &mut stream(seed, &[])).unwrap();
            let b = bootstrap_multiplicative(pf * lambda, &r, 64, &mut stream(seed, &[])).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - x * lambda).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }
}
