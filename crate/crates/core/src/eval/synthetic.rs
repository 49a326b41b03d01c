//! Synthetic panels with closed-form conditional quantiles.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Panel, Series};
use crate::error::{Error, Result};
use crate::forecasters::Offset;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `Y = μ + σ·z`.
    AdditiveGaussian,
    /// `Y = μ·(1 + σ·z)`.
    MultiplicativeGaussian,
    /// Random walk with drift: `Y_t = Y_{t−1} + drift + σ·z`. The `h`-step
    /// forecast error has variance `h·σ²`.
    HorizonHeteroscedastic,
    /// Additive data meant to be paired with a forecaster biased by `bias`.
    BiasedPfProbe,
}

fn default_period() -> usize {
    12
}
fn default_level_range() -> (f64, f64) {
    (20.0, 200.0)
}

/// Synthetic panel parameters.
///
/// The mean is `μ_{i,t} = level_i + trend·t/length + season·sin(2πt/period + φ_i)`
/// with `level_i` log-uniform over `level_range`. The panel carries the
/// covariates `level`, `trend` (`t/length`), `season` (the sine term) and
/// `noise_covariates` pure-noise columns `noise_k`, so a linear model on the
/// covariates can represent `μ` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_series: usize,
    pub length: usize,
    pub noise_kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub trend: f64,
    #[serde(default)]
    pub season: f64,
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default = "default_level_range")]
    pub level_range: (f64, f64),
    /// Per-step drift of the random walk (horizon_heteroscedastic only).
    #[serde(default)]
    pub drift: f64,
    /// Offset `c` of the probe forecaster (biased_pf_probe only).
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise_covariates: usize,
}

impl SyntheticSpec {
    pub fn new(kind: NoiseKind, n_series: usize, length: usize, sigma: f64, seed: u64) -> Self {
        Self {
            n_series,
            length,
            noise_kind: kind,
            sigma,
            seed,
            trend: 0.0,
            season: 0.0,
            period: default_period(),
            level_range: default_level_range(),
            drift: 0.0,
            bias: 0.0,
            noise_covariates: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.length < 2 {
            return Err(Error::InvalidInput("synthetic panel needs >= 1 series and >= 2 points".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.period == 0 {
            return Err(Error::InvalidInput("period must be >= 1".into()));
        }
        let (lo, hi) = self.level_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidInput(format!("level_range must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Closed-form conditional quantiles of a synthetic panel.
pub trait QuantileOracle: Send + Sync {
    /// `τ`-quantile of `Y` at `origin + horizon` given data up to `origin`.
    fn quantile(&self, series_id: &str, origin: i64, horizon: usize, tau: f64) -> Option<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    kind: NoiseKind,
    sigma: f64,
    drift: f64,
    /// Per series: start time, mean path and observed path.
    paths: BTreeMap<String, (i64, Vec<f64>, Vec<f64>)>,
}

/// Standard normal quantile.
pub fn normal_quantile(tau: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(tau)
}

impl SyntheticOracle {
    /// Conditional mean of `Y` at `origin + horizon`.
    pub fn mean(&self, series_id: &str, origin: i64, horizon: usize) -> Option<f64> {
        let (start, mu, y) = self.paths.get(series_id)?;
        let at = |v: &Vec<f64>, t: i64| usize::try_from(t - start).ok().and_then(|k| v.get(k).copied());
        match self.kind {
            NoiseKind::HorizonHeteroscedastic => Some(at(y, origin)? + horizon as f64 * self.drift),
            _ => at(mu, origin + horizon as i64),
        }
    }
}

impl QuantileOracle for SyntheticOracle {
    fn quantile(&self, series_id: &str, origin: i64, horizon: usize, tau: f64) -> Option<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return None;
        }
        let m = self.mean(series_id, origin, horizon)?;
        let z = normal_quantile(tau);
        Some(match self.kind {
            NoiseKind::AdditiveGaussian | NoiseKind::BiasedPfProbe => m + self.sigma * z,
            NoiseKind::MultiplicativeGaussian => m * (1.0 + self.sigma * z),
            NoiseKind::HorizonHeteroscedastic => m + self.sigma * (horizon as f64).sqrt() * z,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub panel: Panel<f64>,
    pub oracle: SyntheticOracle,
}

impl SyntheticData {
    /// Wraps `inner` so that every forecast is shifted by `bias`.
    pub fn probe_forecaster<F>(&self, inner: F) -> Offset<F, f64> {
        Offset::new(inner, self.spec.bias)
    }
}

/// Generates the panel and its quantile oracle. Same spec, same panel.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut names = vec!["level".to_string(), "trend".into(), "season".into()];
    names.extend((0..spec.noise_covariates).map(|k| format!("noise_{k}")));
    let (lo, hi) = spec.level_range;
    let n = spec.length;
    let mut series = Vec::with_capacity(spec.n_series);
    let mut paths = BTreeMap::new();
    for i in 0..spec.n_series {
        let mut rng = stream(spec.seed, &[i as u64]);
        let level = (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
        let phase = TAU * rng.random::<f64>();
        let id = format!("s{i:03}");
        let mut mu = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut cov = Vec::with_capacity(n);
        for t in 0..n {
            let trend = t as f64 / n as f64;
            let season = (TAU * t as f64 / spec.period as f64 + phase).sin();
            let m = level + spec.trend * trend + spec.season * season;
            let z: f64 = StandardNormal.sample(&mut rng);
            let value = match spec.noise_kind {
                NoiseKind::AdditiveGaussian | NoiseKind::BiasedPfProbe => m + spec.sigma * z,
                NoiseKind::MultiplicativeGaussian => {
                    if !(m > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "multiplicative noise needs a positive mean; series {id} has mean {m} at t = {t}"
                        )));
                    }
                    m * (1.0 + spec.sigma * z)
                }
                NoiseKind::HorizonHeteroscedastic => match y.last() {
                    None => level + spec.sigma * z,
                    Some(prev) => prev + spec.drift + spec.sigma * z,
                },
            };
            let mut row = vec![level, trend, season];
            row.extend((0..spec.noise_covariates).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
            mu.push(m);
            y.push(value);
            cov.push(row);
        }
        series.push(Series::new(id.clone(), 0, y.clone(), cov)?);
        paths.insert(id, (0, mu, y));
    }
    let panel = Panel::new(series, names)?;
    let oracle = SyntheticOracle { kind: spec.noise_kind, sigma: spec.sigma, drift: spec.drift, paths };
    Ok(SyntheticData { spec: spec.clone(), panel, oracle })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_oracle_is_mean_plus_scaled_normal_quantile() {
        let mut spec = SyntheticSpec::new(NoiseKind::AdditiveGaussian, 2, 50, 2.0, 1);
        spec.season = 3.0;
        let d = generate_synthetic(&spec).unwrap();
        let m = d.oracle.mean("s001", 10, 3).unwrap();
        let q = d.oracle.quantile("s001", 10, 3, 0.9).unwrap();
        assert!((q - (m + 2.0 * 1.2815515655446004)).abs() < 1e-9);
        assert!(d.oracle.quantile("missing", 10, 3, 0.9).is_none());
    }

    #[test]
    fn tiny_sigma_collapses_to_mean() {
        for kind in [NoiseKind::AdditiveGaussian, NoiseKind::MultiplicativeGaussian] {
            let d = generate_synthetic(&SyntheticSpec::new(kind, 1, 20, 1e-12, 3)).unwrap();
            let m = d.oracle.mean("s000", 5, 2).unwrap();
            for tau in [0.1, 0.5, 0.9] {
                assert!((d.oracle.quantile("s000", 5, 2, tau).unwrap() - m).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = SyntheticSpec::new(NoiseKind::HorizonHeteroscedastic, 3, 40, 1.0, 9);
        assert_eq!(generate_synthetic(&spec).unwrap().panel, generate_synthetic(&spec).unwrap().panel);
        let other = SyntheticSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().panel, generate_synthetic(&other).unwrap().panel);
    }

    #[test]
    fn random_walk_oracle_scales_with_sqrt_horizon() {
        let mut spec = SyntheticSpec::new(NoiseKind::HorizonHeteroscedastic, 1, 30, 1.5, 2);
        spec.drift = 0.5;
        let d = generate_synthetic(&spec).unwrap();
        let y10 = d.panel.series()[0].target_at(10).unwrap();
        let q = d.oracle.quantile("s000", 10, 4, 0.75).unwrap();
        assert!((q - (y10 + 2.0 + 1.5 * 2.0 * normal_quantile(0.75))).abs() < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_multiplicative_mean_and_bad_sigma() {
        let mut spec = SyntheticSpec::new(NoiseKind::MultiplicativeGaussian, 1, 20, 0.1, 0);
        spec.level_range = (1.0, 1.0);
        spec.season = 5.0;
        assert!(generate_synthetic(&spec).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(NoiseKind::AdditiveGaussian, 1, 20, 0.0, 0)).is_err());
    }

    #[test]
    fn empirical_coverage_matches_oracle() {
        let d = generate_synthetic(&SyntheticSpec::new(NoiseKind::MultiplicativeGaussian, 20, 200, 0.1, 5)).unwrap();
        let mut hits = 0;
        let mut n = 0;
        for s in d.panel.series() {
            for t in 1..200 {
                let q = d.oracle.quantile(s.id(), t - 1, 1, 0.8).unwrap();
                hits += usize::from(s.target_at(t).unwrap() <= q);
                n += 1;
            }
        }
        assert!((hits as f64 / n as f64 - 0.8).abs() < 0.02);
    }
}
