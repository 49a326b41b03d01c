//! Covariate perturbation applied to future covariates during backtest.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Historic estimates of covariates, keyed by `(series, time, covariate)`.
///
/// File format: CSV with columns `series_id, time, covariate, value`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricEstimates<T> {
    source: PathBuf,
    values: HashMap<(String, i64, String), T>,
}

impl<T: Scalar> HistoricEstimates<T> {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("historic estimates missing column {name:?}")))
        };
        let (ci, ct, cc, cv) = (col("series_id")?, col("time")?, col("covariate")?, col("value")?);
        let mut values = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            let t: i64 = rec[ct]
                .parse()
                .map_err(|_| Error::Parse { row, message: format!("time {:?} is not an integer", &rec[ct]) })?;
            let v: T = rec[cv]
                .parse()
                .map_err(|_| Error::Parse { row, message: format!("value {:?} is not a number", &rec[cv]) })?;
            values.insert((rec[ci].to_string(), t, rec[cc].to_string()), v);
        }
        Ok(Self { source: path.to_path_buf(), values })
    }

    pub fn from_map(source: impl Into<PathBuf>, values: HashMap<(String, i64, String), T>) -> Self {
        Self { source: source.into(), values }
    }

    pub fn get(&self, series: &str, time: i64, covariate: &str) -> Option<T> {
        self.values.get(&(series.to_string(), time, covariate.to_string())).copied()
    }
}

/// How future covariates are altered during backtest to reflect that they
/// must themselves be estimated at forecast time.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CovariatePerturbation<T> {
    #[default]
    None,
    /// Adds `N(0, scale²)` noise to each named covariate.
    GaussianNoise { scales: BTreeMap<String, T> },
    /// Replaces the named covariates with values from an estimates file.
    HistoricEstimates { targets: Vec<String>, estimates: Arc<HistoricEstimates<T>> },
}

impl<T: Scalar> CovariatePerturbation<T> {
    pub fn validate(&self, covariate_names: &[String]) -> Result<()> {
        let known = |n: &String| covariate_names.contains(n);
        match self {
            CovariatePerturbation::None => Ok(()),
            CovariatePerturbation::GaussianNoise { scales } => {
                for (name, &s) in scales {
                    if !known(name) {
                        return Err(Error::UnknownFeature(name.clone()));
                    }
                    if !(s >= T::zero()) || !s.is_finite() {
                        return Err(Error::InvalidInput(format!("noise scale for {name:?} must be finite and >= 0")));
                    }
                }
                Ok(())
            }
            CovariatePerturbation::HistoricEstimates { targets, .. } => match targets.iter().find(|n| !known(n)) {
                Some(n) => Err(Error::UnknownFeature(n.clone())),
                None => Ok(()),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            CovariatePerturbation::None => "none".into(),
            CovariatePerturbation::GaussianNoise { scales } => {
                let parts: Vec<String> = scales.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!("gaussian_noise({})", parts.join(","))
            }
            CovariatePerturbation::HistoricEstimates { targets, estimates } => {
                format!("historic_estimates({}; {})", estimates.source.display(), targets.join(","))
            }
        }
    }
}

/// Returns the perturbed covariate vector for `(series, t)`.
pub fn perturb_covariates<T: Scalar, R: Rng + ?Sized>(
    x: &[T],
    perturbation: &CovariatePerturbation<T>,
    covariate_names: &[String],
    series: &str,
    t: i64,
    rng: &mut R,
) -> Result<Vec<T>> {
    let mut out = x.to_vec();
    match perturbation {
        CovariatePerturbation::None => {}
        CovariatePerturbation::GaussianNoise { scales } => {
            for (k, name) in covariate_names.iter().enumerate() {
                if let Some(&scale) = scales.get(name) {
                    let z: f64 = rng.sample(StandardNormal);
                    out[k] += scale * T::of(z);
                }
            }
        }
        CovariatePerturbation::HistoricEstimates { targets, estimates } => {
            for name in targets {
                let k = covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
                out[k] = estimates.get(series, t, name).ok_or_else(|| Error::Lookup {
                    series: series.to_string(),
                    time: t,
                    covariate: name.clone(),
                })?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn names() -> Vec<String> {
        vec!["price".into(), "promo".into()]
    }

    #[test]
    fn none_is_identity() {
        let x = [3.0, 1.0];
        let out = perturb_covariates(&x, &CovariatePerturbation::None, &names(), "a", 1, &mut stream(1, &[])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn zero_scale_leaves_vector_unchanged() {
        let p = CovariatePerturbation::GaussianNoise { scales: BTreeMap::from([("price".to_string(), 0.0)]) };
        let x = [3.0, 1.0];
        assert_eq!(perturb_covariates(&x, &p, &names(), "a", 1, &mut stream(9, &[])).unwrap(), x);
    }

    #[test]
    fn seeded_noise_is_reproducible_and_targeted() {
        let p = CovariatePerturbation::GaussianNoise { scales: BTreeMap::from([("price".to_string(), 1.0)]) };
        let x = [3.0_f64, 1.0];
        let a = perturb_covariates(&x, &p, &names(), "a", 1, &mut stream(4, &[2])).unwrap();
        let b = perturb_covariates(&x, &p, &names(), "a", 1, &mut stream(4, &[2])).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_ne!(a[0], 3.0);
        assert_eq!(a[1], 1.0);
    }

    #[test]
    fn historic_estimates_lookup() {
        let est = HistoricEstimates::from_map("mem", HashMap::from([(("a".to_string(), 5, "price".to_string()), 9.5)]));
        let p = CovariatePerturbation::HistoricEstimates { targets: vec!["price".into()], estimates: Arc::new(est) };
        let mut rng = stream(0, &[]);
        assert_eq!(perturb_covariates(&[1.0, 2.0], &p, &names(), "a", 5, &mut rng).unwrap(), vec![9.5, 2.0]);
        assert!(matches!(perturb_covariates(&[1.0, 2.0], &p, &names(), "a", 6, &mut rng), Err(Error::Lookup { .. })));
    }

    #[test]
    fn validation_rejects_unknown_names() {
        let p = CovariatePerturbation::GaussianNoise { scales: BTreeMap::from([("cost".to_string(), 1.0)]) };
        assert!(p.validate(&names()).is_err());
    }
}
