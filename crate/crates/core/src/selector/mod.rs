//! Adaptive residual selection.
//!
//! Given the meta information of a future point, a [`SelectorModel`] picks
//! the subset of the residual collection whose error distribution is most
//! relevant. Three variants exist: identity (everything), threshold rules,
//! and a regression tree. Diagnostics based on distance correlation and the
//! two-sample KS test help decide which meta features matter.

mod dcor;
mod diagnostics;
mod ks;
mod rules;
mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backtest::{MetaVector, ResidualCollection};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use dcor::{distance_correlation, subsample_indices, DEFAULT_DCOR_CAP};
pub use diagnostics::{
    dependence_report, selector_sanity_check, DependenceReport, FeatureDependence, RuleCheck, SanityEntry, SanityReport,
};
pub use ks::{kolmogorov_survival, ks_two_sample, KsResult};
pub use rules::{Comparison, Predicate};
pub use tree::{Node, RegressionTree};

/// Default minimum subset size before falling back to the full collection.
pub const DEFAULT_N_MIN: usize = 30;

/// A named meta feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Horizon,
    SplitPoint,
    TargetTime,
    Forecast,
    Observed,
    Extra(String),
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Horizon => f.write_str("horizon"),
            Feature::SplitPoint => f.write_str("split_point"),
            Feature::TargetTime => f.write_str("target_time"),
            Feature::Forecast => f.write_str("forecast"),
            Feature::Observed => f.write_str("observed"),
            Feature::Extra(n) => write!(f, "extra.{n}"),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "horizon" | "h" => Feature::Horizon,
            "split_point" | "j" => Feature::SplitPoint,
            "target_time" | "t" => Feature::TargetTime,
            "forecast" => Feature::Forecast,
            "observed" => Feature::Observed,
            other => match other.strip_prefix("extra.") {
                Some(n) if !n.is_empty() => Feature::Extra(n.to_string()),
                _ => return Err(Error::UnknownFeature(other.to_string())),
            },
        })
    }
}

impl Serialize for Feature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Anything that can resolve meta features.
pub trait MetaSource<T> {
    fn feature(&self, f: &Feature) -> Option<T>;
}

impl<T: Scalar> MetaSource<T> for MetaVector<T> {
    fn feature(&self, f: &Feature) -> Option<T> {
        Some(match f {
            Feature::Horizon => T::of_usize(self.horizon),
            Feature::SplitPoint => T::of(self.split_point as f64),
            Feature::TargetTime => T::of(self.target_time as f64),
            Feature::Forecast => self.forecast,
            Feature::Observed => self.observed,
            Feature::Extra(n) => return self.extra.get(n).copied(),
        })
    }
}

/// Meta information of a point to be forecast. Unlike [`MetaVector`] it has
/// no observed response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FutureMeta<T> {
    pub series_id: String,
    pub origin: i64,
    pub horizon: usize,
    pub forecast: T,
    pub extra: BTreeMap<String, T>,
}

impl<T: Scalar> FutureMeta<T> {
    pub fn new(series_id: impl Into<String>, origin: i64, horizon: usize, forecast: T) -> Self {
        Self { series_id: series_id.into(), origin, horizon, forecast, extra: BTreeMap::new() }
    }

    pub fn with_extra(mut self, name: impl Into<String>, value: T) -> Self {
        self.extra.insert(name.into(), value);
        self
    }

    pub fn target_time(&self) -> i64 {
        self.origin + self.horizon as i64
    }
}

impl<T: Scalar> MetaSource<T> for FutureMeta<T> {
    fn feature(&self, f: &Feature) -> Option<T> {
        Some(match f {
            Feature::Horizon => T::of_usize(self.horizon),
            Feature::SplitPoint => T::of(self.origin as f64),
            Feature::TargetTime => T::of(self.target_time() as f64),
            Feature::Forecast => self.forecast,
            Feature::Observed => return None,
            Feature::Extra(n) => return self.extra.get(n).copied(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", bound = "T: Scalar")]
pub enum SelectorVariant<T> {
    Identity,
    Rules { rules: Vec<Predicate<T>> },
    Tree { tree: RegressionTree<T> },
}

/// Indices into a residual collection chosen for one future point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    /// The selector's own choice had fewer than `n_min` records and the full
    /// collection was used instead.
    pub fallback: bool,
}

/// Fitted residual selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SelectorModel<T> {
    pub variant: SelectorVariant<T>,
    pub n_min: usize,
}

impl<T: Scalar> SelectorModel<T> {
    pub fn identity() -> Self {
        Self { variant: SelectorVariant::Identity, n_min: DEFAULT_N_MIN }
    }

    pub fn rules(rules: Vec<Predicate<T>>) -> Self {
        Self { variant: SelectorVariant::Rules { rules }, n_min: DEFAULT_N_MIN }
    }

    pub fn tree(tree: RegressionTree<T>) -> Self {
        Self { variant: SelectorVariant::Tree { tree }, n_min: DEFAULT_N_MIN }
    }

    pub fn with_n_min(mut self, n_min: usize) -> Self {
        self.n_min = n_min.max(1);
        self
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.variant, SelectorVariant::Identity)
    }

    /// Features the selector needs from a future point.
    pub fn referenced_features(&self) -> Vec<Feature> {
        let mut f: Vec<Feature> = match &self.variant {
            SelectorVariant::Identity => Vec::new(),
            SelectorVariant::Rules { rules } => rules.iter().map(|r| r.feature().clone()).collect(),
            SelectorVariant::Tree { tree } => tree.features().to_vec(),
        };
        f.sort();
        f.dedup();
        f
    }

    /// True when the selector splits on the horizon and `future` lies beyond
    /// every horizon seen in `coll`.
    pub fn extrapolates(&self, coll: &ResidualCollection<T>, future: &FutureMeta<T>) -> bool {
        !self.is_identity()
            && future.horizon > coll.max_horizon()
            && self.referenced_features().contains(&Feature::Horizon)
    }

    /// Future points with equal keys receive identical selections.
    pub fn selection_key(&self, coll: &ResidualCollection<T>, future: &FutureMeta<T>) -> Result<Vec<usize>> {
        if self.extrapolates(coll, future) {
            return Ok(vec![usize::MAX]);
        }
        match &self.variant {
            SelectorVariant::Identity => Ok(Vec::new()),
            SelectorVariant::Rules { rules } => rules
                .iter()
                .map(|r| r.eval(future).map(usize::from).ok_or_else(|| Error::UnknownFeature(r.feature().to_string())))
                .collect(),
            SelectorVariant::Tree { tree } => Ok(vec![tree.route(future)?]),
        }
    }

    fn raw_select(&self, coll: &ResidualCollection<T>, future: &FutureMeta<T>) -> Result<Vec<usize>> {
        match &self.variant {
            SelectorVariant::Identity => Ok((0..coll.len()).collect()),
            SelectorVariant::Rules { rules } => {
                let signature = rules
                    .iter()
                    .map(|r| r.eval(future).ok_or_else(|| Error::UnknownFeature(r.feature().to_string())))
                    .collect::<Result<Vec<bool>>>()?;
                Ok(coll
                    .records()
                    .iter()
                    .enumerate()
                    .filter(|(_, rec)| rules.iter().zip(&signature).all(|(r, &want)| r.eval(&rec.meta) == Some(want)))
                    .map(|(i, _)| i)
                    .collect())
            }
            SelectorVariant::Tree { tree } => {
                if tree.n_records() != coll.len() {
                    return Err(Error::InvalidInput(format!(
                        "tree selector was fitted on {} records, collection has {}",
                        tree.n_records(),
                        coll.len()
                    )));
                }
                Ok(tree.leaf_indices(tree.route(future)?).to_vec())
            }
        }
    }

    /// Selects the residuals relevant to `future`.
    ///
    /// Rules select the records that agree with the future point on every
    /// predicate (each predicate evaluates to the same truth value on both).
    /// The tree selects the records sharing the future point's leaf.
    ///
    /// Horizons beyond the collection's largest horizon fall back to the full
    /// collection when the selector uses the horizon.
    pub fn select(&self, coll: &ResidualCollection<T>, future: &FutureMeta<T>) -> Result<Selection> {
        if self.extrapolates(coll, future) {
            return Ok(Selection { indices: (0..coll.len()).collect(), fallback: true });
        }
        let indices = self.raw_select(coll, future)?;
        if !self.is_identity() && indices.len() < self.n_min && indices.len() < coll.len() {
            return Ok(Selection { indices: (0..coll.len()).collect(), fallback: true });
        }
        Ok(Selection { indices, fallback: false })
    }
}

fn default_max_depth() -> usize {
    3
}
fn default_min_leaf() -> usize {
    30
}
fn default_n_min() -> usize {
    DEFAULT_N_MIN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    #[default]
    Identity,
    Rules,
    Tree,
}

/// Selector configuration (`selector.*` keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectorConfig {
    #[serde(default)]
    pub variant: SelectorKind,
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    #[serde(default)]
    pub rules: Vec<String>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            variant: SelectorKind::Identity,
            features: Vec::new(),
            max_depth: default_max_depth(),
            min_leaf: default_min_leaf(),
            n_min: default_n_min(),
            rules: Vec::new(),
        }
    }
}

impl SelectorConfig {
    pub fn rules(rules: &[&str]) -> Self {
        Self { variant: SelectorKind::Rules, rules: rules.iter().map(|s| s.to_string()).collect(), ..Self::default() }
    }

    pub fn tree(features: &[&str], max_depth: usize, min_leaf: usize) -> Self {
        Self {
            variant: SelectorKind::Tree,
            features: features.iter().map(|s| s.to_string()).collect(),
            max_depth,
            min_leaf,
            ..Self::default()
        }
    }

    pub fn with_n_min(mut self, n_min: usize) -> Self {
        self.n_min = n_min;
        self
    }

    /// Builds (and for the tree variant, fits) the selector on `coll`.
    pub fn fit<T: Scalar>(&self, coll: &ResidualCollection<T>) -> Result<SelectorModel<T>> {
        let model = match self.variant {
            SelectorKind::Identity => SelectorModel::identity(),
            SelectorKind::Rules => {
                let rules = self.rules.iter().map(|r| r.parse()).collect::<Result<Vec<Predicate<T>>>>()?;
                if rules.is_empty() {
                    return Err(Error::InvalidInput("rules selector needs at least one rule".into()));
                }
                SelectorModel::rules(rules)
            }
            SelectorKind::Tree => {
                let features = self.features.iter().map(|f| f.parse()).collect::<Result<Vec<Feature>>>()?;
                fit_tree_selector(coll, &features, self.max_depth, self.min_leaf)?
            }
        };
        Ok(model.with_n_min(self.n_min))
    }
}

/// Fits a regression-tree selector on the collection's meta features.
pub fn fit_tree_selector<T: Scalar>(
    coll: &ResidualCollection<T>,
    features: &[Feature],
    max_depth: usize,
    min_leaf: usize,
) -> Result<SelectorModel<T>> {
    Ok(SelectorModel::tree(RegressionTree::fit(coll, features, max_depth, min_leaf)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{Provenance, ResidualRecord};
    use proptest::prelude::*;

    fn horizon_coll(per_h: usize) -> ResidualCollection<f64> {
        let mut recs = Vec::new();
        for h in 1..=10usize {
            for k in 0..per_h {
                let eps = if h > 5 { 10.0 } else { -10.0 };
                recs.push(ResidualRecord::new(format!("s{k}"), 100, 100 + h as i64, 50.0, 50.0 + eps).unwrap());
            }
        }
        ResidualCollection::new(recs, Provenance::manual("horizon"))
    }

    #[test]
    fn feature_names_round_trip() {
        for name in ["horizon", "split_point", "target_time", "forecast", "observed", "extra.price"] {
            let f: Feature = name.parse().unwrap();
            assert_eq!(f.to_string(), name);
        }
        assert!("price".parse::<Feature>().is_err());
    }

    #[test]
    fn identity_returns_everything() {
        let c = horizon_coll(3);
        let s = SelectorModel::identity().select(&c, &FutureMeta::new("s0", 0, 1, 1.0)).unwrap();
        assert_eq!(s.indices, (0..c.len()).collect::<Vec<_>>());
        assert!(!s.fallback);
    }

    #[test]
    fn horizon_rule_selects_matching_records() {
        let c = horizon_coll(4);
        let sel = SelectorModel::rules(vec!["horizon <= 3".parse().unwrap()]).with_n_min(1);
        let s = sel.select(&c, &FutureMeta::new("s0", 0, 2, 1.0)).unwrap();
        assert_eq!(s.indices.len(), 12);
        assert!(s.indices.iter().all(|&i| c.records()[i].meta.horizon <= 3));
        let far = sel.select(&c, &FutureMeta::new("s0", 0, 7, 1.0)).unwrap();
        assert!(far.indices.iter().all(|&i| c.records()[i].meta.horizon > 3));
    }

    #[test]
    fn small_selection_falls_back() {
        let c = horizon_coll(4);
        let sel = SelectorModel::rules(vec!["horizon <= 1".parse().unwrap()]).with_n_min(30);
        let s = sel.select(&c, &FutureMeta::new("s0", 0, 1, 1.0)).unwrap();
        assert!(s.fallback);
        assert_eq!(s.indices.len(), c.len());
    }

    #[test]
    fn missing_future_feature_is_an_error() {
        let c = horizon_coll(1);
        let sel = SelectorModel::rules(vec!["extra.price < 3".parse().unwrap()]);
        assert!(matches!(sel.select(&c, &FutureMeta::new("s0", 0, 1, 1.0)), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn tree_splits_on_horizon_between_five_and_six() {
        let c = horizon_coll(5);
        let sel = fit_tree_selector(&c, &[Feature::Horizon], 1, 1).unwrap().with_n_min(1);
        let SelectorVariant::Tree { tree } = &sel.variant else { panic!("expected tree") };
        match &tree.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!(*threshold > 5.0 && *threshold <= 6.0);
            }
            leaf => panic!("expected split, got {leaf:?}"),
        }
        let s = sel.select(&c, &FutureMeta::new("x", 0, 8, 0.0)).unwrap();
        assert_eq!(s.indices.len(), 25);
        assert!(s.indices.iter().all(|&i| c.records()[i].eps == 10.0));
    }

    #[test]
    fn config_builds_each_variant() {
        let c = horizon_coll(5);
        assert!(SelectorConfig::default().fit(&c).unwrap().is_identity());
        let r = SelectorConfig::rules(&["horizon <= 5"]).fit(&c).unwrap();
        assert_eq!(r.referenced_features(), vec![Feature::Horizon]);
        let t = SelectorConfig::tree(&["horizon", "forecast"], 2, 5).fit(&c).unwrap();
        assert!(matches!(t.variant, SelectorVariant::Tree { .. }));
        assert!(SelectorConfig::tree(&["observed"], 2, 5).fit(&c).is_err());
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<SelectorModel<f64>>(&json).unwrap(), t);
    }

    proptest! {
        #[test]
        fn tree_routing_is_total_and_selection_is_a_subset(
            eps in prop::collection::vec(-5.0..5.0f64, 20..60),
            h in 0usize..20,
            fc in -100.0..100.0f64,
        ) {
            let recs = eps.iter().enumerate().map(|(k, &e)| {
                ResidualRecord::new("s", 0, (k % 7 + 1) as i64, k as f64, k as f64 + e).unwrap()
            }).collect();
            let c = ResidualCollection::new(recs, Provenance::manual("p"));
            let sel = fit_tree_selector(&c, &[Feature::Horizon, Feature::Forecast], 3, 3).unwrap().with_n_min(1);
            let s = sel.select(&c, &FutureMeta::new("s", 0, h, fc)).unwrap();
            prop_assert!(!s.indices.is_empty());
            prop_assert!(s.indices.iter().all(|&i| i < c.len()));
            let SelectorVariant::Tree { tree } = &sel.variant else { unreachable!() };
            let total: usize = tree.leaves().iter().map(|&l| tree.leaf_indices(l).len()).sum();
            prop_assert_eq!(total, c.len());
        }
    }
}
