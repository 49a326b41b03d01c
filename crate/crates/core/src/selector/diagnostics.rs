//! Dependence diagnostics and selector sanity checks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{distance_correlation, ks_two_sample, subsample_indices, Feature, MetaSource, Predicate, SelectorModel, SelectorVariant};
use crate::backtest::ResidualCollection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDependence {
    pub feature: String,
    pub dcor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: String,
    pub n_selected: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Distance correlation of each meta feature with the residuals, sorted
/// from most to least dependent, plus optional KS checks of candidate rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub n_records: usize,
    pub n_used: usize,
    pub subsampled: bool,
    pub cap: usize,
    pub seed: u64,
    pub features: Vec<FeatureDependence>,
    #[serde(default)]
    pub rule_checks: Vec<RuleCheck>,
}

impl DependenceReport {
    pub fn top(&self) -> Option<&FeatureDependence> {
        self.features.first()
    }

    /// Adds a KS comparison of (records satisfying the rule) vs (all records)
    /// for each candidate rule.
    pub fn with_rule_checks<T: Scalar>(mut self, coll: &ResidualCollection<T>, rules: &[Predicate<T>]) -> Result<Self> {
        let eps = coll.eps();
        for rule in rules {
            let selected: Vec<T> = coll
                .records()
                .iter()
                .zip(&eps)
                .filter_map(|(r, &e)| match rule.eval(&r.meta) {
                    Some(true) => Some(Ok(e)),
                    Some(false) => None,
                    None => Some(Err(Error::UnknownFeature(rule.feature().to_string()))),
                })
                .collect::<Result<_>>()?;
            let (statistic, p_value) = if selected.is_empty() {
                (0.0, 1.0)
            } else {
                let ks = ks_two_sample(&selected, &eps)?;
                (ks.statistic, ks.p_value)
            };
            self.rule_checks.push(RuleCheck { rule: rule.to_string(), n_selected: selected.len(), statistic, p_value });
        }
        Ok(self)
    }
}

/// Ranks `features` by their distance correlation with `eps`.
///
/// All features share one seeded subsample when the collection exceeds `cap`.
pub fn dependence_report<T: Scalar>(
    coll: &ResidualCollection<T>,
    features: &[Feature],
    cap: usize,
    seed: u64,
) -> Result<DependenceReport> {
    if coll.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "dependence report needs at least 2 residuals, got {}",
            coll.len()
        )));
    }
    let cap = cap.max(2);
    let sub = subsample_indices(coll.len(), cap, seed);
    let rows: Vec<usize> = sub.clone().unwrap_or_else(|| (0..coll.len()).collect());
    let records = coll.records();
    let eps: Vec<T> = rows.iter().map(|&i| records[i].eps).collect();
    let columns = features
        .iter()
        .map(|f| {
            rows.iter()
                .map(|&i| records[i].meta.feature(f).ok_or_else(|| Error::UnknownFeature(f.to_string())))
                .collect::<Result<Vec<T>>>()
                .map(|c| (f, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = columns
        .par_iter()
        .map(|(f, col)| {
            let d = distance_correlation(col, &eps, usize::MAX, seed)?;
            Ok(FeatureDependence { feature: f.to_string(), dcor: d.as_f64() })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.dcor.total_cmp(&a.dcor).then_with(|| a.feature.cmp(&b.feature)));
    Ok(DependenceReport {
        n_records: coll.len(),
        n_used: rows.len(),
        subsampled: sub.is_some(),
        cap,
        seed,
        features: out,
        rule_checks: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityEntry {
    /// Human readable description of the group of future points.
    pub group: String,
    pub n_selected: usize,
    pub fallback: bool,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub alpha: f64,
    pub entries: Vec<SanityEntry>,
}

impl SanityReport {
    pub fn any_significant(&self) -> bool {
        self.entries.iter().any(|e| e.significant)
    }
}

const SANITY_ALPHA: f64 = 0.05;

fn entry<T: Scalar>(group: String, selected: &[usize], fallback: bool, eps: &[T]) -> Result<SanityEntry> {
    let sub: Vec<T> = selected.iter().map(|&i| eps[i]).collect();
    let (statistic, p_value) = if sub.is_empty() || fallback {
        (0.0, 1.0)
    } else {
        let ks = ks_two_sample(&sub, eps)?;
        (ks.statistic, ks.p_value)
    };
    Ok(SanityEntry { group, n_selected: sub.len(), fallback, statistic, p_value, significant: p_value < SANITY_ALPHA })
}

/// Compares the residuals each selection would return against the full
/// collection with a two-sample KS test.
///
/// Representative future points are taken from the collection itself: one
/// per tree leaf, or one per distinct rule truth pattern. The identity
/// selector yields a single entry with `D = 0`, `p = 1`.
pub fn selector_sanity_check<T: Scalar>(sel: &SelectorModel<T>, coll: &ResidualCollection<T>) -> Result<SanityReport> {
    let eps = coll.eps();
    let n = coll.len();
    let finish = |selected: Vec<usize>| {
        let fallback = selected.len() < sel.n_min && selected.len() < n;
        if fallback {
            ((0..n).collect(), true)
        } else {
            (selected, false)
        }
    };
    let mut entries = Vec::new();
    match &sel.variant {
        SelectorVariant::Identity => {
            entries.push(SanityEntry {
                group: "all".into(),
                n_selected: n,
                fallback: false,
                statistic: 0.0,
                p_value: 1.0,
                significant: false,
            });
        }
        SelectorVariant::Rules { rules } => {
            let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
            for (i, r) in coll.records().iter().enumerate() {
                let sig = rules
                    .iter()
                    .map(|p| p.eval(&r.meta).ok_or_else(|| Error::UnknownFeature(p.feature().to_string())))
                    .collect::<Result<Vec<bool>>>()?;
                groups.entry(sig).or_default().push(i);
            }
            for (sig, members) in groups {
                let label = rules
                    .iter()
                    .zip(&sig)
                    .map(|(p, &b)| if b { p.to_string() } else { format!("not ({p})") })
                    .collect::<Vec<_>>()
                    .join(" and ");
                let (sel_idx, fb) = finish(members);
                entries.push(entry(label, &sel_idx, fb, &eps)?);
            }
        }
        SelectorVariant::Tree { tree } => {
            if tree.n_records() != n {
                return Err(Error::InvalidInput(format!(
                    "tree selector was fitted on {} records, collection has {n}",
                    tree.n_records()
                )));
            }
            for leaf in tree.leaves() {
                let (sel_idx, fb) = finish(tree.leaf_indices(leaf).to_vec());
                entries.push(entry(tree.describe_leaf(leaf), &sel_idx, fb, &eps)?);
            }
        }
    }
    Ok(SanityReport { alpha: SANITY_ALPHA, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{Provenance, ResidualRecord};
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    fn hetero(n_per_h: usize) -> ResidualCollection<f64> {
        let mut rng = stream(11, &[]);
        let mut recs = Vec::new();
        for h in 1..=8usize {
            for k in 0..n_per_h {
                let z: f64 = StandardNormal.sample(&mut rng);
                let fc = 100.0 + k as f64;
                recs.push(ResidualRecord::new("s", k as i64, k as i64 + h as i64, fc, fc + h as f64 * z).unwrap());
            }
        }
        ResidualCollection::new(recs, Provenance::manual("hetero"))
    }

    #[test]
    fn zero_residuals_have_zero_dependence() {
        let recs = (1..=20).map(|h| ResidualRecord::new("s", 0, h, 1.0, 1.0).unwrap()).collect();
        let c = ResidualCollection::new(recs, Provenance::manual("zero"));
        let r = dependence_report(&c, &[Feature::Horizon, Feature::Forecast], 100, 1).unwrap();
        assert!(r.features.iter().all(|f| f.dcor == 0.0));
    }

    #[test]
    fn horizon_ranks_first_on_heteroscedastic_residuals() {
        let c = hetero(60);
        let r = dependence_report(&c, &[Feature::Forecast, Feature::SplitPoint, Feature::Horizon], 300, 3).unwrap();
        assert_eq!(r.top().unwrap().feature, "horizon");
        assert!(r.subsampled);
        assert_eq!(r.n_used, 300);
        let again = dependence_report(&c, &[Feature::Forecast, Feature::SplitPoint, Feature::Horizon], 300, 3).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn single_feature_gives_one_entry_and_unknown_errors() {
        let c = hetero(5);
        assert_eq!(dependence_report(&c, &[Feature::Horizon], 100, 0).unwrap().features.len(), 1);
        let bad = dependence_report(&c, &[Feature::Extra("nope".into())], 100, 0);
        assert!(matches!(bad, Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn identity_sanity_is_trivial() {
        let c = hetero(10);
        let r = selector_sanity_check(&SelectorModel::identity(), &c).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].statistic, 0.0);
        assert_eq!(r.entries[0].p_value, 1.0);
    }

    #[test]
    fn horizon_rule_is_rejected_and_all_matching_rule_is_not() {
        let c = hetero(80);
        let sel = SelectorModel::rules(vec!["horizon <= 2".parse().unwrap()]);
        let r = selector_sanity_check(&sel, &c).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert!(r.any_significant());

        let all = SelectorModel::rules(vec!["horizon >= 1".parse().unwrap()]);
        let r = selector_sanity_check(&all, &c).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].statistic, 0.0);
    }

    #[test]
    fn rule_checks_report_ks() {
        let c = hetero(80);
        let rules: Vec<Predicate<f64>> = vec!["horizon <= 2".parse().unwrap(), "horizon >= 1".parse().unwrap()];
        let r = dependence_report(&c, &[Feature::Horizon], 2000, 0).unwrap().with_rule_checks(&c, &rules).unwrap();
        assert_eq!(r.rule_checks.len(), 2);
        assert!(r.rule_checks[0].p_value < 0.05);
        assert_eq!(r.rule_checks[1].statistic, 0.0);
        assert!(r.rule_checks.iter().all(|k| (0.0..=1.0).contains(&k.statistic)));
    }
}
