//! Threshold predicates over meta features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Feature, MetaSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison<T> {
    Lt(T),
    Le(T),
    Gt(T),
    Ge(T),
    /// Inclusive on both ends.
    InRange(T, T),
}

/// `field op threshold`, e.g. `horizon <= 3` or `forecast in [10, 20]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate<T> {
    feature: Feature,
    comparison: Comparison<T>,
}

impl<T: Scalar> Predicate<T> {
    pub fn new(feature: Feature, comparison: Comparison<T>) -> Result<Self> {
        if feature == Feature::Observed {
            return Err(Error::InvalidInput(
                "rules cannot reference `observed`: it is unknown for future points".into(),
            ));
        }
        if let Comparison::InRange(lo, hi) = comparison {
            if !(lo <= hi) {
                return Err(Error::InvalidInput(format!("empty range [{lo}, {hi}]")));
            }
        }
        Ok(Self { feature, comparison })
    }

    pub fn feature(&self) -> &Feature {
        &self.feature
    }

    pub fn holds(&self, v: T) -> bool {
        match self.comparison {
            Comparison::Lt(c) => v < c,
            Comparison::Le(c) => v <= c,
            Comparison::Gt(c) => v > c,
            Comparison::Ge(c) => v >= c,
            Comparison::InRange(lo, hi) => v >= lo && v <= hi,
        }
    }

    /// `None` when the source lacks the feature.
    pub fn eval(&self, meta: &impl MetaSource<T>) -> Option<bool> {
        meta.feature(&self.feature).map(|v| self.holds(v))
    }
}

impl<T: Scalar> fmt::Display for Predicate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.comparison {
            Comparison::Lt(c) => write!(f, "{} < {c}", self.feature),
            Comparison::Le(c) => write!(f, "{} <= {c}", self.feature),
            Comparison::Gt(c) => write!(f, "{} > {c}", self.feature),
            Comparison::Ge(c) => write!(f, "{} >= {c}", self.feature),
            Comparison::InRange(lo, hi) => write!(f, "{} in [{lo}, {hi}]", self.feature),
        }
    }
}

impl<T: Scalar> FromStr for Predicate<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse rule {s:?}; expected `field op threshold`"));
        let num = |v: &str| v.trim().parse::<T>().map_err(|_| bad());
        let s = s.trim();
        if let Some((field, range)) = s.split_once(" in ") {
            let inner = range.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(bad)?;
            let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
            return Predicate::new(field.trim().parse()?, Comparison::InRange(num(lo)?, num(hi)?));
        }
        // Longest operators first so `<=` is not read as `<`.
        for (op, ctor) in [
            ("<=", Comparison::Le as fn(T) -> Comparison<T>),
            ("≤", Comparison::Le),
            (">=", Comparison::Ge),
            ("≥", Comparison::Ge),
            ("<", Comparison::Lt),
            (">", Comparison::Gt),
        ] {
            if let Some((field, value)) = s.split_once(op) {
                return Predicate::new(field.trim().parse()?, ctor(num(value)?));
            }
        }
        Err(bad())
    }
}

impl<T: Scalar> Serialize for Predicate<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Predicate<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
