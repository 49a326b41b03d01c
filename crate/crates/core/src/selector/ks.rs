//! Two-sample Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sort_ascending, Scalar};

const SERIES_TERMS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup |F_a − F_b|` over the pooled sample.
    pub statistic: f64,
    /// Asymptotic p-value.
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi theta form converges fast for small arguments.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let s: f64 = (1..=SERIES_TERMS).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=SERIES_TERMS)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

/// KS statistic and asymptotic p-value for samples `a` and `b`.
///
/// Empirical CDFs are right-continuous; the p-value uses the effective size
/// `|a||b| / (|a| + |b|)`.
pub fn ks_two_sample<T: Scalar>(a: &[T], b: &[T]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ks_two_sample needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    sort_ascending(&mut a);
    sort_ascending(&mut b);
    let (n, m) = (a.len(), b.len());
    let (nf, mf) = (n as f64, m as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / nf - j as f64 / mf).abs());
    }
    let ne = nf * mf / (nf + mf);
    Ok(KsResult { statistic: d, p_value: kolmogorov_survival(ne.sqrt() * d) })
}
