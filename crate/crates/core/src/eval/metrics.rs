//! Point-wise forecast quality metrics.

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::Empty("metric input"));
    }
    Ok(())
}

/// Fraction of truths at or below their quantile forecast.
pub fn coverage(truths: &[f64], qforecasts: &[f64]) -> Result<f64> {
    check_lengths(truths.len(), qforecasts.len())?;
    let hit = truths.iter().zip(qforecasts).filter(|(y, q)| y <= q).count();
    Ok(hit as f64 / truths.len() as f64)
}

/// Absolute coverage error `|CO − τ|`.
pub fn ace(co: f64, tau: f64) -> f64 {
    (co - tau).abs()
}

/// Quantile (pinball) loss of a single forecast.
pub fn pinball(truth: f64, qf: f64, tau: f64) -> f64 {
    if truth >= qf {
        tau * (truth - qf)
    } else {
        (1.0 - tau) * (qf - truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub value: f64,
    /// Rows skipped because the truth is zero.
    pub excluded: usize,
}

/// Mean absolute percentage error over rows with nonzero truth.
pub fn mape(truths: &[f64], preds: &[f64]) -> Result<Mape> {
    check_lengths(truths.len(), preds.len())?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (&y, &p) in truths.iter().zip(preds) {
        if y != 0.0 {
            sum += ((y - p) / y).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("every MAPE row has a zero truth".into()));
    }
    Ok(Mape { value: sum / n as f64, excluded: truths.len() - n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[1.0, 2.0], &[5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]).unwrap(), 0.5);
        assert_eq!(coverage(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), 1.0);
        assert!(coverage(&[1.0], &[1.0, 2.0]).is_err());
        assert!(coverage(&[], &[]).is_err());
    }

    #[test]
    fn ace_examples() {
        assert!((ace(0.95, 0.9) - 0.05).abs() < 1e-12);
        assert_eq!(ace(0.3, 0.3), 0.0);
        assert!((ace(0.1, 0.9) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(4.0, 4.0, 0.3), 0.0);
        assert!((pinball(10.0, 8.0, 0.9) - 1.8).abs() < 1e-12);
        assert!((pinball(8.0, 10.0, 0.9) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap().value, 0.0);
        assert!((mape(&[100.0], &[90.0]).unwrap().value - 0.1).abs() < 1e-12);
        let m = mape(&[100.0, 0.0, 50.0], &[90.0, 1.0, 55.0]).unwrap();
        assert_eq!(m.excluded, 1);
        assert!((m.value - 0.1).abs() < 1e-12);
        assert!(mape(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn pinball_minimized_near_sample_quantile() {
        let ys: Vec<f64> = (0..1001).map(|i| ((i * 7919) % 1001) as f64 / 10.0).collect();
        let mut sorted = ys.clone();
        sorted.sort_by(f64::total_cmp);
        for tau in [0.1, 0.5, 0.8] {
            let q = crate::bootstrap::quantile(&sorted, tau).unwrap();
            let loss = |c: f64| ys.iter().map(|&y| pinball(y, c, tau)).sum::<f64>();
            let best = loss(q);
            for d in [-5.0, -1.0, -0.3, 0.3, 1.0, 5.0] {
                assert!(loss(q + d) >= best - 1e-9, "tau {tau}, offset {d}");
            }
        }
    }

    proptest! {
        #[test]
        fn ace_symmetry(co in 0.0..=1.0f64, tau in 0.01..0.99f64) {
            prop_assert!((ace(co, tau) - ace(1.0 - co, 1.0 - tau)).abs() < 1e-12);
        }
    }
}
