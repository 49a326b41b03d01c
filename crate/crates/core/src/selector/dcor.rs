//! Sample distance correlation (V-statistic form).

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scalar::Scalar;

/// Default cap on the number of points entering the O(n²) computation.
pub const DEFAULT_DCOR_CAP: usize = 2000;

/// Row means of the pairwise distance matrix and its grand mean, computed
/// without materializing the matrix.
fn distance_means<T: Scalar>(x: &[T]) -> (Vec<T>, T) {
    let n = x.len();
    let nf = T::of_usize(n);
    let row: Vec<T> = x.iter().map(|&xi| x.iter().map(|&xj| (xi - xj).abs()).sum::<T>() / nf).collect();
    let grand = row.iter().copied().sum::<T>() / nf;
    (row, grand)
}

/// Squared distance covariance of two equally long samples.
fn dcov2<T: Scalar>(x: &[T], xm: &(Vec<T>, T), y: &[T], ym: &(Vec<T>, T)) -> T {
    let n = x.len();
    let mut acc = T::zero();
    for k in 0..n {
        let mut row = T::zero();
        for l in 0..n {
            let a = (x[k] - x[l]).abs() - xm.0[k] - xm.0[l] + xm.1;
            let b = (y[k] - y[l]).abs() - ym.0[k] - ym.0[l] + ym.1;
            row += a * b;
        }
        acc += row;
    }
    acc / T::of_usize(n * n)
}

fn dcor_exact<T: Scalar>(x: &[T], y: &[T]) -> T {
    let xm = distance_means(x);
    let ym = distance_means(y);
    let vx = dcov2(x, &xm, x, &xm);
    let vy = dcov2(y, &ym, y, &ym);
    if !(vx > T::zero()) || !(vy > T::zero()) {
        return T::zero();
    }
    let c = dcov2(x, &xm, y, &ym).max(T::zero());
    (c / (vx * vy).sqrt()).sqrt().min(T::one())
}

/// Indices used when a sample exceeds `cap`; `None` means use everything.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Option<Vec<usize>> {
    if n <= cap {
        return None;
    }
    let mut idx = sample(&mut stream(seed, &[0x6463_6f72]), n, cap).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Distance correlation in `[0, 1]`; zero when either sample is constant.
///
/// Samples longer than `cap` are reduced to a seeded uniform subsample of
/// size `cap`.
pub fn distance_correlation<T: Scalar>(x: &[T], y: &[T], cap: usize, seed: u64) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("distance correlation needs at least 2 points".into()));
    }
    if cap < 2 {
        return Err(Error::InvalidInput("distance correlation cap must be >= 2".into()));
    }
    Ok(match subsample_indices(x.len(), cap, seed) {
        None => dcor_exact(x, y),
        Some(idx) => {
            let xs: Vec<T> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<T> = idx.iter().map(|&i| y[i]).collect();
            dcor_exact(&xs, &ys)
        }
    })
}
