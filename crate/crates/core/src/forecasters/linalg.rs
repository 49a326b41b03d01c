//! Centered normal-equation solver with Cholesky factorization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// In-place Cholesky factorization of a symmetric positive-definite matrix
/// stored row-major. Only the lower triangle is read and written.
pub(crate) fn cholesky<T: Scalar>(a: &mut [T], n: usize) -> Result<()> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(T::zero(), T::max);
    let tol = max_diag * T::epsilon() * T::of_usize(n.max(1)) * T::of(16.0);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > tol) {
            return Err(Error::SingularMatrix);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` given the factor from [`cholesky`].
pub(crate) fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Minimizes `Σ (y − x·w − b)² + λ‖w‖²` with an unpenalized intercept.
///
/// Works on column-centered data so the intercept drops out of the system.
pub(crate) fn ridge_normal_equations<T: Scalar>(rows: &[&[T]], y: &[T], p: usize, lambda: T) -> Result<(Vec<T>, T)> {
    let n = rows.len();
    if n == 0 || y.len() != n {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let nf = T::of_usize(n);
    let mut x_mean = vec![T::zero(); p];
    for r in rows {
        if r.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: r.len() });
        }
        for (m, &v) in x_mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);
    let y_mean = y.iter().copied().sum::<T>() / nf;
    if p == 0 {
        return Ok((Vec::new(), y_mean));
    }

    let mut gram = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let mut centered = vec![T::zero(); p];
    for (r, &yi) in rows.iter().zip(y) {
        for (c, (&v, &m)) in centered.iter_mut().zip(r.iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = yi - y_mean;
        for i in 0..p {
            let ci = centered[i];
            rhs[i] += ci * yc;
            for k in 0..=i {
                gram[i * p + k] += ci * centered[k];
            }
        }
    }
    for i in 0..p {
        gram[i * p + i] += lambda;
    }
    cholesky(&mut gram, p)?;
    cholesky_solve(&gram, p, &mut rhs);
    let intercept = y_mean - rhs.iter().zip(&x_mean).map(|(&w, &m)| w * m).sum::<T>();
    Ok((rhs, intercept))
}
