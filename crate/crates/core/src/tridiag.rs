//! Thomas elimination for tridiagonal systems.

use crate::error::{Error, Result};

/// Solves `lower[i]*x[i-1] + diag[i]*x[i] + upper[i]*x[i+1] = rhs[i]`.
///
/// `lower[0]` and `upper[n-1]` are ignored. Stable without pivoting for
/// diagonally dominant systems, which is what every discounted evaluation
/// produces (`alpha + up + down` against `up` and `down`).
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Singular { row: 0 });
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Singular { row: i });
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// `max_i |A x - rhs|_i` for the same banded layout as [`solve`].
pub fn residual(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], x: &[f64]) -> f64 {
    let n = diag.len();
    (0..n)
        .map(|i| {
            let mut ax = diag[i] * x[i];
            if i > 0 {
                ax += lower[i] * x[i - 1];
            }
            if i + 1 < n {
                ax += upper[i] * x[i + 1];
            }
            (ax - rhs[i]).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
        // Gaussian elimination with partial pivoting on the full matrix
        let n = diag.len();
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            a[i][i] = diag[i];
            if i > 0 {
                a[i][i - 1] = lower[i];
            }
            if i + 1 < n {
                a[i][i + 1] = upper[i];
            }
            a[i][n] = rhs[i];
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in col + 1..n {
                let m = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= m * a[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (a[i][n] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn small_system() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] has x = [1 1 1]
        let x = solve(
            &[0.0, -1.0, -1.0],
            &[2.0, 2.0, 2.0],
            &[-1.0, -1.0, 0.0],
            &[1.0, 0.0, 1.0],
        )
        .unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_is_reported() {
        let err = solve(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Singular { row: 1 }));
    }

    proptest! {
        #[test]
        fn matches_dense_elimination(
            rows in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0), 1..30)
        ) {
            let lower: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let upper: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let diag: Vec<f64> = rows.iter().map(|r| r.0.abs() + r.1.abs() + 0.5).collect();
            let rhs: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let x = solve(&lower, &diag, &upper, &rhs).unwrap();
            let y = dense_solve(&lower, &diag, &upper, &rhs);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert!(residual(&lower, &diag, &upper, &rhs, &x) < 1e-10);
        }
    }
}
