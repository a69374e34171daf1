//! Small dense-matrix and floating-point helpers used by the likelihood
//! kernels and the optimizer.
//!
//! The hot path works on flat `&[f64]` buffers with hand-rolled Cholesky
//! factorizations; `nalgebra` is reserved for the cold paths (transform
//! checks, Hessian inversion, eigenvalue diagnostics).

use nalgebra::DMatrix;

/// Numerically stable log-sum-exp over a slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// In-place lower Cholesky factorization of a symmetric matrix stored
/// row-major in `a` (n x n). Only the lower triangle is referenced; on
/// success the lower triangle holds L with `a = L L^T`. Returns `false`
/// if the matrix is not numerically positive definite.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return false;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    true
}

/// Forward substitution: solves `L w = b` for lower-triangular L (row-major),
/// writing the solution into `b`.
pub fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// Backward substitution: solves `L^T x = b` for lower-triangular L
/// (row-major), writing the solution into `b`.
pub fn backward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * b[k];
        }
        b[i] = sum / l[i * n + i];
    }
}

/// log det of an SPD matrix from its lower Cholesky factor (row-major).
pub fn log_det_from_cholesky(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Overflow-safe logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Maximum absolute elementwise asymmetry `|m - m^T|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Rounds to `digits` significant decimal digits. Used for posterior tie
/// detection, where exact float equality would miss analytically tied values.
pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_on_moderate_values() {
        let v: [f64; 3] = [0.3, -1.2, 2.0];
        let naive: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        let v = [-1000.0, -1000.5];
        let expected = -1000.0 + (1.0 + (-0.5f64).exp()).ln();
        assert!((logsumexp(&v) - expected).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        // A = [[4,2],[2,3]], b = [2, 5]
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        assert!(cholesky_in_place(&mut a, 2));
        let mut b = vec![2.0, 5.0];
        forward_substitute(&a, 2, &mut b);
        backward_substitute(&a, 2, &mut b);
        // solution of A x = [2,5]: x = [-0.5, 2]
        assert!((b[0] + 0.5).abs() < 1e-12);
        assert!((b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2));
    }

    #[test]
    fn round_significant_behaves() {
        assert_eq!(round_significant(0.123456789012345, 12), 0.123456789012);
        assert_eq!(round_significant(0.0, 12), 0.0);
        assert!((round_significant(1234.5678, 6) - 1234.57).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_logit_inverse_pair() {
        // past |x| ~ 15 the roundtrip loses digits to 1 - p cancellation
        for &x in &[-10.0, -3.0, 0.0, 1.7, 10.0] {
            assert!((logit(sigmoid(x)) - x).abs() < 1e-9 * x.abs().max(1.0));
        }
    }
}
