//! Slow reference implementations used only by tests (feature `oracles`).
//!
//! Everything here favors obvious correctness over speed so the fast paths
//! elsewhere can be checked against an independent route.

use crate::tensor::Matrix;

/// All singular values of `a` in descending order, via one-sided Jacobi
/// rotations on the columns. Quadratic per sweep and entirely dependency
/// free; converges when every column pair is numerically orthogonal.
pub fn jacobi_singular_values(a: &Matrix<f64>) -> Vec<f64> {
    let (rows, cols) = a.shape();
    // working copy in column-major form: v[j] is column j
    let mut col: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a.get(i, j)).collect())
        .collect();
    let eps = 1e-14;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    app += col[p][i] * col[p][i];
                    aqq += col[q][i] * col[q][i];
                    apq += col[p][i] * col[q][i];
                }
                if apq.abs() <= eps * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // Jacobi rotation that zeroes the (p,q) entry of the Gram matrix
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let vp = col[p][i];
                    let vq = col[q][i];
                    col[p][i] = c * vp - s * vq;
                    col[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigmas: Vec<f64> = col
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sigmas.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sigmas
}

/// Algebraic rank estimate from the Jacobi spectrum: values above a
/// max-scaled threshold count as nonzero.
pub fn rank_from_singular_values(sigmas: &[f64], rows: usize, cols: usize) -> usize {
    let top = sigmas.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    let tol = top * (rows.max(cols) as f64) * 1e-12;
    sigmas.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum_is_all_ones() {
        let sigmas = jacobi_singular_values(&Matrix::identity(5));
        for s in &sigmas {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(rank_from_singular_values(&sigmas, 5, 5), 5);
    }

    #[test]
    fn hand_checked_two_by_two() {
        // A = [[3, 0], [4, 5]]: singular values sqrt(45) and sqrt(5)
        let a = Matrix::from_vec(2, 2, vec![3.0, 0.0, 4.0, 5.0]).unwrap();
        let sigmas = jacobi_singular_values(&a);
        assert!((sigmas[0] - 45f64.sqrt()).abs() < 1e-12);
        assert!((sigmas[1] - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_one_matrix_has_one_nonzero_value() {
        let a = Matrix::from_fn(6, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let sigmas = jacobi_singular_values(&a);
        assert_eq!(rank_from_singular_values(&sigmas, 6, 4), 1);
    }

    #[test]
    fn frobenius_mass_is_preserved() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = Matrix::from_fn(12, 7, |_, _| next());
        let sigmas = jacobi_singular_values(&a);
        let mass: f64 = sigmas.iter().map(|s| s * s).sum();
        assert!((mass - a.frobenius_sq()).abs() < 1e-10 * a.frobenius_sq());
    }
}
