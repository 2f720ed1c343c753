//! Dense symmetric eigensolver and small-matrix helpers.
//!
//! Everything downstream (gossip matrices, consensus diagnostics,
//! operator-norm checks) runs on matrices of at most a few thousand
//! entries, so a hand-rolled cyclic Jacobi sweep is both simpler and more
//! predictable than pulling in a LAPACK binding. All arithmetic is f64.

use ndarray::{Array1, Array2};

use crate::error::{Result, SimError};

/// Convergence threshold factor: a sweep stops once the off-diagonal
/// Frobenius mass drops below `1e-13 * ||A||_F`.
const OFF_DIAG_TOL_FACTOR: f64 = 1e-13;

/// Jacobi converges quadratically once rotations are small; for the
/// dimensions handled here (<= 64) a handful of sweeps suffices. This cap
/// only guards against a logic error turning into an infinite loop.
const MAX_SWEEPS: usize = 100;

/// Maximum tolerated asymmetry `|a_ij - a_ji|`, relative to the matrix scale.
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues (descending) and matching orthonormal eigenvector columns of
/// a symmetric matrix: `A = Q diag(values) Q^T`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues sorted in descending order.
    pub eigenvalues: Array1<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Array2<f64>,
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input must be square and symmetric to within `1e-10` relative to its
/// Frobenius norm; tiny floating-point asymmetry (e.g. from forming `A^T A`)
/// is symmetrized away before iterating.
pub fn sym_eigen(a: &Array2<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SimError::InvalidArgument(format!(
            "eigensolver requires a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(SimError::InvalidArgument(
            "eigensolver requires a non-empty matrix".into(),
        ));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SimError::InvalidArgument(
            "eigensolver input contains non-finite entries".into(),
        ));
    }
    let norm = frobenius_norm(a);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * norm.max(1.0) {
        return Err(SimError::InvalidArgument(format!(
            "eigensolver input is not symmetric: max |a_ij - a_ji| = {max_asym:e}"
        )));
    }

    // Work on an exactly-symmetric copy so rotations stay consistent.
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    let mut q = Array2::<f64>::eye(n);
    let threshold = OFF_DIAG_TOL_FACTOR * norm;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_frobenius(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for r in (p + 1)..n {
                let apq = m[[p, r]];
                if apq == 0.0 {
                    continue;
                }
                // Rotation angle zeroing m[p,r]: tan chosen as the smaller
                // root of t^2 + 2t*theta - 1 = 0 for stability.
                let theta = (m[[r, r]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    1.0 / (theta - (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- J^T A J applied as column then row updates.
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, r]];
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, r]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let ark = m[[r, k]];
                    m[[p, k]] = c * apk - s * ark;
                    m[[r, k]] = s * apk + c * ark;
                }
                m[[p, r]] = 0.0;
                m[[r, p]] = 0.0;

                // Accumulate Q <- Q J so columns end up as eigenvectors.
                for k in 0..n {
                    let qkp = q[[k, p]];
                    let qkq = q[[k, r]];
                    q[[k, p]] = c * qkp - s * qkq;
                    q[[k, r]] = s * qkp + c * qkq;
                }
            }
        }
    }
    if !converged && off_diagonal_frobenius(&m) > threshold {
        return Err(SimError::Numerical(format!(
            "jacobi eigensolver did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    // Sort eigenpairs by descending eigenvalue (stable, so ties keep a
    // deterministic order).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[[k, dst]] = q[[k, src]];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `A^p` by repeated multiplication, with `A^0 = I`.
pub fn matrix_power(a: &Array2<f64>, p: usize) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SimError::InvalidArgument(format!(
            "matrix power requires a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut out = Array2::<f64>::eye(n);
    for _ in 0..p {
        out = out.dot(a);
    }
    Ok(out)
}

/// Spectral operator norm `sqrt(lambda_max(A^T A))`; defined for any
/// rectangular matrix and always >= 0.
pub fn operator_norm(a: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    let mut gram = a.t().dot(a);
    // A^T A is symmetric up to rounding in the dot products; make it exact.
    let n = gram.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (gram[[i, j]] + gram[[j, i]]);
            gram[[i, j]] = v;
            gram[[j, i]] = v;
        }
    }
    let eig = sym_eigen(&gram)?;
    Ok(eig.eigenvalues[0].max(0.0).sqrt())
}

/// Column-weighted squared norm `sum_j m_j * ||column_j(X)||^2`.
///
/// This is the squared weighted norm used by the consensus diagnostic
/// E_k = ||W(I - M)||^2_m, with one weight per client column.
pub fn weighted_col_norm_sq(x: &Array2<f64>, weights: &[f64]) -> Result<f64> {
    if weights.len() != x.ncols() {
        return Err(SimError::InvalidArgument(format!(
            "weighted norm needs one weight per column: {} weights for {} columns",
            weights.len(),
            x.ncols()
        )));
    }
    let mut total = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        let col_sq: f64 = x.column(j).iter().map(|v| v * v).sum();
        total += w * col_sq;
    }
    Ok(total)
}

fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn off_diagonal_frobenius(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[[i, j]] * a[[i, j]];
            }
        }
    }
    sum.sqrt()
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Determinant by Gaussian elimination with partial pivoting; independent
    /// of the Jacobi code path, used as a characteristic-polynomial oracle.
    fn det(a: &Array2<f64>) -> f64 {
        let n = a.nrows();
        let mut m = a.clone();
        let mut sign = 1.0;
        let mut d = 1.0;
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if m[[r, col]].abs() > m[[pivot, col]].abs() {
                    pivot = r;
                }
            }
            if m[[pivot, col]] == 0.0 {
                return 0.0;
            }
            if pivot != col {
                for c in 0..n {
                    let tmp = m[[col, c]];
                    m[[col, c]] = m[[pivot, c]];
                    m[[pivot, c]] = tmp;
                }
                sign = -sign;
            }
            d *= m[[col, col]];
            for r in col + 1..n {
                let f = m[[r, col]] / m[[col, col]];
                for c in col..n {
                    m[[r, c]] -= f * m[[col, c]];
                }
            }
        }
        sign * d
    }

    fn ring_laplacian(n: usize) -> Array2<f64> {
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            l[[i, i]] = 2.0;
            l[[i, (i + 1) % n]] = -1.0;
            l[[(i + 1) % n, i]] = -1.0;
        }
        l
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-2.0..2.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let eig = sym_eigen(&Array2::<f64>::eye(3)).unwrap();
        for &v in eig.eigenvalues.iter() {
            assert!((v - 1.0).abs() < 1e-12, "identity eigenvalue {v} != 1");
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = arr2(&[[2.0, -1.0], [-1.0, 2.0]]);
        let eig = sym_eigen(&a).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ring6_laplacian_spectrum_matches_circulant_formula() {
        // Circulant oracle: eigenvalues of the ring Laplacian are
        // 2 - 2cos(2*pi*k/6) for k = 0..5, i.e. (4, 3, 3, 1, 1, 0) sorted
        // descending.
        let mut expected: Vec<f64> = (0..6)
            .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / 6.0).cos())
            .collect();
        expected.sort_by(|x, y| y.partial_cmp(x).unwrap());

        let l = ring_laplacian(6);
        let eig = sym_eigen(&l).unwrap();
        for (got, want) in eig.eigenvalues.iter().zip(expected.iter()) {
            assert!(
                (got - want).abs() < 1e-11,
                "ring-6 eigenvalue {got} != circulant value {want}"
            );
        }
        // Characteristic-polynomial oracle: each computed eigenvalue must be
        // a root of det(L - lambda*I), evaluated by an independent
        // elimination-based determinant.
        for &lambda in eig.eigenvalues.iter() {
            let shifted = &l - &(Array2::<f64>::eye(6) * lambda);
            assert!(
                det(&shifted).abs() < 1e-8,
                "det(L - {lambda} I) = {} not ~ 0",
                det(&shifted)
            );
        }
    }

    #[test]
    fn eigen_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 4, 7, 12] {
            let a = random_symmetric(n, &mut rng);
            let eig = sym_eigen(&a).unwrap();
            let q = &eig.eigenvectors;
            let lam = Array2::from_diag(&eig.eigenvalues);
            let recon = q.dot(&lam).dot(&q.t());
            let err = frobenius_norm(&(&recon - &a));
            assert!(
                err <= 1e-9 * frobenius_norm(&a).max(1.0),
                "reconstruction error {err} too large for n={n}"
            );
            let gram = q.t().dot(q);
            let id_err = frobenius_norm(&(&gram - &Array2::<f64>::eye(n)));
            assert!(id_err < 1e-10, "eigenvectors not orthonormal: {id_err}");
        }
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        let rect = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            sym_eigen(&rect),
            Err(SimError::InvalidArgument(_))
        ));
        let asym = arr2(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eigen(&asym), Err(SimError::InvalidArgument(_))));
    }

    #[test]
    fn power_zero_is_identity() {
        let a = arr2(&[[3.0, 1.0], [1.0, -2.0]]);
        let p0 = matrix_power(&a, 0).unwrap();
        assert_eq!(p0, Array2::<f64>::eye(2));
    }

    #[test]
    fn power_of_diagonal() {
        let a = arr2(&[[2.0, 0.0], [0.0, 3.0]]);
        let p3 = matrix_power(&a, 3).unwrap();
        assert_eq!(p3, arr2(&[[8.0, 0.0], [0.0, 27.0]]));
    }

    #[test]
    fn power_matches_naive_triple_loop() {
        // Ring-6 gossip matrix: diagonal 0.2, ring neighbours 0.4.
        let n = 6;
        let mut p = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            p[[i, i]] = 0.2;
            p[[i, (i + 1) % n]] = 0.4;
            p[[(i + 1) % n, i]] = 0.4;
        }
        let fast = matrix_power(&p, 2).unwrap();
        let mut naive = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += p[[i, k]] * p[[k, j]];
                }
                naive[[i, j]] = acc;
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (fast[[i, j]] - naive[[i, j]]).abs() < 1e-12,
                    "P^2 mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn power_rejects_non_square() {
        let rect = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            matrix_power(&rect, 2),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn operator_norm_identity_and_zero() {
        assert!((operator_norm(&Array2::<f64>::eye(4)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(operator_norm(&Array2::<f64>::zeros((3, 5))).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = Array2::<f64>::zeros((5, 5));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        // Independent oracle: power iteration on A^T A.
        let gram = a.t().dot(&a);
        let mut v = Array1::from_elem(5, 1.0);
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let w = gram.dot(&v);
            lambda = w.dot(&v) / v.dot(&v);
            let norm = w.dot(&w).sqrt();
            v = w / norm;
        }
        let want = lambda.max(0.0).sqrt();
        let got = operator_norm(&a).unwrap();
        assert!(
            (got - want).abs() < 1e-9,
            "operator norm {got} vs power-iteration oracle {want}"
        );
    }

    #[test]
    fn weighted_norm_of_consensus_deviation_is_zero() {
        // All-identical columns: X(I - m 1^T) = 0, so the weighted norm of the
        // deviation vanishes.
        let x = arr2(&[[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        let m = [0.2, 0.3, 0.5];
        let ones = Array2::<f64>::from_elem((3, 3), 1.0);
        let mmat = {
            let mut t = Array2::<f64>::zeros((3, 3));
            for i in 0..3 {
                for j in 0..3 {
                    t[[i, j]] = m[i] * ones[[i, j]];
                }
            }
            t
        };
        let dev = x.dot(&(Array2::<f64>::eye(3) - &mmat));
        let val = weighted_col_norm_sq(&dev, &m).unwrap();
        assert!(val.abs() < 1e-24, "consensus deviation norm {val} != 0");
    }

    #[test]
    fn weighted_norm_uniform_weights_is_frobenius_over_c() {
        let x = arr2(&[[1.0, -2.0], [3.0, 0.5]]);
        let val = weighted_col_norm_sq(&x, &[0.5, 0.5]).unwrap();
        let frob_sq: f64 = x.iter().map(|v| v * v).sum();
        assert!((val - frob_sq / 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_norm_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Array2::<f64>::zeros((3, 4));
        for v in x.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let m = [0.1, 0.2, 0.3, 0.4];
        let mut brute = 0.0;
        for j in 0..4 {
            for i in 0..3 {
                brute += m[j] * x[[i, j]] * x[[i, j]];
            }
        }
        let got = weighted_col_norm_sq(&x, &m).unwrap();
        assert!((got - brute).abs() < 1e-14);
    }

    #[test]
    fn weighted_norm_rejects_count_mismatch() {
        let x = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            weighted_col_norm_sq(&x, &[0.5, 0.5]),
            Err(SimError::InvalidArgument(_))
        ));
    }

    #[test]
    fn operator_norm_bounds_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = Array2::<f64>::zeros((6, 6));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let norm = operator_norm(&a).unwrap();
        for _ in 0..100 {
            let mut v = Array1::<f64>::zeros(6);
            for e in v.iter_mut() {
                *e = rng.random_range(-1.0..1.0);
            }
            let len = v.dot(&v).sqrt();
            if len == 0.0 {
                continue;
            }
            let image = a.dot(&v);
            let ratio = image.dot(&image).sqrt() / len;
            assert!(
                norm >= ratio - 1e-10,
                "operator norm {norm} < ||Av||/||v|| = {ratio}"
            );
        }
    }

    proptest! {
        #[test]
        fn eigen_trace_and_det_identities(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed % 3) as usize; // 2..=4 so the det oracle stays cheap
            let a = random_symmetric(n, &mut rng);
            let eig = sym_eigen(&a).unwrap();
            let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
            let sum: f64 = eig.eigenvalues.iter().sum();
            prop_assert!((trace - sum).abs() < 1e-9);
            let prod: f64 = eig.eigenvalues.iter().product();
            prop_assert!((det(&a) - prod).abs() < 1e-9);
        }

        #[test]
        fn power_additivity(seed in 0u64..200, p in 0usize..4, q in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = Array2::<f64>::zeros((3, 3));
            for v in a.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let lhs = matrix_power(&a, p + q).unwrap();
            let rhs = matrix_power(&a, p).unwrap().dot(&matrix_power(&a, q).unwrap());
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
