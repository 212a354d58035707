//! Dense linear algebra kernels: LU solve, cyclic Jacobi eigendecomposition
//! and one-sided Jacobi SVD.
//!
//! State spaces here are a few hundred states at most, so everything is a
//! plain dense `f64` computation chosen for robustness and determinism, not
//! speed.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular at pivot {0}")]
    Singular(usize),
    #[error("Jacobi sweep limit reached (off-diagonal norm {0:.3e})")]
    NoConvergence(f64),
}

/// Solves `A X = B` for square `A` by LU factorization with partial pivoting.
pub fn lu_solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "lu_solve: A must be square");
    assert_eq!(b.nrows(), n, "lu_solve: B row count must match A");

    let mut lu = a.clone();
    let mut x = b.clone();
    let m = x.ncols();

    for k in 0..n {
        // pick the largest pivot in column k
        let mut piv = k;
        let mut piv_abs = lu[[k, k]].abs();
        for i in (k + 1)..n {
            let v = lu[[i, k]].abs();
            if v > piv_abs {
                piv = i;
                piv_abs = v;
            }
        }
        if piv_abs == 0.0 {
            return Err(LinalgError::Singular(k));
        }
        if piv != k {
            for j in 0..n {
                lu.swap([k, j], [piv, j]);
            }
            for j in 0..m {
                x.swap([k, j], [piv, j]);
            }
        }
        let pivot = lu[[k, k]];
        for i in (k + 1)..n {
            let factor = lu[[i, k]] / pivot;
            if factor == 0.0 {
                continue;
            }
            lu[[i, k]] = factor;
            for j in (k + 1)..n {
                let upd = lu[[k, j]] * factor;
                lu[[i, j]] -= upd;
            }
            for j in 0..m {
                let upd = x[[k, j]] * factor;
                x[[i, j]] -= upd;
            }
        }
    }

    // back substitution
    for k in (0..n).rev() {
        let pivot = lu[[k, k]];
        for j in 0..m {
            x[[k, j]] /= pivot;
        }
        for i in 0..k {
            let factor = lu[[i, k]];
            if factor == 0.0 {
                continue;
            }
            for j in 0..m {
                let upd = x[[k, j]] * factor;
                x[[i, j]] -= upd;
            }
        }
    }
    Ok(x)
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            sum += 2.0 * a[[p, q]] * a[[p, q]];
        }
    }
    sum.sqrt()
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted ascending with matching eigenvector columns.
/// Convergence is declared when the off-diagonal Frobenius norm drops below
/// `tol`; the sweep order is fixed, so results are deterministic.
pub fn jacobi_eigh(a: &Array2<f64>, tol: f64) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "jacobi_eigh: matrix must be square");
    const MAX_SWEEPS: usize = 64;

    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);

    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off < tol {
            return Ok(sorted_eigh(a, v));
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                // rotation angle per Numerical Recipes 11.1
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[[p, p]] = app - t * apq;
                a[[q, q]] = aqq + t * apq;
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[[i, p]];
                        let aiq = a[[i, q]];
                        a[[i, p]] = aip - s * (aiq + tau * aip);
                        a[[i, q]] = aiq + s * (aip - tau * aiq);
                        a[[p, i]] = a[[i, p]];
                        a[[q, i]] = a[[i, q]];
                    }
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = vip - s * (viq + tau * vip);
                    v[[i, q]] = viq + s * (vip - tau * viq);
                }
            }
        }
    }
    let off = off_diagonal_norm(&a);
    if off < tol {
        Ok(sorted_eigh(a, v))
    } else {
        Err(LinalgError::NoConvergence(off))
    }
}

fn sorted_eigh(a: Array2<f64>, v: Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[[i, i]]
            .partial_cmp(&a[[j, j]])
            .unwrap()
            .then_with(|| compare_columns(&v, i, j))
    });
    let mut values = Array1::<f64>::zeros(n);
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (k, &idx) in order.iter().enumerate() {
        values[k] = a[[idx, idx]];
        let flip = column_sign(&v, idx);
        for i in 0..n {
            vectors[[i, k]] = flip * v[[i, idx]];
        }
    }
    (values, vectors)
}

/// Sign that makes the entry of largest magnitude positive; ties go to the
/// lowest row index.
fn column_sign(v: &Array2<f64>, col: usize) -> f64 {
    let mut best = 0usize;
    let mut best_abs = v[[0, col]].abs();
    for i in 1..v.nrows() {
        let x = v[[i, col]].abs();
        if x > best_abs {
            best = i;
            best_abs = x;
        }
    }
    if v[[best, col]] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn compare_columns(v: &Array2<f64>, i: usize, j: usize) -> std::cmp::Ordering {
    let si = column_sign(v, i);
    let sj = column_sign(v, j);
    for r in 0..v.nrows() {
        match (si * v[[r, i]]).partial_cmp(&(sj * v[[r, j]])).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Thin SVD of a tall matrix (`m >= n`) by one-sided Jacobi rotations.
///
/// Returns `(u, sigma, v)` with `a = u * diag(sigma) * v^T`, singular values
/// sorted descending. Columns of `u` whose singular value is exactly zero are
/// left as zero vectors; callers doing rank decisions should threshold on
/// `sigma` themselves.
pub fn jacobi_svd(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>), LinalgError> {
    let m = a.nrows();
    let n = a.ncols();
    assert!(m >= n, "jacobi_svd: matrix must be tall (m >= n)");
    const MAX_SWEEPS: usize = 64;
    const TOL: f64 = 1e-14;

    let mut u = a.clone();
    let mut v = Array2::<f64>::eye(n);

    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let up = u[[i, p]];
                    let uq = u[[i, q]];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma.abs() <= TOL * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[[i, p]];
                    let uq = u[[i, q]];
                    u[[i, p]] = c * up - s * uq;
                    u[[i, q]] = s * up + c * uq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(LinalgError::NoConvergence(f64::NAN));
        }
    }

    let mut sigma = Array1::<f64>::zeros(n);
    for j in 0..n {
        let norm: f64 = (0..m).map(|i| u[[i, j]] * u[[i, j]]).sum::<f64>().sqrt();
        sigma[j] = norm;
        if norm > 0.0 {
            for i in 0..m {
                u[[i, j]] /= norm;
            }
        }
    }

    // sort descending, fixing signs for reproducibility
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    let mut u_sorted = Array2::<f64>::zeros((m, n));
    let mut v_sorted = Array2::<f64>::zeros((n, n));
    let mut s_sorted = Array1::<f64>::zeros(n);
    for (k, &idx) in order.iter().enumerate() {
        s_sorted[k] = sigma[idx];
        let flip = if sigma[idx] > 0.0 { column_sign(&u, idx) } else { 1.0 };
        for i in 0..m {
            u_sorted[[i, k]] = flip * u[[i, idx]];
        }
        for i in 0..n {
            v_sorted[[i, k]] = flip * v[[i, idx]];
        }
    }
    Ok((u_sorted, s_sorted, v_sorted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let mut m = 0.0f64;
        for (x, y) in a.iter().zip(b.iter()) {
            m = m.max((x - y).abs());
        }
        m
    }

    #[test]
    fn lu_solves_hand_system() {
        // 2x + y = 5, x + 3y = 10  =>  x = 1, y = 3
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let b = array![[5.0], [10.0]];
        let x = lu_solve(&a, &b).unwrap();
        assert!((x[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((x[[1, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lu_inverse_roundtrip() {
        let a = array![
            [4.0, 1.0, 0.5],
            [1.0, 3.0, 1.0],
            [0.5, 1.0, 2.0]
        ];
        let inv = lu_solve(&a, &Array2::eye(3)).unwrap();
        let prod = a.dot(&inv);
        assert!(max_abs_diff(&prod, &Array2::eye(3)) < 1e-12);
    }

    #[test]
    fn lu_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(lu_solve(&a, &Array2::eye(2)).is_err());
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = jacobi_eigh(&a, 1e-12).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        assert!(max_abs_diff(&recon, &a) < 1e-10);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 24;
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a[[i, j]] = x;
                a[[j, i]] = x;
            }
        }
        let (vals, vecs) = jacobi_eigh(&a, 1e-12).unwrap();
        // ascending order
        for k in 1..n {
            assert!(vals[k] >= vals[k - 1]);
        }
        // orthonormal eigenvectors
        let gram = vecs.t().dot(&vecs);
        assert!(max_abs_diff(&gram, &Array2::eye(n)) < 1e-10);
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        assert!(max_abs_diff(&recon, &a) < 1e-9);
    }

    #[test]
    fn svd_reconstructs_and_orthonormalizes() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (m, n) = (17, 5);
        let a = Array2::<f64>::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
        let (u, s, v) = jacobi_svd(&a).unwrap();
        for k in 1..n {
            assert!(s[k] <= s[k - 1]);
        }
        let gram = u.t().dot(&u);
        assert!(max_abs_diff(&gram, &Array2::eye(n)) < 1e-12);
        let recon = u.dot(&Array2::from_diag(&s)).dot(&v.t());
        assert!(max_abs_diff(&recon, &a) < 1e-12);
    }

    #[test]
    fn svd_flags_rank_deficiency_with_zero_sigma() {
        // second column is 2x the first: rank 1
        let a = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let (_, s, _) = jacobi_svd(&a).unwrap();
        assert!(s[0] > 1.0);
        assert!(s[1] < 1e-12);
    }
}
