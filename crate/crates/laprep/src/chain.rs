//! Exact finite-state analysis of the uniform-policy Markov chain: transition
//! matrix, stationary distribution, discounted multi-step transitions, the
//! symmetrized affinity kernel and its Laplacian quadratic form, plus the
//! dense eigendecomposition that serves as ground truth everywhere else.

use crate::grid::{Action, GridSpec};
use crate::linalg::{self, LinalgError};
use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("power iteration did not reach a stationary distribution (residual {0:.3e})")]
    NoStationary(f64),
    #[error("state {0} has nonpositive stationary mass; chain does not cover the state space")]
    UnreachableState(usize),
    #[error("requested {requested} eigenpairs but the chain has only {states} states")]
    RankExceeded { requested: usize, states: usize },
    #[error("chain invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which chain the stationary distribution (and the discounted transitions)
/// are computed for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    /// The plain one-step chain. Blocked-move self-loops make it aperiodic,
    /// so the stationary distribution is unique.
    Stationary,
    /// Episodic approximation: with probability `delta` the chain resets to
    /// a uniformly random state, mimicking finite episodes with uniform
    /// restarts. A natural choice is `delta = 1/T` for episode length `T`.
    ResetChain { delta: f64 },
}

/// The first `d` generalized eigenpairs of the Laplacian quadratic form,
/// ascending. Column `k` of `functions` is the eigenfunction over states.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub values: Array1<f64>,
    pub functions: Array2<f64>,
}

/// Sum of the eigenvalues in an [`EigenResult`] — the minimum of the graph
/// drawing objective over orthonormal function sets of that size.
pub fn optimal_value(result: &EigenResult) -> f64 {
    result.values.sum()
}

/// `P(u, v) = (1/4) * #{a : step(u, a) = v}` for the uniform policy.
pub fn transition_matrix(spec: &GridSpec) -> Array2<f64> {
    let n = spec.n_states();
    let mut p = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        let s = spec.state(u);
        for a in Action::ALL {
            let t = spec.step(s, a);
            p[[u, t.index]] += 0.25;
        }
    }
    p
}

/// `(1 - delta) * P + delta * Uniform`, the reset-augmented chain.
pub fn reset_transition_matrix(p: &Array2<f64>, delta: f64) -> Array2<f64> {
    let n = p.nrows();
    let uniform = delta / n as f64;
    p.mapv(|x| (1.0 - delta) * x) + Array2::<f64>::from_elem((n, n), uniform)
}

/// Stationary distribution by power iteration on `P^T` with L1
/// renormalization, to residual `tol` in the infinity norm.
pub fn stationary(p: &Array2<f64>, tol: f64) -> Result<Array1<f64>, ChainError> {
    let n = p.nrows();
    const MAX_ITERS: usize = 500_000;
    let pt = p.t();
    let mut rho = Array1::<f64>::from_elem(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut next = pt.dot(&rho);
        let mass: f64 = next.sum();
        next.mapv_inplace(|x| x / mass);
        residual = next
            .iter()
            .zip(rho.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        rho = next;
        if residual < tol {
            return Ok(rho);
        }
    }
    Err(ChainError::NoStationary(residual))
}

/// Discounted transition matrix `sum_{tau>=1} (lambda^(tau-1) - lambda^tau) P^tau`,
/// computed in closed form as `(1 - lambda) * P * (I - lambda P)^-1`.
pub fn discounted_matrix(p: &Array2<f64>, lambda: f64) -> Result<Array2<f64>, ChainError> {
    assert!((0.0..1.0).contains(&lambda), "lambda must be in [0, 1)");
    if lambda == 0.0 {
        return Ok(p.clone());
    }
    let n = p.nrows();
    // X = (1-l) P (I - l P)^-1  <=>  (I - l P)^T X^T = (1-l) P^T
    let a_t = (Array2::<f64>::eye(n) - p.mapv(|x| lambda * x)).t().to_owned();
    let b = p.t().mapv(|x| (1.0 - lambda) * x);
    let x_t = linalg::lu_solve(&a_t, &b)?;
    Ok(x_t.t().to_owned())
}

/// Symmetrized affinity `D(u,v) = (P_l(u,v)/rho(v) + P_l(v,u)/rho(u)) / 2`.
pub fn affinity_matrix(
    p_lambda: &Array2<f64>,
    rho: &Array1<f64>,
) -> Result<Array2<f64>, ChainError> {
    let n = p_lambda.nrows();
    for u in 0..n {
        if rho[u] <= 0.0 {
            return Err(ChainError::UnreachableState(u));
        }
    }
    let mut dm = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        for v in u..n {
            let val = 0.5 * p_lambda[[u, v]] / rho[v] + 0.5 * p_lambda[[v, u]] / rho[u];
            dm[[u, v]] = val;
            dm[[v, u]] = val;
        }
    }
    Ok(dm)
}

/// Laplacian quadratic form `M = W - W D W` with `W = diag(rho)`, so that
/// `f^T M f` is the Hilbert-space energy of `f`.
pub fn quadratic_form(dm: &Array2<f64>, rho: &Array1<f64>) -> Array2<f64> {
    let n = dm.nrows();
    let mut m = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        for v in u..n {
            let mut val = -rho[u] * dm[[u, v]] * rho[v];
            if u == v {
                val += rho[u];
            }
            m[[u, v]] = val;
            m[[v, u]] = val;
        }
    }
    m
}

/// The `d` smallest generalized eigenpairs of `(M, W)`, solved by the
/// symmetric transform `W^-1/2 M W^-1/2` and cyclic Jacobi iteration.
/// Eigenfunctions come back W-orthonormal, signs fixed so the entry of
/// largest magnitude is positive.
pub fn eig_smallest(
    m: &Array2<f64>,
    rho: &Array1<f64>,
    d: usize,
) -> Result<EigenResult, ChainError> {
    let n = m.nrows();
    if d > n {
        return Err(ChainError::RankExceeded {
            requested: d,
            states: n,
        });
    }
    let scale: Array1<f64> = rho.mapv(|r| 1.0 / r.sqrt());
    let mut c = Array2::<f64>::zeros((n, n));
    for u in 0..n {
        for v in u..n {
            let val = scale[u] * m[[u, v]] * scale[v];
            c[[u, v]] = val;
            c[[v, u]] = val;
        }
    }
    let (values, vectors) = linalg::jacobi_eigh(&c, 1e-12)?;

    let mut functions = Array2::<f64>::zeros((n, d));
    for k in 0..d {
        for u in 0..n {
            functions[[u, k]] = scale[u] * vectors[[u, k]];
        }
        fix_column_sign(&mut functions, k);
    }
    Ok(EigenResult {
        values: values.slice(ndarray::s![..d]).to_owned(),
        functions,
    })
}

fn fix_column_sign(f: &mut Array2<f64>, col: usize) {
    let n = f.nrows();
    let mut best = 0usize;
    let mut best_abs = f[[0, col]].abs();
    for u in 1..n {
        let x = f[[u, col]].abs();
        if x > best_abs {
            best = u;
            best_abs = x;
        }
    }
    if f[[best, col]] < 0.0 {
        for u in 0..n {
            f[[u, col]] = -f[[u, col]];
        }
    }
}

/// Graph drawing objective of explicit per-state embeddings:
/// `sum_k phi_k^T M phi_k`.
pub fn exact_objective(phi: &Array2<f64>, m: &Array2<f64>) -> f64 {
    let mphi = m.dot(phi);
    phi.iter().zip(mphi.iter()).map(|(a, b)| a * b).sum()
}

/// Everything the exact layer knows about one maze chain, built once and
/// immutable afterwards. Holds the full spectrum so callers can query both
/// the smallest eigenvalues (optima) and the largest (worst-case completion
/// charges for rank-deficient embeddings).
#[derive(Debug, Clone)]
pub struct ChainModel {
    p: Array2<f64>,
    rho: Array1<f64>,
    lambda: f64,
    p_lambda: Array2<f64>,
    affinity: Array2<f64>,
    quad: Array2<f64>,
    eigen: EigenResult,
}

impl ChainModel {
    pub fn build(spec: &GridSpec, lambda: f64, mode: RhoMode) -> Result<ChainModel, ChainError> {
        let p = transition_matrix(spec);
        let effective = match mode {
            RhoMode::Stationary => p.clone(),
            RhoMode::ResetChain { delta } => reset_transition_matrix(&p, delta),
        };
        let rho = stationary(&effective, 1e-13)?;
        let p_lambda = discounted_matrix(&effective, lambda)?;
        let affinity = affinity_matrix(&p_lambda, &rho)?;
        let quad = quadratic_form(&affinity, &rho);
        let model = ChainModel {
            eigen: eig_smallest(&quad, &rho, spec.n_states())?,
            p,
            rho,
            lambda,
            p_lambda,
            affinity,
            quad,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ChainError> {
        let n = self.n_states();
        for (label, mat) in [("P", &self.p), ("P_lambda", &self.p_lambda)] {
            for u in 0..n {
                let sum: f64 = mat.row(u).sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(ChainError::Invariant(format!(
                        "row {u} of {label} sums to {sum:.15}"
                    )));
                }
            }
        }
        if self.rho.iter().any(|&r| r < 0.0) || (self.rho.sum() - 1.0).abs() > 1e-10 {
            return Err(ChainError::Invariant("rho is not a distribution".into()));
        }
        // rho is stationary for the effective chain, hence for P_lambda too
        let fixed = self.p_lambda.t().dot(&self.rho);
        for u in 0..n {
            if (fixed[u] - self.rho[u]).abs() > 1e-10 {
                return Err(ChainError::Invariant(format!(
                    "rho is not stationary at state {u}"
                )));
            }
        }
        for u in 0..n {
            let density: f64 = (0..n).map(|v| self.affinity[[u, v]] * self.rho[v]).sum();
            if (density - 1.0).abs() > 1e-10 {
                return Err(ChainError::Invariant(format!(
                    "affinity row {u} has density {density:.15}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.rho.len()
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn rho(&self) -> &Array1<f64> {
        &self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p_lambda(&self) -> &Array2<f64> {
        &self.p_lambda
    }

    pub fn affinity(&self) -> &Array2<f64> {
        &self.affinity
    }

    pub fn quad(&self) -> &Array2<f64> {
        &self.quad
    }

    /// Full spectrum, ascending.
    pub fn eigen(&self) -> &EigenResult {
        &self.eigen
    }

    /// The `d` smallest eigenpairs.
    pub fn eigen_smallest(&self, d: usize) -> Result<EigenResult, ChainError> {
        let n = self.n_states();
        if d > n {
            return Err(ChainError::RankExceeded {
                requested: d,
                states: n,
            });
        }
        Ok(EigenResult {
            values: self.eigen.values.slice(ndarray::s![..d]).to_owned(),
            functions: self.eigen.functions.slice(ndarray::s![.., ..d]).to_owned(),
        })
    }

    /// Sum of the `d` smallest eigenvalues.
    pub fn optimal_value(&self, d: usize) -> f64 {
        self.eigen.values.iter().take(d).sum()
    }

    /// Sum of the `k` largest eigenvalues (pessimistic completion charge).
    pub fn top_value_sum(&self, k: usize) -> f64 {
        let n = self.n_states();
        self.eigen.values.iter().skip(n - k.min(n)).sum()
    }
}
