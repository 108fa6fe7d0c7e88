//! Ground-truth marginal oracles.
//!
//! Binary models are solved by exhaustive enumeration of all `2^n` states
//! (log-sum-exp stabilized); Gaussian models by assembling the global
//! precision matrix and inverting it. These oracles are deliberately simple:
//! everything else in the crate is validated against them.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gaussian::GaussianModel;
use crate::model::IsingModel;

/// Default cap on enumeration size.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("{0} nodes exceed the enumeration cap of {1}")]
    TooLarge(usize, usize),
    #[error("assembled precision matrix is not positive definite (smallest eigenvalue ~ {0:.3e})")]
    NotPositiveDefinite(f64),
}

/// Exact per-node marginals `p_i(x_i = +1)` and the log partition function.
#[derive(Debug, Clone)]
pub struct ExactMarginals {
    pub p_plus: Vec<f64>,
    pub log_partition: f64,
}

/// Exact marginals of a binary pairwise model by exhaustive enumeration.
///
/// `p_i(+1) = sum_{x: x_i = +1} w(x) / Z` with
/// `w(x) = exp(sum_(i,j) J_ij x_i x_j + sum_i M_ext,i x_i)`.
pub fn marginals(model: &IsingModel) -> Result<ExactMarginals, ExactError> {
    marginals_capped(model, ENUMERATION_CAP)
}

/// As [`marginals`], with an explicit state-count cap.
pub fn marginals_capped(model: &IsingModel, cap: usize) -> Result<ExactMarginals, ExactError> {
    let n = model.node_count();
    if n > cap {
        return Err(ExactError::TooLarge(n, cap));
    }
    let states = 1usize << n;
    let mut log_w = vec![0.0f64; states];
    let edges = model.graph().edges();
    for (state, lw) in log_w.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &(i, j)) in edges.iter().enumerate() {
            let same = ((state >> i) ^ (state >> j)) & 1 == 0;
            acc += if same {
                model.coupling(k)
            } else {
                -model.coupling(k)
            };
        }
        for (i, &h) in model.m_ext().iter().enumerate() {
            acc += if (state >> i) & 1 == 1 { h } else { -h };
        }
        *lw = acc;
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut plus = vec![0.0f64; n];
    for (state, &lw) in log_w.iter().enumerate() {
        let w = (lw - max).exp();
        total += w;
        for (i, p) in plus.iter_mut().enumerate() {
            if (state >> i) & 1 == 1 {
                *p += w;
            }
        }
    }
    let p_plus = plus.iter().map(|&p| p / total).collect();
    Ok(ExactMarginals {
        p_plus,
        log_partition: max + total.ln(),
    })
}

/// Exact means and marginal precisions of a Gaussian model.
///
/// The global precision matrix accumulates each edge block on the diagonal
/// and off-diagonal entries, plus `P_ext` on the diagonal; the potential
/// vector is `v_i = P_ext,i * mu_ext,i`. Means solve `P mu = v`; marginal
/// precisions are `1 / (P^-1)_ii`.
pub fn gaussian_marginals(model: &GaussianModel) -> Result<(Vec<f64>, Vec<f64>), ExactError> {
    let (p, v) = assemble(model);
    let n = model.graph().node_count();
    let chol = match p.clone().cholesky() {
        Some(c) => c,
        None => {
            let eigs = p.symmetric_eigenvalues();
            let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(ExactError::NotPositiveDefinite(min));
        }
    };
    let means = chol.solve(&v);
    let sigma = chol.inverse();
    let precisions = (0..n).map(|i| 1.0 / sigma[(i, i)]).collect();
    Ok((means.iter().copied().collect(), precisions))
}

/// Global precision matrix and potential vector of a Gaussian model.
pub fn assemble(model: &GaussianModel) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.graph().node_count();
    let mut p = DMatrix::zeros(n, n);
    for (k, &(i, j)) in model.graph().edges().iter().enumerate() {
        let b = model.block(k);
        p[(i, i)] += b.pii;
        p[(j, j)] += b.pjj;
        p[(i, j)] += b.pij;
        p[(j, i)] += b.pij;
    }
    let mut v = DVector::zeros(n);
    for i in 0..n {
        p[(i, i)] += model.p_ext()[i];
        v[i] = model.p_ext()[i] * model.mu_ext()[i];
    }
    (p, v)
}
