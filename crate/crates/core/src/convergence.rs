//! Convergence analysis of Circular BP on the directed-edge matrix `A`.
//!
//! `A` bounds the message-update Jacobian:
//! `A_{i->j, k->l} = |kappa_i| tanh|beta_ij J_ij| delta_{il} 1_{N(i)}(k) c`,
//! with `c = |1 - alpha_ij / kappa_i|` when `j = k` and `1` otherwise.
//! Any induced operator norm below 1 certifies contraction to a unique fixed
//! point; when `alpha_ij / kappa_i <= 1` everywhere, the sharper criterion
//! `rho(A) < 1` applies. Setting `alpha = kappa = v` uniformly makes every
//! entry of `A` linear in `v`, so a small enough `v` always certifies
//! convergence; [`find_safe_uniform`] walks `v = 1, 1/2, 1/3, ...` until it
//! does.

use thiserror::Error;

use crate::model::{CbpParams, IsingModel};

/// Dimension threshold above which the matrix is kept in triplet form.
const DENSE_LIMIT: usize = 4096;

/// Iteration cap for the power method.
const POWER_ITER_CAP: usize = 10_000;

/// Cap on `1/v` in the safe-parameter search.
const SAFE_SEARCH_CAP: u32 = 64;

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error("kappa[{0}] = 0: matrix A requires nonzero kappa")]
    ZeroKappa(usize),
    #[error("no uniform v with 1/v <= {0} certifies convergence (last rho = {1})")]
    SearchExhausted(u32, f64),
}

enum Storage {
    Dense(Vec<f64>),
    /// Row-sorted `(row, col, value)` triplets.
    Sparse(Vec<(u32, u32, f64)>),
}

/// The nonnegative `2|E| x 2|E|` matrix `A`, indexed by directed edges in the
/// graph's directed-edge order.
pub struct EdgeMatrix {
    dim: usize,
    storage: Storage,
}

impl EdgeMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[row * self.dim + col],
            Storage::Sparse(t) => t
                .iter()
                .find(|&&(r, c, _)| r as usize == row && c as usize == col)
                .map_or(0.0, |&(_, _, v)| v),
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        match &self.storage {
            Storage::Dense(d) => {
                for (row, out) in y.iter_mut().enumerate() {
                    let base = row * self.dim;
                    let mut acc = 0.0;
                    for (col, &xv) in x.iter().enumerate() {
                        acc += d[base + col] * xv;
                    }
                    *out = acc;
                }
            }
            Storage::Sparse(t) => {
                for &(r, c, v) in t {
                    y[r as usize] += v * x[c as usize];
                }
            }
        }
    }

    fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim];
        match &self.storage {
            Storage::Dense(d) => {
                for row in 0..self.dim {
                    for (col, s) in sums.iter_mut().enumerate() {
                        *s += d[row * self.dim + col];
                    }
                }
            }
            Storage::Sparse(t) => {
                for &(_, c, v) in t {
                    sums[c as usize] += v;
                }
            }
        }
        sums
    }

    fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim];
        match &self.storage {
            Storage::Dense(d) => {
                for (row, s) in sums.iter_mut().enumerate() {
                    *s += d[row * self.dim..(row + 1) * self.dim].iter().sum::<f64>();
                }
            }
            Storage::Sparse(t) => {
                for &(r, _, v) in t {
                    sums[r as usize] += v;
                }
            }
        }
        sums
    }
}

/// Builds matrix `A` for a model and parameter set.
///
/// The entry at `(i->j, k->l)` can be nonzero only when `l = i` and
/// `k in N(i)`; rows and columns use the graph's directed-edge indexing.
pub fn edge_matrix(model: &IsingModel, params: &CbpParams) -> Result<EdgeMatrix, ConvergenceError> {
    if let Some(i) = params.kappa.iter().position(|&k| k == 0.0) {
        return Err(ConvergenceError::ZeroKappa(i));
    }
    let g = model.graph();
    let dir = g.directed();
    let dim = g.directed_count();
    let mut triplets = Vec::new();
    for row in 0..dim {
        let i = dir.src[row];
        let j = dir.dst[row];
        let ke = dir.undirected[row];
        let scale = params.kappa[i].abs() * (params.beta[ke] * model.coupling(ke)).tanh().abs();
        if scale == 0.0 {
            continue;
        }
        for &col in &dir.incoming[i] {
            let k = dir.src[col];
            let factor = if k == j {
                (1.0 - params.alpha[ke] / params.kappa[i]).abs()
            } else {
                1.0
            };
            let value = scale * factor;
            if value != 0.0 {
                triplets.push((row as u32, col as u32, value));
            }
        }
    }
    let storage = if dim <= DENSE_LIMIT {
        let mut dense = vec![0.0; dim * dim];
        for (r, c, v) in triplets {
            dense[r as usize * dim + c as usize] = v;
        }
        Storage::Dense(dense)
    } else {
        Storage::Sparse(triplets)
    };
    Ok(EdgeMatrix { dim, storage })
}

/// Spectral radius of a nonnegative matrix by the power method.
///
/// Runs on the diagonally shifted matrix `A + delta I` (for nonnegative `A`
/// the Perron root shifts by exactly `delta`, while the shift breaks the
/// periodicity that stalls plain power iteration on cycle-structured
/// matrices). Starts from the all-ones vector and stops once successive
/// Rayleigh-style estimates differ by at most `tol`, or after 10^4 rounds.
pub fn spectral_radius(a: &EdgeMatrix, tol: f64) -> f64 {
    if a.dim == 0 {
        return 0.0;
    }
    let max_colsum = a.column_sums().into_iter().fold(0.0f64, f64::max);
    if max_colsum == 0.0 {
        return 0.0;
    }
    let shift = 0.05 * max_colsum;
    let dim = a.dim;
    let mut x = vec![1.0 / dim as f64; dim];
    let mut y = vec![0.0; dim];
    let mut estimate = f64::INFINITY;
    for _ in 0..POWER_ITER_CAP {
        a.matvec(&x, &mut y);
        for (yv, xv) in y.iter_mut().zip(&x) {
            *yv += shift * *xv;
        }
        let norm: f64 = y.iter().sum();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm; // x is l1-normalized, so ||y||_1 is the quotient
        for (xv, yv) in x.iter_mut().zip(&y) {
            *xv = *yv / norm;
        }
        if (next - estimate).abs() <= tol {
            estimate = next;
            break;
        }
        estimate = next;
    }
    (estimate - shift).max(0.0)
}

/// Induced l1 and l-infinity norms: max column sum and max row sum.
pub fn induced_norms(a: &EdgeMatrix) -> (f64, f64) {
    let l1 = a.column_sums().into_iter().fold(0.0f64, f64::max);
    let linf = a.row_sums().into_iter().fold(0.0f64, f64::max);
    (l1, linf)
}

/// Finds a uniform `v` with `alpha = kappa = v` certifying convergence.
///
/// Starts at `v = 1` and increments `1/v` by steps of 1 until
/// `rho(A) < 1`; returns the first passing `v` and its spectral radius.
pub fn find_safe_uniform(
    model: &IsingModel,
    beta: &[f64],
    gamma: &[f64],
) -> Result<(f64, f64), ConvergenceError> {
    let g = model.graph();
    debug_assert_eq!(beta.len(), g.edge_count());
    debug_assert_eq!(gamma.len(), g.node_count());
    let mut last_rho = f64::INFINITY;
    for denom in 1..=SAFE_SEARCH_CAP {
        let v = 1.0 / denom as f64;
        let params = CbpParams {
            alpha: vec![v; g.edge_count()],
            beta: beta.to_vec(),
            kappa: vec![v; g.node_count()],
            gamma: gamma.to_vec(),
        };
        let a = edge_matrix(model, &params)?;
        let rho = spectral_radius(&a, 1e-10);
        last_rho = rho;
        if rho < 1.0 {
            return Ok((v, rho));
        }
    }
    Err(ConvergenceError::SearchExhausted(SAFE_SEARCH_CAP, last_rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CbpParams, IsingModel, UndirectedGraph};
    use crate::propagation::{run_cbp, Init, RunOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn three_cycle(coupling: f64) -> IsingModel {
        let g = UndirectedGraph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        IsingModel::new(
            g,
            &[((0, 1), coupling), ((1, 2), coupling), ((0, 2), coupling)],
            vec![0.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn single_edge_bp_matrix_is_zero() {
        let g = UndirectedGraph::new(2, &[(0, 1)]).unwrap();
        let model = IsingModel::new(g, &[((0, 1), 1.5)], vec![0.0, 0.0]).unwrap();
        let a = edge_matrix(&model, &CbpParams::bp(model.graph())).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(a.entry(r, c), 0.0);
            }
        }
        assert_eq!(spectral_radius(&a, 1e-10), 0.0);
    }

    #[test]
    fn three_cycle_bp_matrix_structure_and_radius() {
        let j = 0.9f64;
        let model = three_cycle(j);
        let a = edge_matrix(&model, &CbpParams::bp(model.graph())).unwrap();
        let t = j.tanh();
        // Each row has exactly one nonzero entry tanh|J|, at the column that
        // continues the cycle (incoming edge from the other neighbor).
        for row in 0..6 {
            let nonzero: Vec<(usize, f64)> = (0..6)
                .map(|c| (c, a.entry(row, c)))
                .filter(|&(_, v)| v != 0.0)
                .collect();
            assert_eq!(nonzero.len(), 1);
            assert_relative_eq!(nonzero[0].1, t, epsilon = 1e-15);
        }
        assert_relative_eq!(spectral_radius(&a, 1e-10), t, epsilon = 1e-7);
    }

    #[test]
    fn nonuniform_three_cycle_radius_is_geometric_mean() {
        let g = UndirectedGraph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let (j0, j1, j2) = (0.4, 1.3, 0.8);
        let model =
            IsingModel::new(g, &[((0, 1), j0), ((1, 2), j1), ((0, 2), j2)], vec![0.0; 3]).unwrap();
        let a = edge_matrix(&model, &CbpParams::bp(model.graph())).unwrap();
        let expected = (j0.tanh() * j1.tanh() * j2.tanh()).powf(1.0 / 3.0);
        assert_relative_eq!(spectral_radius(&a, 1e-11), expected, epsilon = 1e-7);
    }

    #[test]
    fn uniform_alpha_kappa_zeroes_the_backward_entry() {
        let g = UndirectedGraph::erdos_renyi(6, 0.7, 8).unwrap();
        let model = IsingModel::spin_glass(g, 9);
        let v = 0.35;
        let params = CbpParams::uniform(model.graph(), v);
        let a = edge_matrix(&model, &params).unwrap();
        let dir = model.graph().directed();
        for row in 0..a.dim() {
            let i = dir.src[row];
            let ke = dir.undirected[row];
            for col in 0..a.dim() {
                let expect = if dir.dst[col] == i && dir.src[col] != dir.dst[row] {
                    v * model.coupling(ke).tanh().abs()
                } else {
                    0.0
                };
                assert_relative_eq!(a.entry(row, col), expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sparsity_pattern_is_respected() {
        let g = UndirectedGraph::erdos_renyi(7, 0.5, 18).unwrap();
        let model = IsingModel::spin_glass(g, 19);
        let mut params = CbpParams::bp(model.graph());
        params.alpha.iter_mut().for_each(|a| *a = 0.3);
        params.kappa.iter_mut().for_each(|k| *k = 0.9);
        let a = edge_matrix(&model, &params).unwrap();
        let dir = model.graph().directed();
        for row in 0..a.dim() {
            for col in 0..a.dim() {
                if a.entry(row, col) != 0.0 {
                    assert_eq!(dir.dst[col], dir.src[row]);
                    assert!(model
                        .graph()
                        .neighbors(dir.src[row])
                        .contains(&dir.src[col]));
                }
            }
        }
    }

    #[test]
    fn zero_kappa_is_rejected() {
        let model = three_cycle(1.0);
        let mut params = CbpParams::bp(model.graph());
        params.kappa[1] = 0.0;
        assert!(matches!(
            edge_matrix(&model, &params),
            Err(ConvergenceError::ZeroKappa(1))
        ));
    }

    #[test]
    fn spectral_radius_of_diagonal_and_zero() {
        let zero = EdgeMatrix {
            dim: 4,
            storage: Storage::Dense(vec![0.0; 16]),
        };
        assert_eq!(spectral_radius(&zero, 1e-10), 0.0);
        assert_eq!(induced_norms(&zero), (0.0, 0.0));

        let c = 0.42;
        let mut d = vec![0.0; 16];
        for i in 0..4 {
            d[i * 4 + i] = c;
        }
        let diag = EdgeMatrix {
            dim: 4,
            storage: Storage::Dense(d),
        };
        assert_relative_eq!(spectral_radius(&diag, 1e-12), c, epsilon = 1e-9);

        let empty = EdgeMatrix {
            dim: 0,
            storage: Storage::Dense(vec![]),
        };
        assert_eq!(spectral_radius(&empty, 1e-10), 0.0);
    }

    #[test]
    fn row_stochastic_matrix_has_unit_linf() {
        let dim = 5;
        let mut d = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                d[r * dim + c] = if c == (r + 1) % dim { 0.75 } else { 0.25 / 4.0 };
            }
        }
        let a = EdgeMatrix {
            dim,
            storage: Storage::Dense(d),
        };
        let (_, linf) = induced_norms(&a);
        assert_relative_eq!(linf, 1.0, epsilon = 1e-12);
        assert!(spectral_radius(&a, 1e-12) <= 1.0 + 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn radius_never_exceeds_induced_norms(seed in 0u64..10_000) {
            let g = UndirectedGraph::erdos_renyi(6, 0.6, seed).unwrap();
            if g.edge_count() == 0 {
                return Ok(());
            }
            let model = IsingModel::spin_glass(g, seed ^ 0xabcd);
            let mut params = CbpParams::bp(model.graph());
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            params.alpha.iter_mut().for_each(|a| *a = 1.0 + 0.5 * next());
            params.beta.iter_mut().for_each(|b| *b = 1.0 + 0.5 * next());
            params.kappa.iter_mut().for_each(|k| *k = 0.3 + 0.6 * (next().abs()));
            let a = edge_matrix(&model, &params).unwrap();
            let rho = spectral_radius(&a, 1e-12);
            let (l1, linf) = induced_norms(&a);
            prop_assert!(rho <= l1.min(linf) + 1e-9, "rho {} l1 {} linf {}", rho, l1, linf);
        }
    }

    #[test]
    fn radius_is_linear_in_uniform_v() {
        let g = UndirectedGraph::erdos_renyi(7, 0.8, 33).unwrap();
        let model = IsingModel::spin_glass(g, 34);
        let rho_at = |v: f64| {
            let params = CbpParams::uniform(model.graph(), v);
            spectral_radius(&edge_matrix(&model, &params).unwrap(), 1e-12)
        };
        let full = rho_at(0.8);
        let half = rho_at(0.4);
        assert_relative_eq!(half, full / 2.0, epsilon = 1e-7);
    }

    #[test]
    fn safe_search_accepts_trees_immediately() {
        let g = UndirectedGraph::random_tree(8, 3).unwrap();
        // Weak weights keep rho(A) < 1 already at v = 1.
        let coupling: Vec<f64> = (0..g.edge_count()).map(|k| 0.1 + 0.02 * k as f64).collect();
        let model = IsingModel::from_parts(g, coupling, vec![0.0; 8]).unwrap();
        let beta = vec![1.0; model.graph().edge_count()];
        let gamma = vec![1.0; model.node_count()];
        let (v, rho) = find_safe_uniform(&model, &beta, &gamma).unwrap();
        assert_eq!(v, 1.0);
        assert!(rho < 1.0);
    }

    #[test]
    fn safe_search_walks_unit_fractions() {
        // Strong uniform couplings on a complete graph force several steps;
        // the accepted v must be a unit fraction 1/k and rho must certify it.
        let g = UndirectedGraph::complete(6).unwrap();
        let model = IsingModel::from_parts(g, vec![2.0; 15], vec![0.0; 6]).unwrap();
        let beta = vec![1.0; 15];
        let gamma = vec![1.0; 6];
        let (v, rho) = find_safe_uniform(&model, &beta, &gamma).unwrap();
        assert!(rho < 1.0);
        let denom = (1.0 / v).round();
        assert_relative_eq!(v, 1.0 / denom, epsilon = 1e-15);
        assert!(denom >= 2.0);
        // The previous candidate in the 1, 1/2, 1/3, ... schedule must fail.
        let prev = 1.0 / (denom - 1.0);
        let params = CbpParams::uniform(model.graph(), prev);
        let prev_rho = spectral_radius(&edge_matrix(&model, &params).unwrap(), 1e-10);
        assert!(prev_rho >= 1.0, "prev rho {prev_rho}");
    }

    #[test]
    fn certified_params_reach_a_unique_fixed_point() {
        // Theorem-2 style certificate: alpha/kappa <= 1 and rho < 1 imply the
        // same fixed point from any initialization.
        let g = UndirectedGraph::complete(6).unwrap();
        let model = IsingModel::spin_glass(g, 91);
        let model = model.with_m_ext(&[0.5; 6]).unwrap();
        let beta = vec![1.0; model.graph().edge_count()];
        let gamma = vec![1.0; model.node_count()];
        let (v, rho) = find_safe_uniform(&model, &beta, &gamma).unwrap();
        assert!(rho < 1.0);
        let params = CbpParams::uniform(model.graph(), v);
        let mut reference: Option<Vec<f64>> = None;
        for s in 0..6 {
            let opts = RunOptions {
                max_iters: 3000,
                tol: 1e-12,
                damping: 0.0,
                init: Init::Random(s),
            };
            let report = run_cbp(&model, &params, &opts);
            assert!(report.converged);
            match &reference {
                None => reference = Some(report.beliefs.b.clone()),
                Some(r) => {
                    for (a, b) in r.iter().zip(&report.beliefs.b) {
                        assert!((a - b).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
