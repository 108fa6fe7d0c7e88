//! Parameter learning for Circular BP.
//!
//! Supervised fitting minimizes the MSE between beliefs after a fixed number
//! of unrolled sweeps and exact marginals, by resilient backpropagation on
//! exact reverse-mode gradients and/or Levenberg-Marquardt on per-node
//! residuals; whichever does better on the validation set wins, and the
//! returned parameters are never worse on validation than the initialization
//! (safe uniform `alpha = kappa = v`, `beta = gamma = 1`).
//!
//! Unsupervised fitting needs no targets: driven by pure-noise inputs, the
//! local anti-Hebbian rules
//! `d alpha_ij = eta1 [M_{j->i}(B_i - alpha_ij M_{j->i}) + M_{i->j}(B_j - alpha_ij M_{i->j})]`
//! and `d kappa_i = -eta2 M_ext,i (B_i - M_ext,i)` decorrelate opposite
//! messages and rescale beliefs back toward their inputs, with `beta, gamma`
//! held at 1.

pub mod autodiff;
pub mod optim;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use autodiff::ParamGrad;

use crate::convergence::{self, ConvergenceError};
use crate::model::{CbpParams, IsingModel, ModelError, TrainingSet};
use crate::propagation::{run_cbp, sigmoid, BeliefVector, RunOptions};
use crate::rng::seeded_rng;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("beliefs have {got} entries, target has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("training set has no targets; supervised fitting needs exact marginals")]
    MissingTargets,
    #[error("MSE at index {0} is not positive; score is undefined")]
    NonPositiveMse(usize),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Optimization route for [`fit_supervised`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitOptimizer {
    Rprop,
    LeastSquares,
    /// Run both and keep the better validation performer.
    #[default]
    Best,
}

/// Controls for supervised fitting.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Unroll length `T` of each run.
    pub sweeps: usize,
    /// Initial Rprop step size.
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub optimizer: FitOptimizer,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            sweeps: 100,
            lr: 0.001,
            max_epochs: 300,
            patience: 25,
            optimizer: FitOptimizer::Best,
        }
    }
}

/// Controls for unsupervised fitting.
#[derive(Debug, Clone, Copy)]
pub struct UnsupOptions {
    pub n_examples: usize,
    pub eta1: f64,
    pub eta2: f64,
    /// Damping applied to the runs that produce the learning signal.
    pub damping: f64,
    /// Iteration cap of each run. The learning signal is the state after the
    /// run terminates, converged or cap-hit; the cap leaves damped runs room
    /// to actually converge (damping shrinks each step by `1 - damping`).
    pub sweeps: usize,
    pub tol: f64,
}

impl Default for UnsupOptions {
    fn default() -> Self {
        Self {
            n_examples: 5000,
            eta1: 0.03,
            eta2: 0.0003,
            damping: 0.7,
            sweeps: 1000,
            tol: 1e-8,
        }
    }
}

/// Per-epoch train/validation losses of a supervised fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Training log emitted by [`fit_supervised`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitLog {
    pub epochs: Vec<EpochStat>,
    pub chosen: String,
    pub init_val_loss: f64,
    pub final_val_loss: f64,
}

/// Fitted parameters plus the training log.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: CbpParams,
    pub log: FitLog,
}

/// Mean squared error between beliefs (as probabilities) and target marginals.
pub fn loss_mse(beliefs: &BeliefVector, target: &[f64]) -> Result<f64, LearnError> {
    if beliefs.b.len() != target.len() {
        return Err(LearnError::LengthMismatch {
            expected: target.len(),
            got: beliefs.b.len(),
        });
    }
    let n = target.len() as f64;
    Ok(beliefs
        .b
        .iter()
        .zip(target)
        .map(|(&b, &p)| {
            let d = sigmoid(2.0 * b) - p;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// Loss and exact gradient of one example through `sweeps` unrolled sweeps.
pub fn grad_supervised(
    model: &IsingModel,
    params: &CbpParams,
    example: &[f64],
    target: &[f64],
    sweeps: usize,
) -> (f64, ParamGrad) {
    autodiff::loss_and_grad(model, params, example, target, sweeps)
}

fn pack(params: &CbpParams) -> Vec<f64> {
    let mut theta = params.alpha.clone();
    theta.extend_from_slice(&params.beta);
    theta.extend_from_slice(&params.kappa);
    theta.extend_from_slice(&params.gamma);
    theta
}

fn unpack(theta: &[f64], edge_count: usize, node_count: usize) -> CbpParams {
    CbpParams {
        alpha: theta[..edge_count].to_vec(),
        beta: theta[edge_count..2 * edge_count].to_vec(),
        kappa: theta[2 * edge_count..2 * edge_count + node_count].to_vec(),
        gamma: theta[2 * edge_count + node_count..].to_vec(),
    }
}

fn mean_loss(
    model: &IsingModel,
    params: &CbpParams,
    set: &TrainingSet,
    targets: &[Vec<f64>],
    sweeps: usize,
) -> f64 {
    let mut total = 0.0;
    for (example, target) in set.examples.iter().zip(targets) {
        let traj = autodiff::forward(model, params, example, sweeps);
        let n = model.node_count() as f64;
        total += traj
            .final_beliefs()
            .iter()
            .zip(target)
            .map(|(&b, &p)| {
                let d = sigmoid(2.0 * b) - p;
                d * d
            })
            .sum::<f64>()
            / n;
    }
    total / set.len() as f64
}

/// Supervised fit of `(alpha, beta, kappa, gamma)`.
///
/// Initializes at `beta = gamma = 1` and `alpha = kappa = v` from the safe
/// uniform search, then optimizes the mean training MSE; the parameters with
/// the best validation loss (including the initialization) are returned.
pub fn fit_supervised(
    model: &IsingModel,
    train: &TrainingSet,
    val: &TrainingSet,
    opts: &FitOptions,
) -> Result<FitResult, LearnError> {
    let train_targets = train.targets.as_ref().ok_or(LearnError::MissingTargets)?;
    let val_targets = val.targets.as_ref().ok_or(LearnError::MissingTargets)?;
    let g = model.graph();
    let (ne, nn) = (g.edge_count(), g.node_count());

    let beta = vec![1.0; ne];
    let gamma = vec![1.0; nn];
    let (v, _rho) = convergence::find_safe_uniform(model, &beta, &gamma)?;
    let init = CbpParams {
        alpha: vec![v; ne],
        beta,
        kappa: vec![v; nn],
        gamma,
    };

    let val_of = |p: &CbpParams| mean_loss(model, p, val, val_targets, opts.sweeps);
    let init_val = val_of(&init);
    let mut best_params = init.clone();
    let mut best_val = init_val;
    let mut chosen = "init".to_string();
    let mut epochs = Vec::new();

    if matches!(opts.optimizer, FitOptimizer::Rprop | FitOptimizer::Best) {
        let mut theta = pack(&init);
        let mut rprop = optim::Rprop::new(theta.len(), opts.lr);
        let mut since_best = 0usize;
        let mut route_best = f64::INFINITY;
        for epoch in 0..opts.max_epochs {
            let params = unpack(&theta, ne, nn);
            let mut grad = ParamGrad::zeros(ne, nn);
            let mut train_loss = 0.0;
            for (example, target) in train.examples.iter().zip(train_targets) {
                let (l, g) = grad_supervised(model, &params, example, target, opts.sweeps);
                train_loss += l;
                grad.add(&g);
            }
            train_loss /= train.len() as f64;
            grad.scale(1.0 / train.len() as f64);
            rprop.update(&mut theta, &grad.to_vec());

            let candidate = unpack(&theta, ne, nn);
            let val_loss = val_of(&candidate);
            epochs.push(EpochStat {
                epoch,
                train_loss,
                val_loss,
            });
            if val_loss < best_val {
                best_val = val_loss;
                best_params = candidate;
                chosen = "rprop".to_string();
            }
            if val_loss < route_best {
                route_best = val_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > opts.patience {
                    break;
                }
            }
        }
    }

    if matches!(
        opts.optimizer,
        FitOptimizer::LeastSquares | FitOptimizer::Best
    ) {
        let residuals = |theta: &[f64]| -> Vec<f64> {
            let params = unpack(theta, ne, nn);
            let mut out = Vec::with_capacity(train.len() * nn);
            for (example, target) in train.examples.iter().zip(train_targets) {
                let traj = autodiff::forward(model, &params, example, opts.sweeps);
                for (&b, &p) in traj.final_beliefs().iter().zip(target) {
                    out.push(sigmoid(2.0 * b) - p);
                }
            }
            out
        };
        let jacobian = |theta: &[f64]| -> nalgebra::DMatrix<f64> {
            let params = unpack(theta, ne, nn);
            let dim = 2 * ne + 2 * nn;
            let mut jac = nalgebra::DMatrix::zeros(train.len() * nn, dim);
            for (e_idx, example) in train.examples.iter().enumerate() {
                let rows = autodiff::belief_jacobian(model, &params, example, opts.sweeps);
                for (i, row) in rows.iter().enumerate() {
                    for (c, v) in row.values().enumerate() {
                        jac[(e_idx * nn + i, c)] = *v;
                    }
                }
            }
            jac
        };
        let lm_opts = optim::LmOptions::default();
        optim::levenberg_marquardt(&pack(&init), residuals, jacobian, &lm_opts, |accepted| {
            let params = unpack(&accepted.theta, ne, nn);
            let val_loss = val_of(&params);
            if val_loss < best_val {
                best_val = val_loss;
                best_params = params;
                chosen = "least-squares".to_string();
            }
        });
    }

    Ok(FitResult {
        params: best_params,
        log: FitLog {
            epochs,
            chosen,
            init_val_loss: init_val,
            final_val_loss: best_val,
        },
    })
}

/// One online update of `(alpha, kappa)` from a single example.
///
/// A damped run at the current parameters supplies the messages `M` and
/// beliefs `B` (at convergence or at the sweep cap); `beta` and `gamma` are
/// untouched.
pub fn unsupervised_step(
    model: &IsingModel,
    params: &CbpParams,
    example: &[f64],
    eta1: f64,
    eta2: f64,
    opts: &UnsupOptions,
) -> Result<CbpParams, LearnError> {
    let run_opts = RunOptions {
        max_iters: opts.sweeps,
        tol: opts.tol,
        damping: opts.damping,
        ..Default::default()
    };
    let with_input = model.with_m_ext(example)?;
    let report = run_cbp(&with_input, params, &run_opts);
    let mut next = params.clone();
    for (k, &(i, j)) in model.graph().edges().iter().enumerate() {
        let m_ij = report.messages.m[2 * k];
        let m_ji = report.messages.m[2 * k + 1];
        let b_i = report.beliefs.b[i];
        let b_j = report.beliefs.b[j];
        next.alpha[k] +=
            eta1 * (m_ji * (b_i - params.alpha[k] * m_ji) + m_ij * (b_j - params.alpha[k] * m_ij));
    }
    for ((kappa, &ext), &belief) in next.kappa.iter_mut().zip(example).zip(&report.beliefs.b) {
        *kappa -= eta2 * ext * (belief - ext);
    }
    Ok(next)
}

/// Unsupervised fit from pure-noise inputs.
///
/// Draws `n_examples` vectors `M_ext ~ N(0, 1)`, applies [`unsupervised_step`]
/// per example with damped runs, and halves both learning rates after one
/// third and after two thirds of the examples. Starts from BP parameters.
pub fn fit_unsupervised(
    model: &IsingModel,
    opts: &UnsupOptions,
    seed: u64,
) -> Result<CbpParams, LearnError> {
    let mut params = CbpParams::bp(model.graph());
    let mut rng = seeded_rng(seed);
    let n = model.node_count();
    let mut eta1 = opts.eta1;
    let mut eta2 = opts.eta2;
    let first_cut = opts.n_examples / 3;
    let second_cut = 2 * opts.n_examples / 3;
    for idx in 0..opts.n_examples {
        if idx == first_cut || idx == second_cut {
            eta1 *= 0.5;
            eta2 *= 0.5;
        }
        let example: Vec<f64> = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        params = unsupervised_step(model, &params, &example, eta1, eta2, opts)?;
    }
    Ok(params)
}

/// Benchmark score: `-(1/N) sum_graphs log10(example-averaged MSE)`.
/// Higher is better; an order of magnitude in MSE is one score point.
pub fn score(per_graph_mse: &[f64]) -> Result<f64, LearnError> {
    let mut total = 0.0;
    for (i, &mse) in per_graph_mse.iter().enumerate() {
        if !mse.is_finite() || mse <= 0.0 {
            return Err(LearnError::NonPositiveMse(i));
        }
        total += mse.log10();
    }
    Ok(-total / per_graph_mse.len() as f64)
}
