//! Reverse-mode differentiation through the unrolled Circular BP iteration.
//!
//! The forward pass records the message state after every synchronous sweep
//! (zero initialization, no damping); the backward pass walks the sweeps in
//! reverse, accumulating exact adjoints for `alpha`, `beta` (per edge) and
//! `kappa`, `gamma` (per node). Where the `atanh` clamp saturates, the
//! nonlinearity is treated as constant, so its local derivative is zero.

use crate::model::{CbpParams, IsingModel};
use crate::propagation::{odd_atanh_product, sigmoid};

const CLAMP_LIMIT: f64 = 1.0 - 1e-12;

/// Gradient with respect to the full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(edge_count: usize, node_count: usize) -> Self {
        Self {
            alpha: vec![0.0; edge_count],
            beta: vec![0.0; edge_count],
            kappa: vec![0.0; node_count],
            gamma: vec![0.0; node_count],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn add(&mut self, other: &ParamGrad) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += *b;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.kappa)
            .chain(&self.gamma)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.alpha
            .iter_mut()
            .chain(self.beta.iter_mut())
            .chain(self.kappa.iter_mut())
            .chain(self.gamma.iter_mut())
    }

    /// Flattened `[alpha, beta, kappa, gamma]` layout.
    pub fn to_vec(&self) -> Vec<f64> {
        self.values().copied().collect()
    }
}

/// Messages and beliefs after every sweep of a fixed-length run.
pub struct Trajectory {
    /// `msgs[t]` is the message state after `t` sweeps; `msgs[0]` is zero.
    pub msgs: Vec<Vec<f64>>,
    /// `beliefs[t]` matches `msgs[t]`.
    pub beliefs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_beliefs(&self) -> &[f64] {
        self.beliefs.last().expect("at least the initial state")
    }
}

fn beliefs_of(model: &IsingModel, params: &CbpParams, example: &[f64], msgs: &[f64]) -> Vec<f64> {
    let dir = model.graph().directed();
    (0..model.node_count())
        .map(|i| {
            let mut sum = 0.0;
            for &e in &dir.incoming[i] {
                sum += msgs[e];
            }
            params.kappa[i] * (sum + params.gamma[i] * example[i])
        })
        .collect()
}

/// Runs exactly `sweeps` synchronous undamped sweeps from zero messages,
/// recording the whole trajectory. `example` supplies the external fields.
pub fn forward(
    model: &IsingModel,
    params: &CbpParams,
    example: &[f64],
    sweeps: usize,
) -> Trajectory {
    let dir = model.graph().directed();
    let m = model.graph().directed_count();
    let mut msgs = vec![vec![0.0f64; m]];
    let mut beliefs = vec![beliefs_of(model, params, example, &msgs[0])];
    for t in 0..sweeps {
        let prev = &msgs[t];
        let bel = &beliefs[t];
        let mut next = vec![0.0f64; m];
        for (e, out) in next.iter_mut().enumerate() {
            let k = dir.undirected[e];
            let x = bel[dir.src[e]] - params.alpha[k] * prev[dir.rev[e]];
            let c = (params.beta[k] * model.coupling(k)).tanh();
            *out = odd_atanh_product(c, x);
        }
        let bel_next = beliefs_of(model, params, example, &next);
        msgs.push(next);
        beliefs.push(bel_next);
    }
    Trajectory { msgs, beliefs }
}

/// Backward pass: given `seed[i] = dL/dB_i` at the final sweep, returns the
/// exact gradient of `L` with respect to all parameters.
pub fn backward(
    model: &IsingModel,
    params: &CbpParams,
    example: &[f64],
    traj: &Trajectory,
    seed: &[f64],
) -> ParamGrad {
    let g = model.graph();
    let dir = g.directed();
    let m = g.directed_count();
    let n = model.node_count();
    let sweeps = traj.msgs.len() - 1;
    let mut grad = ParamGrad::zeros(g.edge_count(), n);

    // Adjoint of the belief layer at sweep `t`, pushing into kappa/gamma and
    // the messages that feed those beliefs.
    let belief_adjoint = |grad: &mut ParamGrad, bar_b: &[f64], msgs: &[f64], bar_m: &mut [f64]| {
        for i in 0..n {
            if bar_b[i] == 0.0 {
                continue;
            }
            let mut sum = 0.0;
            for &e in &dir.incoming[i] {
                sum += msgs[e];
            }
            grad.kappa[i] += bar_b[i] * (sum + params.gamma[i] * example[i]);
            grad.gamma[i] += bar_b[i] * params.kappa[i] * example[i];
            for &e in &dir.incoming[i] {
                bar_m[e] += bar_b[i] * params.kappa[i];
            }
        }
    };

    let mut bar_m = vec![0.0f64; m];
    belief_adjoint(&mut grad, seed, &traj.msgs[sweeps], &mut bar_m);

    for t in (0..sweeps).rev() {
        let msgs_t = &traj.msgs[t];
        let bel_t = &traj.beliefs[t];
        let mut bar_b = vec![0.0f64; n];
        let mut bar_prev = vec![0.0f64; m];
        for e in 0..m {
            let bar = bar_m[e];
            if bar == 0.0 {
                continue;
            }
            let k = dir.undirected[e];
            let x = bel_t[dir.src[e]] - params.alpha[k] * msgs_t[dir.rev[e]];
            let c = (params.beta[k] * model.coupling(k)).tanh();
            let tx = x.tanh();
            let u = c * tx;
            if u.abs() >= CLAMP_LIMIT {
                continue; // saturated: constant region
            }
            let inv = 1.0 / (1.0 - u * u);
            let dm_dx = c * (1.0 - tx * tx) * inv;
            let dm_dbeta = model.coupling(k) * (1.0 - c * c) * tx * inv;
            grad.beta[k] += bar * dm_dbeta;
            let bar_x = bar * dm_dx;
            grad.alpha[k] -= bar_x * msgs_t[dir.rev[e]];
            bar_prev[dir.rev[e]] -= bar_x * params.alpha[k];
            bar_b[dir.src[e]] += bar_x;
        }
        belief_adjoint(&mut grad, &bar_b, msgs_t, &mut bar_prev);
        bar_m = bar_prev;
    }
    grad
}

/// Loss `(1/n) sum_i (sigma(2 B_i) - p_i)^2` after `sweeps` sweeps, together
/// with its exact parameter gradient.
pub fn loss_and_grad(
    model: &IsingModel,
    params: &CbpParams,
    example: &[f64],
    target: &[f64],
    sweeps: usize,
) -> (f64, ParamGrad) {
    let n = model.node_count() as f64;
    let traj = forward(model, params, example, sweeps);
    let final_b = traj.final_beliefs();
    let mut loss = 0.0;
    let mut seed = vec![0.0; final_b.len()];
    for (i, (&b, &p)) in final_b.iter().zip(target).enumerate() {
        let prob = sigmoid(2.0 * b);
        let diff = prob - p;
        loss += diff * diff / n;
        seed[i] = (4.0 / n) * diff * prob * (1.0 - prob);
    }
    let grad = backward(model, params, example, &traj, &seed);
    (loss, grad)
}

/// Per-node probability residual Jacobian: row `i` is
/// `d sigma(2 B_i) / d theta` after `sweeps` sweeps.
pub fn belief_jacobian(
    model: &IsingModel,
    params: &CbpParams,
    example: &[f64],
    sweeps: usize,
) -> Vec<ParamGrad> {
    let traj = forward(model, params, example, sweeps);
    let final_b = traj.final_beliefs().to_vec();
    (0..model.node_count())
        .map(|i| {
            let prob = sigmoid(2.0 * final_b[i]);
            let mut seed = vec![0.0; final_b.len()];
            seed[i] = 2.0 * prob * (1.0 - prob);
            backward(model, params, example, &traj, &seed)
        })
        .collect()
}
