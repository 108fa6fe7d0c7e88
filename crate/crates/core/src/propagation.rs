//! Log-domain message passing for binary pairwise models.
//!
//! All engines share the same synchronous schedule: beliefs are computed from
//! the previous message state, then every directed edge updates at once.
//! Circular BP iterates
//! `M_{i->j} <- f(B_i - alpha_ij M_{j->i}, beta_ij J_ij)` with
//! `B_i = kappa_i (sum_j M_{j->i} + gamma_i M_ext,i)`; Reweighted BP replaces
//! `f` by `g(x, J, alpha, beta) = (1/alpha) atanh(tanh(alpha beta J) tanh(x))`;
//! plain BP is Circular BP at unit parameters. Damping takes partial update
//! steps in message space and does not move fixed points.
//!
//! Non-convergence is not an error: frustrated instances are part of the
//! benchmark, and the run report carries the convergence flag and residual.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::model::{CbpParams, IsingModel, ModelError};
use crate::rng::seeded_rng;

/// Clamp margin keeping `atanh` finite when `tanh` saturates.
const ATANH_MARGIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("alpha[{0}] = 0: the reweighted update divides by alpha")]
    ZeroAlpha(usize),
    #[error("message state has {got} entries, expected {expected}")]
    StateMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One real log-domain message per directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub m: Vec<f64>,
}

impl MessageState {
    pub fn zeros(model: &IsingModel) -> Self {
        Self {
            m: vec![0.0; model.graph().directed_count()],
        }
    }

    /// Seeded `N(0, 1)` messages, for multi-start fixed-point tests.
    pub fn random(model: &IsingModel, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        Self {
            m: (0..model.graph().directed_count())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
        }
    }
}

/// Per-node half log-odds beliefs; `p_i(+1) = sigma(2 B_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub b: Vec<f64>,
}

impl BeliefVector {
    /// Beliefs as probabilities `p_i(x_i = +1)`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.b.iter().map(|&b| sigmoid(2.0 * b)).collect()
    }
}

/// Message initialization for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// All-zero messages (uniform message distributions).
    #[default]
    Zero,
    /// Seeded standard-normal messages.
    Random(u64),
}

/// Iteration controls shared by every engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    pub init: Init,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-8,
            damping: 0.0,
            init: Init::Zero,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let ok = self.max_iters >= 1
            && self.tol > 0.0
            && (0.0..1.0).contains(&self.damping)
            && self.damping.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PropagationError::Model(ModelError::Json(format!(
                "invalid run options: max_iters {}, tol {}, damping {}",
                self.max_iters, self.tol, self.damping
            ))))
        }
    }
}

/// Outcome of a run: convergence flag, residual, final beliefs and messages.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub converged: bool,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub beliefs: BeliefVector,
    pub messages: MessageState,
}

impl RunReport {
    /// JSON view: flags, residual, and beliefs as probabilities.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct View<'a> {
            converged: bool,
            iterations_used: usize,
            final_residual: f64,
            beliefs_p_plus: Vec<f64>,
            messages: &'a [f64],
        }
        serde_json::to_value(View {
            converged: self.converged,
            iterations_used: self.iterations_used,
            final_residual: self.final_residual,
            beliefs_p_plus: self.beliefs.probabilities(),
            messages: &self.messages.m,
        })
        .expect("report serialization cannot fail")
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sign(x) * atanh(clamp(c * tanh(|x|)))`.
///
/// Factoring the sign out makes the map exactly odd in `x` (libm `tanh` and
/// `atanh` are not sign-symmetric to the last ulp on every platform), and the
/// clamp keeps it total when `tanh` saturates.
pub(crate) fn odd_atanh_product(c: f64, x: f64) -> f64 {
    let u = (c * x.abs().tanh()).clamp(-(1.0 - ATANH_MARGIN), 1.0 - ATANH_MARGIN);
    let magnitude = u.atanh();
    if x.is_sign_negative() {
        -magnitude
    } else {
        magnitude
    }
}

/// The Ising message nonlinearity `f(x, J) = atanh(tanh(J) tanh(x))`.
///
/// Total after clamping; the output magnitude is bounded by `|J|`.
pub fn f_update(x: f64, coupling: f64) -> f64 {
    odd_atanh_product(coupling.tanh(), x)
}

/// The reweighted-BP nonlinearity
/// `g(x, J, alpha, beta) = (1/alpha) atanh(tanh(alpha beta J) tanh(x))`.
///
/// `alpha = 0` is rejected; that limit is the mean-field method, served by
/// [`run_mean_field`].
pub fn g_update(x: f64, coupling: f64, alpha: f64, beta: f64) -> Result<f64, PropagationError> {
    if alpha == 0.0 {
        return Err(PropagationError::ZeroAlpha(0));
    }
    Ok(odd_atanh_product((alpha * beta * coupling).tanh(), x) / alpha)
}

/// Beliefs `B_i = kappa_i (sum_{j in N(i)} M_{j->i} + gamma_i M_ext,i)`.
pub fn beliefs(model: &IsingModel, params: &CbpParams, msgs: &MessageState) -> BeliefVector {
    let dir = model.graph().directed();
    let b = (0..model.node_count())
        .map(|i| {
            let mut sum = 0.0;
            for &e in &dir.incoming[i] {
                sum += msgs.m[e];
            }
            params.kappa[i] * (sum + params.gamma[i] * model.m_ext()[i])
        })
        .collect();
    BeliefVector { b }
}

fn step_generic<F>(
    model: &IsingModel,
    params: &CbpParams,
    msgs: &MessageState,
    damping: f64,
    edge_fn: F,
) -> MessageState
where
    F: Fn(usize, f64) -> f64,
{
    let dir = model.graph().directed();
    let bel = beliefs(model, params, msgs);
    let m = (0..msgs.m.len())
        .map(|e| {
            let k = dir.undirected[e];
            let x = bel.b[dir.src[e]] - params.alpha[k] * msgs.m[dir.rev[e]];
            let updated = edge_fn(e, x);
            if damping == 0.0 {
                updated
            } else {
                (1.0 - damping) * updated + damping * msgs.m[e]
            }
        })
        .collect();
    MessageState { m }
}

/// One synchronous Circular BP sweep with damping `epsilon`.
pub fn step_cbp(
    model: &IsingModel,
    params: &CbpParams,
    msgs: &MessageState,
    damping: f64,
) -> MessageState {
    let dir = model.graph().directed();
    step_generic(model, params, msgs, damping, |e, x| {
        let k = dir.undirected[e];
        f_update(x, params.beta[k] * model.coupling(k))
    })
}

/// One synchronous Reweighted BP sweep; all `alpha` must be nonzero.
pub fn step_reweighted(
    model: &IsingModel,
    params: &CbpParams,
    msgs: &MessageState,
    damping: f64,
) -> Result<MessageState, PropagationError> {
    if let Some(k) = params.alpha.iter().position(|&a| a == 0.0) {
        return Err(PropagationError::ZeroAlpha(k));
    }
    let dir = model.graph().directed();
    Ok(step_generic(model, params, msgs, damping, |e, x| {
        let k = dir.undirected[e];
        let a = params.alpha[k];
        odd_atanh_product((a * params.beta[k] * model.coupling(k)).tanh(), x) / a
    }))
}

fn run_generic<S>(model: &IsingModel, params: &CbpParams, opts: &RunOptions, step: S) -> RunReport
where
    S: Fn(&MessageState) -> MessageState,
{
    let mut msgs = match opts.init {
        Init::Zero => MessageState::zeros(model),
        Init::Random(seed) => MessageState::random(model, seed),
    };
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        let next = step(&msgs);
        residual = msgs
            .m
            .iter()
            .zip(&next.m)
            .map(|(old, new)| (new - old).abs())
            .fold(0.0, f64::max);
        msgs = next;
        iterations = it;
        if residual <= opts.tol {
            break;
        }
    }
    // Degenerate case: no edges means no messages and an immediate fixed point.
    if msgs.m.is_empty() {
        residual = 0.0;
    }
    RunReport {
        converged: residual <= opts.tol,
        iterations_used: iterations,
        final_residual: residual,
        beliefs: beliefs(model, params, &msgs),
        messages: msgs,
    }
}

/// Runs Circular BP until the max-abs message change drops to `tol` or
/// `max_iters` sweeps have been taken.
pub fn run_cbp(model: &IsingModel, params: &CbpParams, opts: &RunOptions) -> RunReport {
    run_generic(model, params, opts, |m| {
        step_cbp(model, params, m, opts.damping)
    })
}

/// Plain BP: Circular BP at unit parameters.
pub fn run_bp(model: &IsingModel, opts: &RunOptions) -> RunReport {
    run_cbp(model, &CbpParams::bp(model.graph()), opts)
}

/// Reweighted BP with the `1/alpha` exponent; errors on any zero `alpha`.
pub fn run_reweighted(
    model: &IsingModel,
    params: &CbpParams,
    opts: &RunOptions,
) -> Result<RunReport, PropagationError> {
    if let Some(k) = params.alpha.iter().position(|&a| a == 0.0) {
        return Err(PropagationError::ZeroAlpha(k));
    }
    let dir = model.graph().directed();
    Ok(run_generic(model, params, opts, |m| {
        step_generic(model, params, m, opts.damping, |e, x| {
            let k = dir.undirected[e];
            let a = params.alpha[k];
            odd_atanh_product((a * params.beta[k] * model.coupling(k)).tanh(), x) / a
        })
    }))
}

/// Mean-field baseline: iterates
/// `B_i <- sum_{j in N(i)} J_ij tanh(B_j) + M_ext,i`, damped by `epsilon`.
///
/// This is the Ising closed form of variational message passing, whose
/// messages are `M_{i->j} = J_ij tanh(B_i)`; the report carries those.
pub fn run_mean_field(model: &IsingModel, opts: &RunOptions) -> RunReport {
    let n = model.node_count();
    let dir = model.graph().directed();
    let mut b = vec![0.0f64; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        let mut next = vec![0.0f64; n];
        for i in 0..n {
            let mut sum = model.m_ext()[i];
            for &e in &dir.incoming[i] {
                sum += model.coupling(dir.undirected[e]) * b[dir.src[e]].tanh();
            }
            next[i] = (1.0 - opts.damping) * sum + opts.damping * b[i];
        }
        residual = b
            .iter()
            .zip(&next)
            .map(|(old, new)| (new - old).abs())
            .fold(0.0, f64::max);
        b = next;
        iterations = it;
        if residual <= opts.tol {
            break;
        }
    }
    let messages = MessageState {
        m: (0..model.graph().directed_count())
            .map(|e| model.coupling(dir.undirected[e]) * b[dir.src[e]].tanh())
            .collect(),
    };
    RunReport {
        converged: residual <= opts.tol,
        iterations_used: iterations,
        final_residual: residual,
        beliefs: BeliefVector { b },
        messages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;
    use crate::model::{IsingModel, UndirectedGraph};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_node_model() -> IsingModel {
        let g = UndirectedGraph::new(2, &[(0, 1)]).unwrap();
        IsingModel::new(g, &[((0, 1), 1.0)], vec![1.0, 0.0]).unwrap()
    }

    /// Independently coded BP sweep in the message-exclusion form, sharing the
    /// engine's summation order so that the comparison is bit-for-bit.
    fn bp_step_independent(model: &IsingModel, msgs: &[f64]) -> Vec<f64> {
        let g = model.graph();
        let mut out = vec![0.0; msgs.len()];
        for e in 0..msgs.len() {
            let i = g.directed().src[e];
            let mut belief = 0.0;
            for &j in g.neighbors(i) {
                belief += msgs[g.directed_id(j, i).unwrap()];
            }
            belief += model.m_ext()[i];
            let opposite = msgs[g.directed().rev[e]];
            let k = g.directed().undirected[e];
            out[e] = f_update(belief - opposite, model.coupling(k));
        }
        out
    }

    #[test]
    fn f_update_values() {
        assert_eq!(f_update(0.0, 1.0), 0.0);
        assert_eq!(f_update(5.0, 0.0), 0.0);
        // High-precision value of atanh(tanh(1) * tanh(0.5)).
        assert_relative_eq!(f_update(0.5, 1.0), 0.3676628320277596, epsilon = 1e-15);
        // Saturated couplings stay finite.
        assert!(f_update(700.0, 700.0).is_finite());
    }

    #[test]
    fn g_update_reduces_and_rejects_zero_alpha() {
        for &(x, j) in &[(0.3, 1.0), (-1.2, 0.4), (2.0, -2.0)] {
            assert_eq!(g_update(x, j, 1.0, 1.0).unwrap(), f_update(x, j));
        }
        assert_eq!(g_update(0.0, 3.0, 0.7, 1.3).unwrap(), 0.0);
        assert!(g_update(1.0, 1.0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn f_update_is_odd(x in -5.0f64..5.0, j in -3.0f64..3.0) {
            prop_assert_eq!(f_update(-x, j), -f_update(x, j));
        }

        #[test]
        fn g_close_to_f_for_moderate_coupling(
            x in -3.0f64..3.0,
            j in -1.0f64..1.0,
            a in 0.5f64..1.5,
        ) {
            // The reweighted and circular nonlinearities approximately agree.
            let gap = (g_update(x, j, a, 1.0).unwrap() - f_update(x, j)).abs();
            prop_assert!(gap < 0.25, "gap {} at x={} j={} a={}", gap, x, j, a);
        }
    }

    #[test]
    fn step_cbp_unit_params_is_a_bp_sweep() {
        let g = UndirectedGraph::erdos_renyi(7, 0.6, 4).unwrap();
        let model = IsingModel::spin_glass(g, 5).with_m_ext(&[0.5; 7]).unwrap();
        let params = CbpParams::bp(model.graph());
        let mut msgs = MessageState::random(&model, 9);
        for _ in 0..5 {
            let engine = step_cbp(&model, &params, &msgs, 0.0);
            let independent = bp_step_independent(&model, &msgs.m);
            assert_eq!(engine.m, independent);
            msgs = engine;
        }
    }

    #[test]
    fn zero_messages_zero_field_is_fixed_point() {
        let g = UndirectedGraph::erdos_renyi(6, 0.7, 1).unwrap();
        let model = IsingModel::spin_glass(g, 2);
        let params = CbpParams::bp(model.graph());
        let msgs = MessageState::zeros(&model);
        let next = step_cbp(&model, &params, &msgs, 0.0);
        assert!(next.m.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn damping_preserves_fixed_points() {
        let model = two_node_model();
        let params = CbpParams::bp(model.graph());
        let report = run_cbp(&model, &params, &RunOptions::default());
        assert!(report.converged);
        let damped = step_cbp(&model, &params, &report.messages, 0.5);
        for (a, b) in report.messages.m.iter().zip(&damped.m) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn two_node_fixed_point_matches_hand_unroll() {
        let model = two_node_model();
        let report = run_bp(&model, &RunOptions::default());
        assert!(report.converged);
        assert_relative_eq!(report.beliefs.b[1], f_update(1.0, 1.0), epsilon = 1e-12);
        assert_relative_eq!(report.beliefs.b[1], 0.6625013736789322, epsilon = 1e-12);
    }

    #[test]
    fn bp_exact_on_trees() {
        for seed in 0..5 {
            let g = UndirectedGraph::random_tree(9, seed).unwrap();
            let model = IsingModel::spin_glass(g, seed + 100);
            let inputs = crate::model::TrainingSet::sample_inputs(9, 1, seed + 200);
            let model = model.with_m_ext(&inputs.examples[0]).unwrap();
            let report = run_bp(&model, &RunOptions::default());
            assert!(report.converged);
            let ex = exact::marginals(&model).unwrap();
            for (b, p) in report.beliefs.probabilities().iter().zip(&ex.p_plus) {
                assert!((b - p).abs() < 1e-8, "belief {b} vs exact {p}");
            }
        }
    }

    #[test]
    fn negating_fields_negates_the_trajectory() {
        let g = UndirectedGraph::erdos_renyi(6, 0.8, 13).unwrap();
        let model = IsingModel::spin_glass(g, 14);
        let inputs = crate::model::TrainingSet::sample_inputs(6, 1, 15);
        let model_pos = model.with_m_ext(&inputs.examples[0]).unwrap();
        let negated: Vec<f64> = inputs.examples[0].iter().map(|v| -v).collect();
        let model_neg = model.with_m_ext(&negated).unwrap();
        let params = CbpParams::bp(model.graph());

        let mut pos = MessageState::zeros(&model_pos);
        let mut neg = MessageState::zeros(&model_neg);
        for _ in 0..20 {
            pos = step_cbp(&model_pos, &params, &pos, 0.0);
            neg = step_cbp(&model_neg, &params, &neg, 0.0);
            for (p, n) in pos.m.iter().zip(&neg.m) {
                assert_eq!(*p, -*n);
            }
        }
        let bp = beliefs(&model_pos, &params, &pos);
        let bn = beliefs(&model_neg, &params, &neg);
        for (p, n) in bp.b.iter().zip(&bn.b) {
            assert_eq!(*p, -*n);
        }
    }

    #[test]
    fn reweighted_alpha_one_matches_cbp_trajectory() {
        let g = UndirectedGraph::erdos_renyi(6, 0.7, 31).unwrap();
        let model = IsingModel::spin_glass(g, 32).with_m_ext(&[0.3; 6]).unwrap();
        let mut params = CbpParams::bp(model.graph());
        for (k, v) in params.beta.iter_mut().enumerate() {
            *v = 0.8 + 0.1 * k as f64;
        }
        params.kappa.iter_mut().for_each(|v| *v = 0.9);

        let mut a = MessageState::zeros(&model);
        let mut b = MessageState::zeros(&model);
        for _ in 0..15 {
            a = step_cbp(&model, &params, &a, 0.0);
            b = step_reweighted(&model, &params, &b, 0.0).unwrap();
            assert_eq!(a.m, b.m);
        }
    }

    #[test]
    fn reweighted_exact_on_tree_at_unit_params() {
        let g = UndirectedGraph::random_tree(8, 43).unwrap();
        let model = IsingModel::spin_glass(g, 44).with_m_ext(&[0.4; 8]).unwrap();
        let params = CbpParams::bp(model.graph());
        let report = run_reweighted(&model, &params, &RunOptions::default()).unwrap();
        assert!(report.converged);
        let ex = exact::marginals(&model).unwrap();
        for (b, p) in report.beliefs.probabilities().iter().zip(&ex.p_plus) {
            assert!((b - p).abs() < 1e-8);
        }
    }

    #[test]
    fn reweighted_close_to_cbp_for_weak_couplings() {
        // Same parameters, small |J|: the two algorithms' beliefs stay close
        // on cyclic graphs.
        let mut max_gap = 0.0f64;
        for seed in 0..5 {
            let g = UndirectedGraph::erdos_renyi(6, 0.8, seed).unwrap();
            let mut model = IsingModel::spin_glass(g, seed + 50);
            let scaled: Vec<f64> = model.couplings().iter().map(|j| 0.5 * j.tanh()).collect();
            model = IsingModel::from_parts(
                model.graph().clone(),
                scaled,
                vec![0.2; model.node_count()],
            )
            .unwrap();
            let mut params = CbpParams::bp(model.graph());
            params.alpha.iter_mut().for_each(|a| *a = 0.8);
            let opts = RunOptions {
                max_iters: 500,
                ..Default::default()
            };
            let c = run_cbp(&model, &params, &opts);
            let r = run_reweighted(&model, &params, &opts).unwrap();
            if !(c.converged && r.converged) {
                continue;
            }
            for (x, y) in c
                .beliefs
                .probabilities()
                .iter()
                .zip(r.beliefs.probabilities())
            {
                max_gap = max_gap.max((x - y).abs());
            }
        }
        assert!(max_gap < 0.05, "max probability gap {max_gap}");
    }

    #[test]
    fn run_reweighted_rejects_zero_alpha() {
        let model = two_node_model();
        let mut params = CbpParams::bp(model.graph());
        params.alpha[0] = 0.0;
        params.kappa[0] = 1.0;
        assert!(run_reweighted(&model, &params, &RunOptions::default()).is_err());
    }

    #[test]
    fn mean_field_trivial_cases() {
        let g = UndirectedGraph::new(1, &[]).unwrap();
        let m = IsingModel::new(g, &[], vec![0.8]).unwrap();
        let report = run_mean_field(&m, &RunOptions::default());
        assert!(report.converged);
        assert_relative_eq!(report.beliefs.b[0], 0.8, epsilon = 1e-12);

        let g = UndirectedGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let m = IsingModel::new(g, &[((0, 1), 0.0), ((1, 2), 0.0)], vec![0.1, -0.2, 0.3]).unwrap();
        let report = run_mean_field(&m, &RunOptions::default());
        for (b, h) in report.beliefs.b.iter().zip(m.m_ext()) {
            assert_relative_eq!(b, h, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_field_two_node_fixed_point() {
        // B_1 = 1 + tanh(B_2), B_2 = tanh(B_1); the scalar fixed point was
        // solved independently to high precision.
        let model = two_node_model();
        let opts = RunOptions {
            max_iters: 500,
            tol: 1e-12,
            ..Default::default()
        };
        let report = run_mean_field(&model, &opts);
        assert!(report.converged);
        assert_relative_eq!(report.beliefs.b[0], 1.7350619998817082, epsilon = 1e-9);
        assert_relative_eq!(report.beliefs.b[1], 0.9396512948747522, epsilon = 1e-9);
    }

    /// Distribution-space variational message passing:
    /// `m_{i->j}(x_j) ∝ exp(sum_{x_i} log(psi_ij(x_i, x_j)) b_i(x_i))` with
    /// normalized beliefs `b_i ∝ psi_i prod_k m_{k->i}`.
    fn vmp_direct(model: &IsingModel, sweeps: usize) -> Vec<f64> {
        let g = model.graph();
        let n = model.node_count();
        let mut msg = vec![[0.5f64, 0.5f64]; g.directed_count()]; // (p(+1), p(-1))
        let belief = |msg: &Vec<[f64; 2]>| -> Vec<[f64; 2]> {
            (0..n)
                .map(|i| {
                    let h = model.m_ext()[i];
                    let mut lp = h;
                    let mut lm = -h;
                    for &e in &g.directed().incoming[i] {
                        lp += msg[e][0].ln();
                        lm += msg[e][1].ln();
                    }
                    let z = lp.max(lm);
                    let (wp, wm) = ((lp - z).exp(), (lm - z).exp());
                    [wp / (wp + wm), wm / (wp + wm)]
                })
                .collect()
        };
        for _ in 0..sweeps {
            let b = belief(&msg);
            let mut next = msg.clone();
            for (e, slot) in next.iter_mut().enumerate() {
                let i = g.directed().src[e];
                let j_val = model.coupling(g.directed().undirected[e]);
                // log psi(x_i, x_j) = J x_i x_j, averaged over b_i.
                let avg = j_val * (b[i][0] - b[i][1]);
                let (wp, wm) = (avg.exp(), (-avg).exp());
                *slot = [wp / (wp + wm), wm / (wp + wm)];
            }
            msg = next;
        }
        belief(&msg)
            .iter()
            .map(|p| 0.5 * (p[0] / p[1]).ln())
            .collect()
    }

    #[test]
    fn mean_field_matches_direct_variational_message_passing() {
        for (n, edges) in [
            (2usize, vec![(0usize, 1usize)]),
            (3, vec![(0, 1), (1, 2)]),
            (3, vec![(0, 1), (1, 2), (0, 2)]),
        ] {
            let g = UndirectedGraph::new(n, &edges).unwrap();
            let couplings: Vec<((usize, usize), f64)> = edges
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| ((a, b), 0.4 + 0.2 * k as f64))
                .collect();
            let m_ext: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64 + 1.0)).collect();
            let model = IsingModel::new(g, &couplings, m_ext).unwrap();
            let opts = RunOptions {
                max_iters: 2000,
                tol: 1e-13,
                ..Default::default()
            };
            let report = run_mean_field(&model, &opts);
            assert!(report.converged);
            let direct = vmp_direct(&model, 2000);
            for (a, b) in report.beliefs.b.iter().zip(&direct) {
                assert_relative_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn damping_does_not_move_converged_beliefs() {
        let g = UndirectedGraph::erdos_renyi(7, 0.4, 61).unwrap();
        let model = IsingModel::spin_glass(g, 62)
            .with_m_ext(&[0.25; 7])
            .unwrap();
        let params = CbpParams::uniform(model.graph(), 0.5);
        let opts = |eps: f64| RunOptions {
            max_iters: 2000,
            tol: 1e-12,
            damping: eps,
            init: Init::Zero,
        };
        let plain = run_cbp(&model, &params, &opts(0.0));
        let damped = run_cbp(&model, &params, &opts(0.5));
        assert!(plain.converged && damped.converged);
        for (a, b) in plain.beliefs.b.iter().zip(&damped.beliefs.b) {
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn report_flags_are_consistent() {
        let g = UndirectedGraph::complete(6).unwrap();
        let model = IsingModel::spin_glass(g, 70);
        let model = model.with_m_ext(&[1.0; 6]).unwrap();
        // Strong couplings: amplify to provoke frustration.
        let strong: Vec<f64> = model.couplings().iter().map(|j| 3.0 * j).collect();
        let model =
            IsingModel::from_parts(model.graph().clone(), strong, model.m_ext().to_vec()).unwrap();
        let report = run_bp(&model, &RunOptions::default());
        assert_eq!(report.converged, report.final_residual <= 1e-8);
        assert!(report.iterations_used <= 100);
        let json = report.to_json();
        assert!(json["beliefs_p_plus"].as_array().unwrap().len() == 6);
    }
}
