//! Circular BP on Gaussian Markov random fields.
//!
//! Nodes carry scalar variables; each undirected edge carries a symmetric
//! 2x2 precision block and each node a unitary potential `(P_ext, mu_ext)`.
//! Messages are `(precision, potential)` pairs per directed edge, updated by
//!
//! `P_{i->j} <- g(P_i - alpha_ij P_{j->i})`,
//! `v_{i->j} <- h(v_i - alpha_ij v_{j->i}, P_i - alpha_ij P_{j->i})`
//!
//! with belief parameters `P_i = kappa_i (sum_j P_{j->i} + gamma_i P_ext,i)`
//! and `v_i = kappa_i (sum_j v_{j->i} + gamma_i P_ext,i mu_ext,i)`. The pair
//! functions are `g(y) = beta P^{jj} - (beta P^{ij})^2 / (beta P^{ii} + y)`
//! and `h(x, y) = -beta P^{ij} x / (beta P^{ii} + y)`. At unit parameters this
//! is Gaussian BP, which on convergent loopy models recovers exact means but
//! not exact precisions.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::exact;
use crate::learning::optim::{self, LmOptions, LmOutcome};
use crate::model::{CbpParams, ModelError, UndirectedGraph};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("edge block {0} is not symmetric positive definite")]
    BlockNotSpd(usize),
    #[error("P_ext[{0}] must be positive and finite")]
    BadExternalPrecision(usize),
    #[error("value at node {0} is not finite")]
    NonFinite(usize),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("kappa[{0}] = 0")]
    ZeroKappa(usize),
    #[error("vanishing denominator in pair update")]
    VanishingDenominator,
    #[error("belief precision too close to zero at nodes {0:?}; means undefined")]
    MeanUndefined(Vec<usize>),
    #[error("non-positive precision in KL cost at node {0}")]
    NonPositivePrecision(usize),
    #[error("targets unavailable: {0}")]
    Exact(#[from] crate::exact::ExactError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid gaussian model json: {0}")]
    Json(String),
}

/// Symmetric 2x2 precision block of an edge potential, stored for the
/// canonical orientation `(min, max)`: `pii` couples the smaller node index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeBlock {
    pub pii: f64,
    pub pij: f64,
    pub pjj: f64,
}

impl EdgeBlock {
    pub fn is_spd(&self) -> bool {
        self.pii > 0.0
            && self.pjj > 0.0
            && self.pii * self.pjj - self.pij * self.pij > 0.0
            && self.pii.is_finite()
            && self.pij.is_finite()
            && self.pjj.is_finite()
    }

    /// The block as seen from the sending side of a directed edge.
    pub fn oriented(&self, from_is_min: bool) -> OrientedBlock {
        if from_is_min {
            OrientedBlock {
                from_from: self.pii,
                cross: self.pij,
                to_to: self.pjj,
            }
        } else {
            OrientedBlock {
                from_from: self.pjj,
                cross: self.pij,
                to_to: self.pii,
            }
        }
    }
}

/// Edge block oriented along a directed edge: `from_from` couples the sender.
#[derive(Debug, Clone, Copy)]
pub struct OrientedBlock {
    pub from_from: f64,
    pub cross: f64,
    pub to_to: f64,
}

/// Pairwise Gaussian model: per-edge precision blocks plus per-node unitary
/// potentials `(P_ext, mu_ext)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    graph: UndirectedGraph,
    blocks: Vec<EdgeBlock>,
    p_ext: Vec<f64>,
    mu_ext: Vec<f64>,
}

impl GaussianModel {
    pub fn new(
        graph: UndirectedGraph,
        blocks: Vec<EdgeBlock>,
        p_ext: Vec<f64>,
        mu_ext: Vec<f64>,
    ) -> Result<Self, GaussianError> {
        if blocks.len() != graph.edge_count() {
            return Err(GaussianError::LengthMismatch {
                expected: graph.edge_count(),
                got: blocks.len(),
            });
        }
        if let Some(k) = blocks.iter().position(|b| !b.is_spd()) {
            return Err(GaussianError::BlockNotSpd(k));
        }
        if p_ext.len() != graph.node_count() || mu_ext.len() != graph.node_count() {
            return Err(GaussianError::LengthMismatch {
                expected: graph.node_count(),
                got: p_ext.len().min(mu_ext.len()),
            });
        }
        if let Some(i) = p_ext.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(GaussianError::BadExternalPrecision(i));
        }
        if let Some(i) = mu_ext.iter().position(|m| !m.is_finite()) {
            return Err(GaussianError::NonFinite(i));
        }
        Ok(Self {
            graph,
            blocks,
            p_ext,
            mu_ext,
        })
    }

    /// Bypasses block validation; used to exercise non-SPD error paths.
    pub fn from_parts_unchecked(
        graph: UndirectedGraph,
        blocks: Vec<EdgeBlock>,
        p_ext: Vec<f64>,
        mu_ext: Vec<f64>,
    ) -> Self {
        Self {
            graph,
            blocks,
            p_ext,
            mu_ext,
        }
    }

    /// Random model on an Erdős–Rényi graph. Per edge the covariance recipe
    /// `s ~ U[5, 10]`, `J ~ N(0.5, 1)`, `c = tanh(J) s`,
    /// `Cov = [[s, c], [c, s]]`, block = `Cov^-1`; per node
    /// `P_ext ~ Exp(rate 3)`, `mu_ext ~ N(0, 1)`.
    pub fn sample_suite(n: usize, p: f64, seed: u64) -> Result<Self, GaussianError> {
        let graph = UndirectedGraph::erdos_renyi(n, p, derive_seed(seed, &[1]))?;
        let mut rng = seeded_rng(derive_seed(seed, &[2]));
        let blocks = (0..graph.edge_count())
            .map(|_| {
                let s = rng.gen_range(5.0..10.0);
                let j: f64 =
                    0.5 + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                suite_edge_block(s, j)
            })
            .collect();
        let exp = Exp::new(3.0).expect("positive rate");
        let p_ext = (0..n).map(|_| exp.sample(&mut rng)).collect();
        let mu_ext = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Self::new(graph, blocks, p_ext, mu_ext)
    }

    pub fn graph(&self) -> &UndirectedGraph {
        &self.graph
    }

    pub fn block(&self, edge: usize) -> &EdgeBlock {
        &self.blocks[edge]
    }

    pub fn p_ext(&self) -> &[f64] {
        &self.p_ext
    }

    pub fn mu_ext(&self) -> &[f64] {
        &self.mu_ext
    }

    /// Same graph and blocks with substituted unitary potentials.
    pub fn with_inputs(&self, example: &GaussianExample) -> Result<Self, GaussianError> {
        Self::new(
            self.graph.clone(),
            self.blocks.clone(),
            example.p_ext.clone(),
            example.mu_ext.clone(),
        )
    }

    /// JSON form: `{"n": .., "edges": [[i, j, pii, pij, pjj], ..],
    /// "p_ext": [..], "mu_ext": [..]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<(usize, usize, f64, f64, f64)> = self
            .graph
            .edges()
            .iter()
            .zip(&self.blocks)
            .map(|(&(i, j), b)| (i, j, b.pii, b.pij, b.pjj))
            .collect();
        serde_json::json!({
            "n": self.graph.node_count(),
            "edges": edges,
            "p_ext": self.p_ext,
            "mu_ext": self.mu_ext,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, GaussianError> {
        #[derive(Deserialize)]
        struct Raw {
            n: usize,
            edges: Vec<(usize, usize, f64, f64, f64)>,
            p_ext: Vec<f64>,
            mu_ext: Vec<f64>,
        }
        let raw: Raw = serde_json::from_value(value.clone())
            .map_err(|e| GaussianError::Json(e.to_string()))?;
        let pairs: Vec<(usize, usize)> = raw.edges.iter().map(|&(i, j, ..)| (i, j)).collect();
        let graph = UndirectedGraph::new(raw.n, &pairs)?;
        // Re-key blocks onto the canonical edge order.
        let mut blocks = vec![None; graph.edge_count()];
        for &(i, j, pii, pij, pjj) in &raw.edges {
            let id = graph.edge_id(i, j).expect("edge just inserted");
            let block = if i < j {
                EdgeBlock { pii, pij, pjj }
            } else {
                EdgeBlock {
                    pii: pjj,
                    pij,
                    pjj: pii,
                }
            };
            blocks[id] = Some(block);
        }
        let blocks = blocks.into_iter().map(|b| b.expect("filled")).collect();
        Self::new(graph, blocks, raw.p_ext, raw.mu_ext)
    }
}

/// Edge block of the random suite: the inverse of the covariance
/// `[[s, c], [c, s]]` with `c = tanh(J) s`. The anti-diagonal sign is the
/// negated interaction sign.
pub fn suite_edge_block(s: f64, j: f64) -> EdgeBlock {
    let c = j.tanh() * s;
    let det = s * s - c * c; // > 0 since |tanh| < 1
    EdgeBlock {
        pii: s / det,
        pij: -c / det,
        pjj: s / det,
    }
}

/// One external-input example: per-node `(P_ext, mu_ext)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianExample {
    pub p_ext: Vec<f64>,
    pub mu_ext: Vec<f64>,
}

/// `count` random input examples drawn as in the model generator.
pub fn sample_gaussian_inputs(n: usize, count: usize, seed: u64) -> Vec<GaussianExample> {
    let mut rng = seeded_rng(seed);
    let exp = Exp::new(3.0).expect("positive rate");
    (0..count)
        .map(|_| GaussianExample {
            p_ext: (0..n).map(|_| exp.sample(&mut rng)).collect(),
            mu_ext: (0..n)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect(),
        })
        .collect()
}

const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Precision half of the pair update:
/// `g(y) = beta P^{to,to} - (beta P^{cross})^2 / (beta P^{from,from} + y)`.
pub fn gaussian_g(y: f64, block: OrientedBlock, beta: f64) -> Result<f64, GaussianError> {
    let den = beta * block.from_from + y;
    if den.abs() < DENOMINATOR_FLOOR {
        return Err(GaussianError::VanishingDenominator);
    }
    Ok(beta * block.to_to - (beta * block.cross).powi(2) / den)
}

/// Potential half of the pair update:
/// `h(x, y) = -beta P^{cross} x / (beta P^{from,from} + y)`.
pub fn gaussian_h(x: f64, y: f64, block: OrientedBlock, beta: f64) -> Result<f64, GaussianError> {
    let den = beta * block.from_from + y;
    if den.abs() < DENOMINATOR_FLOOR {
        return Err(GaussianError::VanishingDenominator);
    }
    Ok(-(beta * block.cross) * x / den)
}

/// Per-directed-edge `(precision, potential)` message state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessageState {
    pub precision: Vec<f64>,
    pub potential: Vec<f64>,
}

impl GaussianMessageState {
    /// `P = 1, v = 0`: the deterministic default initialization.
    pub fn unit(model: &GaussianModel) -> Self {
        let m = model.graph().directed_count();
        Self {
            precision: vec![1.0; m],
            potential: vec![0.0; m],
        }
    }

    /// Seeded random positive precisions and normal potentials.
    pub fn random(model: &GaussianModel, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let m = model.graph().directed_count();
        Self {
            precision: (0..m).map(|_| rng.gen_range(0.5..1.5)).collect(),
            potential: (0..m)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect(),
        }
    }
}

/// Message initialization for a Gaussian run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianInit {
    #[default]
    Unit,
    Random(u64),
}

/// Iteration controls for [`run_gaussian_cbp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianRunOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    pub init: GaussianInit,
}

impl Default for GaussianRunOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-10,
            damping: 0.0,
            init: GaussianInit::Unit,
        }
    }
}

/// Result of a Gaussian Circular BP run.
#[derive(Debug, Clone)]
pub struct GaussianRun {
    pub means: Vec<f64>,
    pub precisions: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub messages: GaussianMessageState,
    /// True if any message precision went non-positive during the run.
    pub negative_precision_seen: bool,
}

/// Iterates the Gaussian Circular BP updates; damping acts in `(P, v)` space.
pub fn run_gaussian_cbp(
    model: &GaussianModel,
    params: &CbpParams,
    opts: &GaussianRunOptions,
) -> Result<GaussianRun, GaussianError> {
    if let Some(i) = params.kappa.iter().position(|&k| k == 0.0) {
        return Err(GaussianError::ZeroKappa(i));
    }
    let g = model.graph();
    let dir = g.directed();
    let n = g.node_count();
    let mut msgs = match opts.init {
        GaussianInit::Unit => GaussianMessageState::unit(model),
        GaussianInit::Random(seed) => GaussianMessageState::random(model, seed),
    };
    let mut negative_seen = msgs.precision.iter().any(|&p| p <= 0.0);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    let belief = |msgs: &GaussianMessageState| -> (Vec<f64>, Vec<f64>) {
        let mut bp = vec![0.0; n];
        let mut bv = vec![0.0; n];
        for i in 0..n {
            let mut sp = 0.0;
            let mut sv = 0.0;
            for &e in &dir.incoming[i] {
                sp += msgs.precision[e];
                sv += msgs.potential[e];
            }
            bp[i] = params.kappa[i] * (sp + params.gamma[i] * model.p_ext[i]);
            bv[i] = params.kappa[i] * (sv + params.gamma[i] * model.p_ext[i] * model.mu_ext[i]);
        }
        (bp, bv)
    };

    for it in 1..=opts.max_iters {
        let (bp, bv) = belief(&msgs);
        let mut next = msgs.clone();
        for e in 0..g.directed_count() {
            let i = dir.src[e];
            let k = dir.undirected[e];
            let from_is_min = dir.src[e] < dir.dst[e];
            let block = model.blocks[k].oriented(from_is_min);
            let y = bp[i] - params.alpha[k] * msgs.precision[dir.rev[e]];
            let x = bv[i] - params.alpha[k] * msgs.potential[dir.rev[e]];
            let p_new = gaussian_g(y, block, params.beta[k])?;
            let v_new = gaussian_h(x, y, block, params.beta[k])?;
            next.precision[e] = (1.0 - opts.damping) * p_new + opts.damping * msgs.precision[e];
            next.potential[e] = (1.0 - opts.damping) * v_new + opts.damping * msgs.potential[e];
            if !(next.precision[e].is_finite() && next.potential[e].is_finite()) {
                return Err(GaussianError::VanishingDenominator);
            }
        }
        residual = msgs
            .precision
            .iter()
            .chain(&msgs.potential)
            .zip(next.precision.iter().chain(&next.potential))
            .map(|(old, new)| (new - old).abs())
            .fold(0.0, f64::max);
        msgs = next;
        negative_seen |= msgs.precision.iter().any(|&p| p <= 0.0);
        iterations = it;
        if residual <= opts.tol {
            break;
        }
    }
    if g.directed_count() == 0 {
        residual = 0.0;
    }

    let (bp, bv) = belief(&msgs);
    let bad: Vec<usize> = (0..n).filter(|&i| bp[i].abs() < 1e-12).collect();
    if !bad.is_empty() {
        return Err(GaussianError::MeanUndefined(bad));
    }
    let means = bv.iter().zip(&bp).map(|(v, p)| v / p).collect();
    Ok(GaussianRun {
        means,
        precisions: bp,
        converged: residual <= opts.tol,
        iterations_used: iterations,
        final_residual: residual,
        messages: msgs,
        negative_precision_seen: negative_seen,
    })
}

/// Summed per-node Gaussian KL divergence `KL(true || approx)`:
/// `sum_i [log(sigma_a / sigma_t) + (sigma_t^2 + (mu_t - mu_a)^2) /
/// (2 sigma_a^2) - 1/2]` with `sigma = precision^(-1/2)`.
pub fn kl_cost(approx: (&[f64], &[f64]), exact: (&[f64], &[f64])) -> Result<f64, GaussianError> {
    let (mu_a, prec_a) = approx;
    let (mu_t, prec_t) = exact;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        if prec_a[i] <= 0.0 || prec_t[i] <= 0.0 {
            return Err(GaussianError::NonPositivePrecision(i));
        }
        total += node_kl(mu_t[i], prec_t[i], mu_a[i], prec_a[i]);
    }
    Ok(total)
}

fn node_kl(mu_t: f64, prec_t: f64, mu_a: f64, prec_a: f64) -> f64 {
    let var_t = 1.0 / prec_t;
    let var_a = 1.0 / prec_a;
    0.5 * (var_a / var_t).ln() + (var_t + (mu_t - mu_a).powi(2)) / (2.0 * var_a) - 0.5
}

/// Controls for [`fit_gaussian`].
#[derive(Debug, Clone, Copy)]
pub struct GaussianFitOptions {
    /// Levenberg-Marquardt iteration budget.
    pub max_iters: usize,
    pub run: GaussianRunOptions,
}

impl Default for GaussianFitOptions {
    fn default() -> Self {
        Self {
            max_iters: 40,
            run: GaussianRunOptions {
                max_iters: 200,
                tol: 1e-9,
                damping: 0.0,
                init: GaussianInit::Unit,
            },
        }
    }
}

/// Supervised fit of `(alpha, beta, kappa, gamma)` on a Gaussian model by
/// nonlinear least squares on per-node KL residuals.
///
/// All parameters start at 1 (plain Gaussian BP) and the returned set is the
/// best validation performer seen, so its validation cost never exceeds the
/// initialization's.
pub fn fit_gaussian(
    model: &GaussianModel,
    train: &[GaussianExample],
    val: &[GaussianExample],
    opts: &GaussianFitOptions,
) -> Result<CbpParams, GaussianError> {
    let g = model.graph();
    let ne = g.edge_count();
    let nn = g.node_count();
    type Truth = Vec<(Vec<f64>, Vec<f64>)>;
    let exact_for = |examples: &[GaussianExample]| -> Result<Truth, GaussianError> {
        examples
            .iter()
            .map(|ex| Ok(exact::gaussian_marginals(&model.with_inputs(ex)?)?))
            .collect()
    };
    let train_truth = exact_for(train)?;
    let val_truth = exact_for(val)?;

    let unpack = |theta: &[f64]| CbpParams {
        alpha: theta[..ne].to_vec(),
        beta: theta[ne..2 * ne].to_vec(),
        kappa: theta[2 * ne..2 * ne + nn].to_vec(),
        gamma: theta[2 * ne + nn..].to_vec(),
    };

    const BAD_RESIDUAL: f64 = 1e3;
    let residuals = |theta: &[f64]| -> Vec<f64> {
        let params = unpack(theta);
        let mut out = Vec::with_capacity(train.len() * nn);
        for (ex, truth) in train.iter().zip(&train_truth) {
            let run = model
                .with_inputs(ex)
                .and_then(|m| run_gaussian_cbp(&m, &params, &opts.run));
            match run {
                Ok(run) => {
                    for i in 0..nn {
                        if run.precisions[i] <= 0.0 {
                            out.push(BAD_RESIDUAL);
                        } else {
                            let kl =
                                node_kl(truth.0[i], truth.1[i], run.means[i], run.precisions[i]);
                            out.push(kl.max(1e-300).sqrt().min(BAD_RESIDUAL));
                        }
                    }
                }
                Err(_) => out.resize(out.len() + nn, BAD_RESIDUAL),
            }
        }
        out
    };

    let val_cost = |params: &CbpParams| -> f64 {
        let mut total = 0.0;
        for (ex, truth) in val.iter().zip(&val_truth) {
            let run = model
                .with_inputs(ex)
                .and_then(|m| run_gaussian_cbp(&m, params, &opts.run));
            match run {
                Ok(run) => match kl_cost((&run.means, &run.precisions), (&truth.0, &truth.1)) {
                    Ok(c) => total += c,
                    Err(_) => return f64::INFINITY,
                },
                Err(_) => return f64::INFINITY,
            }
        }
        total
    };

    let theta0 = vec![1.0; 2 * ne + 2 * nn];
    let mut best_params = unpack(&theta0);
    let mut best_val = val_cost(&best_params);

    let lm_opts = LmOptions {
        max_iters: opts.max_iters,
        ..Default::default()
    };
    optim::levenberg_marquardt_fd(&theta0, residuals, &lm_opts, |step: &LmOutcome| {
        let params = unpack(&step.theta);
        let v = val_cost(&params);
        if v < best_val {
            best_val = v;
            best_params = params;
        }
    });
    Ok(best_params)
}
