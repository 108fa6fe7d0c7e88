//! Experiment harness: graph suites, method sweeps, score tables, the
//! Hopfield denoising demo, and IDX ingestion.
//!
//! [`run_experiment`] generates seeded spin-glass suites, fits the requested
//! methods per weighted graph, and evaluates held-out test MSE against the
//! enumeration oracle. Every row is a pure function of `(config, seed)`:
//! per-item seeds are derived from the master seed and the item indices.

pub mod hopfield;
pub mod idx;

pub use hopfield::{
    denoise_demo, hopfield_pseudoinverse, hopfield_recall, DenoiseMethod, DenoiseReport, PatternSet,
};
pub use idx::{load_idx, parse_idx, IdxData};

use serde::Serialize;
use thiserror::Error;

use crate::convergence::ConvergenceError;
use crate::exact::{self, ExactError};
use crate::gaussian::GaussianError;
use crate::learning::{self, optim, FitOptions, LearnError, UnsupOptions};
use crate::model::{CbpParams, IsingModel, ModelError, TrainingSet, UndirectedGraph};
use crate::propagation::{
    run_cbp, run_mean_field, run_reweighted, sigmoid, PropagationError, RunOptions,
};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("grid topology needs a square node count, got {0}")]
    NotSquare(usize),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error("unknown topology '{0}'")]
    UnknownTopology(String),
    #[error("config: {0}")]
    Config(String),
    #[error("pattern {0} has an entry outside {{-1, +1}}")]
    BadPattern(usize),
    #[error("pattern set is empty or ragged")]
    EmptyPatterns,
    #[error("patterns are not linearly independent (Gram matrix is singular)")]
    RankDeficient,
    #[error("noise fraction {0} outside [0, 1]")]
    BadNoise(f64),
    #[error("bad IDX magic {value:#010x} at byte offset {offset}")]
    BadMagic { value: u32, offset: usize },
    #[error("truncated IDX payload: need {expected} bytes at offset {offset}, have {got}")]
    Truncated {
        expected: usize,
        got: usize,
        offset: usize,
    },
    #[error("csv parse error on line {0}")]
    Csv(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// Graph family of a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    ErdosRenyi,
    Grid,
    Complete,
    Tree,
}

impl Topology {
    pub fn parse(s: &str) -> Result<Self, BenchError> {
        match s {
            "erdos-renyi" => Ok(Self::ErdosRenyi),
            "grid" => Ok(Self::Grid),
            "complete" => Ok(Self::Complete),
            "tree" => Ok(Self::Tree),
            other => Err(BenchError::UnknownTopology(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ErdosRenyi => "erdos-renyi",
            Self::Grid => "grid",
            Self::Complete => "complete",
            Self::Tree => "tree",
        }
    }
}

/// Inference method entering the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bp,
    CbpSupervised,
    CbpUnsupervised,
    Reweighted,
    MeanField,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self, BenchError> {
        match s {
            "bp" => Ok(Self::Bp),
            "cbp-supervised" => Ok(Self::CbpSupervised),
            "cbp-unsupervised" => Ok(Self::CbpUnsupervised),
            "reweighted" => Ok(Self::Reweighted),
            "mean-field" => Ok(Self::MeanField),
            other => Err(BenchError::UnknownMethod(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bp => "bp",
            Self::CbpSupervised => "cbp-supervised",
            Self::CbpUnsupervised => "cbp-unsupervised",
            Self::Reweighted => "reweighted",
            Self::MeanField => "mean-field",
        }
    }
}

/// Full description of a benchmark run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub p_list: Vec<f64>,
    pub graphs_per_p: usize,
    pub n_nodes: usize,
    /// (train, validation, test) sizes.
    pub splits: (usize, usize, usize),
    pub methods: Vec<Method>,
    pub seed: u64,
    pub fit: FitOptions,
    pub unsup: UnsupOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: Topology::ErdosRenyi,
            p_list: vec![0.2, 0.6, 1.0],
            graphs_per_p: 5,
            n_nodes: 9,
            splits: (200, 100, 100),
            methods: vec![Method::Bp, Method::CbpSupervised],
            seed: 0,
            fit: FitOptions::default(),
            unsup: UnsupOptions::default(),
        }
    }
}

/// Named preset matching the scale reported in the benchmark tables
/// (30 graphs per connection probability, p from 0.2 to 1).
pub fn paper_scale_config() -> ExperimentConfig {
    ExperimentConfig {
        p_list: (2..=10).map(|k| k as f64 / 10.0).collect(),
        graphs_per_p: 30,
        ..Default::default()
    }
}

/// One CSV row: a method evaluated on one weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub p: f64,
    pub graph_seed: u64,
    pub method: String,
    pub mean_mse: f64,
    pub converged_fraction: f64,
}

/// Score aggregated over the graphs of one `(p, method)` cell.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreEntry {
    pub p: f64,
    pub method: String,
    pub score: f64,
}

/// Rows plus per-cell scores.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<ScoreEntry>,
}

impl ExperimentResult {
    /// CSV with the documented row schema
    /// `p,graph_seed,method,mean_mse,converged_fraction`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,graph_seed,method,mean_mse,converged_fraction\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.p, r.graph_seed, r.method, r.mean_mse, r.converged_fraction
            ));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "scores": self.summary })
    }
}

/// Parses rows back from [`ExperimentResult::to_csv`] output.
pub fn rows_from_csv(text: &str) -> Result<Vec<ExperimentRow>, BenchError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(BenchError::Csv(idx + 1));
        }
        rows.push(ExperimentRow {
            p: fields[0].parse().map_err(|_| BenchError::Csv(idx + 1))?,
            graph_seed: fields[1].parse().map_err(|_| BenchError::Csv(idx + 1))?,
            method: fields[2].to_string(),
            mean_mse: fields[3].parse().map_err(|_| BenchError::Csv(idx + 1))?,
            converged_fraction: fields[4].parse().map_err(|_| BenchError::Csv(idx + 1))?,
        });
    }
    Ok(rows)
}

fn generate_graph(
    config: &ExperimentConfig,
    p: f64,
    seed: u64,
) -> Result<UndirectedGraph, BenchError> {
    match config.topology {
        Topology::ErdosRenyi => Ok(UndirectedGraph::erdos_renyi(config.n_nodes, p, seed)?),
        Topology::Complete => Ok(UndirectedGraph::complete(config.n_nodes)?),
        Topology::Tree => Ok(UndirectedGraph::random_tree(config.n_nodes, seed)?),
        Topology::Grid => {
            let side = (config.n_nodes as f64).sqrt().round() as usize;
            if side * side != config.n_nodes {
                return Err(BenchError::NotSquare(config.n_nodes));
            }
            Ok(UndirectedGraph::grid(side, side)?)
        }
    }
}

struct PreparedSplits {
    train: TrainingSet,
    val: TrainingSet,
    test: TrainingSet,
}

fn prepare_splits(
    model: &IsingModel,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<PreparedSplits, BenchError> {
    let (ntr, nva, nte) = config.splits;
    let inputs = TrainingSet::sample_inputs(model.node_count(), ntr + nva + nte, seed);
    let with_targets = |examples: &[Vec<f64>]| -> Result<TrainingSet, BenchError> {
        let targets: Result<Vec<Vec<f64>>, BenchError> = examples
            .iter()
            .map(|ex| Ok(exact::marginals(&model.with_m_ext(ex)?)?.p_plus))
            .collect();
        Ok(TrainingSet::new(
            examples.to_vec(),
            Some(targets?),
            model.node_count(),
        )?)
    };
    Ok(PreparedSplits {
        train: with_targets(&inputs.examples[..ntr])?,
        val: with_targets(&inputs.examples[ntr..ntr + nva])?,
        test: with_targets(&inputs.examples[ntr + nva..])?,
    })
}

/// Fits Reweighted BP's `alpha` (with `kappa = beta = gamma = 1`) by
/// finite-difference least squares on the training residuals.
fn fit_reweighted_alpha(
    model: &IsingModel,
    train: &TrainingSet,
    val: &TrainingSet,
    sweeps: usize,
) -> CbpParams {
    let g = model.graph();
    let run_opts = RunOptions {
        max_iters: sweeps,
        ..Default::default()
    };
    let params_of = |alpha: &[f64]| CbpParams {
        alpha: alpha.to_vec(),
        beta: vec![1.0; g.edge_count()],
        kappa: vec![1.0; g.node_count()],
        gamma: vec![1.0; g.node_count()],
    };
    let residuals_on = |alpha: &[f64], set: &TrainingSet| -> Vec<f64> {
        let params = params_of(alpha);
        let targets = set.targets.as_ref().expect("targets prepared");
        let mut out = Vec::with_capacity(set.len() * g.node_count());
        for (ex, tgt) in set.examples.iter().zip(targets) {
            match model
                .with_m_ext(ex)
                .map_err(PropagationError::from)
                .and_then(|m| run_reweighted(&m, &params, &run_opts))
            {
                Ok(report) => {
                    for (&b, &p) in report.beliefs.b.iter().zip(tgt) {
                        out.push((sigmoid(2.0 * b) - p).clamp(-1e3, 1e3));
                    }
                }
                Err(_) => out.resize(out.len() + g.node_count(), 1e3),
            }
        }
        out
    };
    let val_cost =
        |alpha: &[f64]| -> f64 { residuals_on(alpha, val).iter().map(|r| r * r).sum::<f64>() };

    let init = vec![1.0; g.edge_count()];
    let mut best = init.clone();
    let mut best_val = val_cost(&init);
    let lm_opts = optim::LmOptions {
        max_iters: 30,
        ..Default::default()
    };
    optim::levenberg_marquardt_fd(
        &init,
        |alpha| residuals_on(alpha, train),
        &lm_opts,
        |accepted| {
            let v = val_cost(&accepted.theta);
            if v < best_val {
                best_val = v;
                best = accepted.theta.clone();
            }
        },
    );
    params_of(&best)
}

/// Iteration budget for the damped unsupervised evaluation runs. Damping
/// `eps` shrinks the effective step to `1 - eps`, so reaching the same
/// residual needs proportionally more sweeps than the undamped methods get.
const DAMPED_EVAL_ITERS: usize = 10_000;

fn evaluate_method(
    model: &IsingModel,
    method: Method,
    params: Option<&CbpParams>,
    test: &TrainingSet,
    sweeps: usize,
    unsup_damping: f64,
) -> Result<(f64, f64), BenchError> {
    let targets = test.targets.as_ref().expect("targets prepared");
    // The unsupervised algorithm is damped Circular BP; damping preserves
    // fixed points, so its converged beliefs are fixed-point beliefs.
    let opts = match method {
        Method::CbpUnsupervised => RunOptions {
            max_iters: DAMPED_EVAL_ITERS.max(sweeps),
            damping: unsup_damping,
            ..Default::default()
        },
        _ => RunOptions {
            max_iters: sweeps,
            ..Default::default()
        },
    };
    let mut mse_total = 0.0;
    let mut converged = 0usize;
    for (ex, tgt) in test.examples.iter().zip(targets) {
        let m = model.with_m_ext(ex)?;
        let report = match method {
            Method::MeanField => run_mean_field(&m, &opts),
            Method::Reweighted => run_reweighted(&m, params.expect("fitted"), &opts)?,
            _ => run_cbp(&m, params.expect("fitted"), &opts),
        };
        mse_total += learning::loss_mse(&report.beliefs, tgt)?;
        converged += report.converged as usize;
    }
    Ok((
        mse_total / test.len() as f64,
        converged as f64 / test.len() as f64,
    ))
}

/// Runs the whole suite: per `(p, graph)` generates the weighted model and
/// splits, fits the requested methods, and scores held-out test MSE.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, BenchError> {
    let mut rows = Vec::new();
    for (p_idx, &p) in config.p_list.iter().enumerate() {
        for g_idx in 0..config.graphs_per_p {
            let tags = [p_idx as u64, g_idx as u64];
            let graph_seed = derive_seed(config.seed, &[1, tags[0], tags[1]]);
            let graph = generate_graph(config, p, graph_seed)?;
            let model =
                IsingModel::spin_glass(graph, derive_seed(config.seed, &[2, tags[0], tags[1]]));
            let splits = prepare_splits(
                &model,
                config,
                derive_seed(config.seed, &[3, tags[0], tags[1]]),
            )?;

            for &method in &config.methods {
                let params = match method {
                    Method::Bp => Some(CbpParams::bp(model.graph())),
                    Method::CbpSupervised => Some(
                        learning::fit_supervised(&model, &splits.train, &splits.val, &config.fit)?
                            .params,
                    ),
                    Method::CbpUnsupervised => Some(learning::fit_unsupervised(
                        &model,
                        &config.unsup,
                        derive_seed(config.seed, &[4, tags[0], tags[1]]),
                    )?),
                    Method::Reweighted => Some(fit_reweighted_alpha(
                        &model,
                        &splits.train,
                        &splits.val,
                        config.fit.sweeps,
                    )),
                    Method::MeanField => None,
                };
                let (mean_mse, converged_fraction) = evaluate_method(
                    &model,
                    method,
                    params.as_ref(),
                    &splits.test,
                    config.fit.sweeps,
                    config.unsup.damping,
                )?;
                rows.push(ExperimentRow {
                    p,
                    graph_seed,
                    method: method.as_str().to_string(),
                    mean_mse,
                    converged_fraction,
                });
            }
        }
    }

    let mut summary = Vec::new();
    for &p in &config.p_list {
        for &method in &config.methods {
            let mses: Vec<f64> = rows
                .iter()
                .filter(|r| r.p == p && r.method == method.as_str())
                .map(|r| r.mean_mse)
                .collect();
            if !mses.is_empty() {
                summary.push(ScoreEntry {
                    p,
                    method: method.as_str().to_string(),
                    score: learning::score(&mses)?,
                });
            }
        }
    }
    Ok(ExperimentResult { rows, summary })
}

/// Draws `count` random ±1 patterns of length `n` (linearly independent with
/// overwhelming probability for `count << n`).
pub fn random_patterns(count: usize, n: usize, seed: u64) -> Result<PatternSet, BenchError> {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let patterns = (0..count)
        .map(|_| {
            (0..n)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    PatternSet::new(patterns)
}
