//! Graph and model representation, validation, and seeded random generation.
//!
//! Nodes are dense `0..n` indices. Undirected edges are canonicalized as
//! `(min, max)` pairs and carry a stable index into per-edge value vectors.
//! Each undirected edge `k = (i, j)` owns two directed edges: `2k` for
//! `i -> j` and `2k + 1` for `j -> i`; that numbering is the directed-edge
//! index used by the message-passing engines and by the convergence matrix.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded_rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("node index {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("coupling for edge ({0}, {1}) is not finite")]
    NonFiniteCoupling(usize, usize),
    #[error("external field at node {0} is not finite")]
    NonFiniteField(usize),
    #[error("missing coupling for edge ({0}, {1})")]
    MissingCoupling(usize, usize),
    #[error("coupling given for ({0}, {1}) which is not an edge of the graph")]
    ExtraCoupling(usize, usize),
    #[error("expected {expected} per-node values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter {name} at index {index} is not finite")]
    NonFiniteParam { name: &'static str, index: usize },
    #[error("kappa[{0}] = 0 with a nonzero incident alpha; the ratio alpha/kappa is undefined")]
    ZeroKappa(usize),
    #[error("training example {index} has length {got}, expected {expected}")]
    ExampleLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("target {index} misaligned or out of (0, 1)")]
    BadTarget { index: usize },
    #[error("invalid model json: {0}")]
    Json(String),
}

/// A simple undirected graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct UndirectedGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    edge_index: HashMap<(usize, usize), usize>,
    directed: DirectedEdges,
}

/// Flat directed-edge tables shared by the engines.
///
/// Directed edge `2k` runs `i -> j` and `2k + 1` runs `j -> i` for the
/// canonical undirected edge `k = (i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DirectedEdges {
    /// Source node of each directed edge.
    pub src: Vec<usize>,
    /// Destination node of each directed edge.
    pub dst: Vec<usize>,
    /// Index of the opposite directed edge.
    pub rev: Vec<usize>,
    /// Index of the owning undirected edge.
    pub undirected: Vec<usize>,
    /// For each node, the directed edges pointing into it, in adjacency order.
    pub incoming: Vec<Vec<usize>>,
}

impl UndirectedGraph {
    /// Builds a graph from an edge list, canonicalizing and validating it.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut canonical = Vec::with_capacity(edges.len());
        let mut seen = HashMap::new();
        for &(a, b) in edges {
            if a >= node_count {
                return Err(ModelError::NodeOutOfRange(a, node_count));
            }
            if b >= node_count {
                return Err(ModelError::NodeOutOfRange(b, node_count));
            }
            if a == b {
                return Err(ModelError::SelfLoop(a));
            }
            let e = (a.min(b), a.max(b));
            if seen.insert(e, canonical.len()).is_some() {
                return Err(ModelError::DuplicateEdge(e.0, e.1));
            }
            canonical.push(e);
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for &(i, j) in &canonical {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let directed = DirectedEdges::build(node_count, &canonical, &adjacency, &seen);
        Ok(Self {
            node_count,
            edges: canonical,
            adjacency,
            edge_index: seen,
            directed,
        })
    }

    /// Erdős–Rényi graph: each unordered pair is an edge with probability `p`.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::BadProbability(p));
        }
        let mut rng = seeded_rng(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Self::new(n, &edges)
    }

    /// `rows x cols` lattice with 4-neighbor connectivity.
    pub fn grid(rows: usize, cols: usize) -> Result<Self, ModelError> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::new(rows * cols, &edges)
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Result<Self, ModelError> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        Self::new(n, &edges)
    }

    /// Random tree on `n` nodes: node `i` attaches to a uniform earlier node.
    pub fn random_tree(n: usize, seed: u64) -> Result<Self, ModelError> {
        let mut rng = seeded_rng(seed);
        let mut edges = Vec::new();
        for i in 1..n {
            let parent = rng.gen_range(0..i);
            edges.push((parent, i));
        }
        Self::new(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn directed(&self) -> &DirectedEdges {
        &self.directed
    }

    /// Number of directed edges (`2 |E|`).
    pub fn directed_count(&self) -> usize {
        2 * self.edges.len()
    }

    /// Index of the directed edge `from -> to`.
    pub fn directed_id(&self, from: usize, to: usize) -> Option<usize> {
        let k = self.edge_id(from, to)?;
        Some(if from < to { 2 * k } else { 2 * k + 1 })
    }

    /// True if the graph contains at least one cycle.
    pub fn has_cycle(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &self.edges {
            let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
            if ri == rj {
                return true;
            }
            parent[ri] = rj;
        }
        false
    }
}

impl DirectedEdges {
    fn build(
        node_count: usize,
        edges: &[(usize, usize)],
        adjacency: &[Vec<usize>],
        edge_index: &HashMap<(usize, usize), usize>,
    ) -> Self {
        let m = 2 * edges.len();
        let mut src = vec![0; m];
        let mut dst = vec![0; m];
        let mut rev = vec![0; m];
        let mut undirected = vec![0; m];
        for (k, &(i, j)) in edges.iter().enumerate() {
            src[2 * k] = i;
            dst[2 * k] = j;
            src[2 * k + 1] = j;
            dst[2 * k + 1] = i;
            rev[2 * k] = 2 * k + 1;
            rev[2 * k + 1] = 2 * k;
            undirected[2 * k] = k;
            undirected[2 * k + 1] = k;
        }
        let mut incoming = vec![Vec::new(); node_count];
        for (i, neigh) in adjacency.iter().enumerate() {
            for &j in neigh {
                let k = edge_index[&(i.min(j), i.max(j))];
                let dir = if j < i { 2 * k } else { 2 * k + 1 };
                incoming[i].push(dir);
            }
        }
        Self {
            src,
            dst,
            rev,
            undirected,
            incoming,
        }
    }
}

/// Pairwise binary model: couplings `J` per undirected edge and external
/// fields `M_ext` per node, both on the half log-odds scale.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    graph: UndirectedGraph,
    coupling: Vec<f64>,
    m_ext: Vec<f64>,
}

impl IsingModel {
    /// Validates and builds a model from an explicit per-edge coupling map.
    pub fn new(
        graph: UndirectedGraph,
        couplings: &[((usize, usize), f64)],
        m_ext: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if m_ext.len() != graph.node_count() {
            return Err(ModelError::LengthMismatch {
                expected: graph.node_count(),
                got: m_ext.len(),
            });
        }
        for (i, v) in m_ext.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteField(i));
            }
        }
        let mut coupling = vec![f64::NAN; graph.edge_count()];
        for &((a, b), j) in couplings {
            let id = graph
                .edge_id(a, b)
                .ok_or(ModelError::ExtraCoupling(a.min(b), a.max(b)))?;
            if !j.is_finite() {
                return Err(ModelError::NonFiniteCoupling(a.min(b), a.max(b)));
            }
            if !coupling[id].is_nan() {
                return Err(ModelError::DuplicateEdge(a.min(b), a.max(b)));
            }
            coupling[id] = j;
        }
        if let Some(k) = coupling.iter().position(|j| j.is_nan()) {
            let (i, j) = graph.edges()[k];
            return Err(ModelError::MissingCoupling(i, j));
        }
        Ok(Self {
            graph,
            coupling,
            m_ext,
        })
    }

    /// Builds a model from per-edge couplings already in graph edge order.
    pub fn from_parts(
        graph: UndirectedGraph,
        coupling: Vec<f64>,
        m_ext: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if coupling.len() != graph.edge_count() {
            return Err(ModelError::LengthMismatch {
                expected: graph.edge_count(),
                got: coupling.len(),
            });
        }
        for (k, j) in coupling.iter().enumerate() {
            if !j.is_finite() {
                let (a, b) = graph.edges()[k];
                return Err(ModelError::NonFiniteCoupling(a, b));
            }
        }
        if m_ext.len() != graph.node_count() {
            return Err(ModelError::LengthMismatch {
                expected: graph.node_count(),
                got: m_ext.len(),
            });
        }
        for (i, v) in m_ext.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteField(i));
            }
        }
        Ok(Self {
            graph,
            coupling,
            m_ext,
        })
    }

    /// Spin glass over a fixed graph: `J_ij ~ N(0, 1)` i.i.d., `M_ext = 0`.
    pub fn spin_glass(graph: UndirectedGraph, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let coupling = (0..graph.edge_count())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let m_ext = vec![0.0; graph.node_count()];
        Self {
            graph,
            coupling,
            m_ext,
        }
    }

    pub fn graph(&self) -> &UndirectedGraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Coupling of undirected edge `k`, in graph edge order.
    pub fn coupling(&self, edge: usize) -> f64 {
        self.coupling[edge]
    }

    pub fn couplings(&self) -> &[f64] {
        &self.coupling
    }

    pub fn m_ext(&self) -> &[f64] {
        &self.m_ext
    }

    /// Same graph and couplings with a different external field vector.
    pub fn with_m_ext(&self, m_ext: &[f64]) -> Result<Self, ModelError> {
        Self::from_parts(self.graph.clone(), self.coupling.clone(), m_ext.to_vec())
    }

    /// JSON form: `{"n": .., "edges": [[i, j, J], ..], "m_ext": [..]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<(usize, usize, f64)> = self
            .graph
            .edges()
            .iter()
            .zip(&self.coupling)
            .map(|(&(i, j), &v)| (i, j, v))
            .collect();
        serde_json::json!({
            "n": self.graph.node_count(),
            "edges": edges,
            "m_ext": self.m_ext,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Raw {
            n: usize,
            edges: Vec<(usize, usize, f64)>,
            m_ext: Vec<f64>,
        }
        let raw: Raw =
            serde_json::from_value(value.clone()).map_err(|e| ModelError::Json(e.to_string()))?;
        let pairs: Vec<(usize, usize)> = raw.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let graph = UndirectedGraph::new(raw.n, &pairs)?;
        let couplings: Vec<((usize, usize), f64)> =
            raw.edges.iter().map(|&(i, j, v)| ((i, j), v)).collect();
        Self::new(graph, &couplings, raw.m_ext)
    }
}

/// The full parameterization of Circular / Reweighted BP: `alpha`, `beta`
/// per undirected edge, `kappa`, `gamma` per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbpParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl CbpParams {
    /// Unit parameters: Circular BP degenerates to plain BP.
    pub fn bp(graph: &UndirectedGraph) -> Self {
        Self {
            alpha: vec![1.0; graph.edge_count()],
            beta: vec![1.0; graph.edge_count()],
            kappa: vec![1.0; graph.node_count()],
            gamma: vec![1.0; graph.node_count()],
        }
    }

    /// `alpha = kappa = v` uniformly, `beta = gamma = 1`.
    pub fn uniform(graph: &UndirectedGraph, v: f64) -> Self {
        Self {
            alpha: vec![v; graph.edge_count()],
            beta: vec![1.0; graph.edge_count()],
            kappa: vec![v; graph.node_count()],
            gamma: vec![1.0; graph.node_count()],
        }
    }

    /// Checks finiteness, shapes, and that `kappa_i != 0` wherever a nonzero
    /// incident `alpha` would form the ratio `alpha_ij / kappa_i`.
    pub fn validate(&self, graph: &UndirectedGraph) -> Result<(), ModelError> {
        let checks: [(&str, &[f64], usize); 4] = [
            ("alpha", &self.alpha, graph.edge_count()),
            ("beta", &self.beta, graph.edge_count()),
            ("kappa", &self.kappa, graph.node_count()),
            ("gamma", &self.gamma, graph.node_count()),
        ];
        for (name, values, expected) in checks {
            if values.len() != expected {
                return Err(ModelError::LengthMismatch {
                    expected,
                    got: values.len(),
                });
            }
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteParam { name, index });
            }
        }
        for (k, &(i, j)) in graph.edges().iter().enumerate() {
            if self.alpha[k] != 0.0 && (self.kappa[i] == 0.0 || self.kappa[j] == 0.0) {
                let node = if self.kappa[i] == 0.0 { i } else { j };
                return Err(ModelError::ZeroKappa(node));
            }
        }
        Ok(())
    }

    /// JSON form with edge-keyed alpha/beta:
    /// `{"alpha": [[i, j, v], ..], "beta": [[i, j, v], ..], "kappa": [..], "gamma": [..]}`.
    pub fn to_json(&self, graph: &UndirectedGraph) -> serde_json::Value {
        let keyed = |values: &[f64]| -> Vec<(usize, usize, f64)> {
            graph
                .edges()
                .iter()
                .zip(values)
                .map(|(&(i, j), &v)| (i, j, v))
                .collect()
        };
        serde_json::json!({
            "alpha": keyed(&self.alpha),
            "beta": keyed(&self.beta),
            "kappa": self.kappa,
            "gamma": self.gamma,
        })
    }

    pub fn from_json(
        value: &serde_json::Value,
        graph: &UndirectedGraph,
    ) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Raw {
            alpha: Vec<(usize, usize, f64)>,
            beta: Vec<(usize, usize, f64)>,
            kappa: Vec<f64>,
            gamma: Vec<f64>,
        }
        let raw: Raw =
            serde_json::from_value(value.clone()).map_err(|e| ModelError::Json(e.to_string()))?;
        let unkey = |entries: &[(usize, usize, f64)]| -> Result<Vec<f64>, ModelError> {
            let mut out = vec![f64::NAN; graph.edge_count()];
            for &(i, j, v) in entries {
                let id = graph
                    .edge_id(i, j)
                    .ok_or(ModelError::ExtraCoupling(i.min(j), i.max(j)))?;
                out[id] = v;
            }
            if let Some(k) = out.iter().position(|v| v.is_nan()) {
                let (i, j) = graph.edges()[k];
                return Err(ModelError::MissingCoupling(i, j));
            }
            Ok(out)
        };
        let params = Self {
            alpha: unkey(&raw.alpha)?,
            beta: unkey(&raw.beta)?,
            kappa: raw.kappa,
            gamma: raw.gamma,
        };
        params.validate(graph)?;
        Ok(params)
    }
}

/// A set of per-node external-field vectors, optionally paired with exact
/// marginal targets `p_i(x_i = +1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub examples: Vec<Vec<f64>>,
    pub targets: Option<Vec<Vec<f64>>>,
}

impl TrainingSet {
    pub fn new(
        examples: Vec<Vec<f64>>,
        targets: Option<Vec<Vec<f64>>>,
        node_count: usize,
    ) -> Result<Self, ModelError> {
        for (index, ex) in examples.iter().enumerate() {
            if ex.len() != node_count {
                return Err(ModelError::ExampleLength {
                    index,
                    got: ex.len(),
                    expected: node_count,
                });
            }
        }
        if let Some(t) = &targets {
            if t.len() != examples.len() {
                return Err(ModelError::LengthMismatch {
                    expected: examples.len(),
                    got: t.len(),
                });
            }
            for (index, row) in t.iter().enumerate() {
                let ok = row.len() == node_count && row.iter().all(|p| *p > 0.0 && *p < 1.0);
                if !ok {
                    return Err(ModelError::BadTarget { index });
                }
            }
        }
        Ok(Self { examples, targets })
    }

    /// `count` input vectors of length `n` with entries i.i.d. `N(0, 1)`.
    pub fn sample_inputs(n: usize, count: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let examples = (0..count)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self {
            examples,
            targets: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}
