//! Inference engines and benchmark harness for pairwise Markov random fields.
//!
//! The crate implements log-domain message passing on binary (Ising) models —
//! Belief Propagation, Circular BP, Reweighted BP, and a mean-field baseline —
//! together with the directed-edge convergence analysis (matrix `A`, spectral
//! criteria, safe-parameter search), supervised and unsupervised parameter
//! learning, Gaussian Circular BP on Gaussian MRFs, and exact brute-force
//! oracles used to validate everything.
//!
//! Modules: [`model`] (graphs, Ising models, parameter sets, seeded
//! generators), [`exact`] (ground-truth marginals by enumeration and linear
//! algebra), [`propagation`] (the message-passing engines), [`convergence`]
//! (matrix `A`, spectral radius, safe-parameter search), [`learning`]
//! (supervised unrolled reverse-mode + Rprop / least squares, and the local
//! unsupervised rules), [`gaussian`] (Gaussian Circular BP and its fitting),
//! and [`bench`] (experiment harness, Hopfield denoising demo, IDX
//! ingestion).

pub mod bench;
pub mod convergence;
pub mod exact;
pub mod gaussian;
pub mod learning;
pub mod model;
pub mod propagation;
pub mod rng;

pub use model::{CbpParams, IsingModel, TrainingSet, UndirectedGraph};
pub use propagation::{BeliefVector, MessageState, RunOptions, RunReport};
