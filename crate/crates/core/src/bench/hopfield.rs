//! Associative-memory denoising: Hopfield recall with pseudoinverse weights,
//! and BP / Circular BP run on the same weights read as an Ising model.
//!
//! The weight matrix is `theta = (1/n) X X^I`, with the patterns as columns
//! of `X` and `X^I` the Moore-Penrose pseudoinverse; every linearly
//! independent pattern satisfies `theta x = x / n`, so `sgn(theta x) = x`
//! makes each stored pattern a recall fixed point. The message-passing route
//! uses a complete graph with `J = 5 theta` and external inputs `3 x_noisy`;
//! Circular BP parameters come from unsupervised fitting on pure noise.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::BenchError;
use crate::learning::{self, UnsupOptions};
use crate::model::{CbpParams, IsingModel, UndirectedGraph};
use crate::propagation::{run_cbp, RunOptions};
use crate::rng::{derive_seed, seeded_rng};

/// Rows are ±1 patterns, columns are pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    patterns: Vec<Vec<f64>>,
}

impl PatternSet {
    pub fn new(patterns: Vec<Vec<f64>>) -> Result<Self, BenchError> {
        if patterns.is_empty() || patterns[0].is_empty() {
            return Err(BenchError::EmptyPatterns);
        }
        let n = patterns[0].len();
        for (idx, p) in patterns.iter().enumerate() {
            if p.len() != n {
                return Err(BenchError::EmptyPatterns);
            }
            if !p.iter().all(|&v| v == 1.0 || v == -1.0) {
                return Err(BenchError::BadPattern(idx));
            }
        }
        Ok(Self { patterns })
    }

    /// First `count` rows of the `n x n` Sylvester-Hadamard matrix:
    /// mutually orthogonal ±1 patterns (`n` must be a power of two).
    pub fn hadamard(count: usize, n: usize) -> Result<Self, BenchError> {
        if !n.is_power_of_two() || count > n {
            return Err(BenchError::Config(format!(
                "hadamard needs count <= n and n a power of two, got {count}, {n}"
            )));
        }
        let patterns = (0..count)
            .map(|r| {
                (0..n)
                    .map(|c| {
                        if (r & c).count_ones() % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(patterns)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.patterns[0].len()
    }

    pub fn patterns(&self) -> &[Vec<f64>] {
        &self.patterns
    }
}

/// Pseudoinverse-rule weights `theta = (1/n) X (X^T X)^-1 X^T`.
pub fn hopfield_pseudoinverse(patterns: &PatternSet) -> Result<DMatrix<f64>, BenchError> {
    let n = patterns.pixel_count();
    let k = patterns.len();
    let x = DMatrix::from_fn(n, k, |i, j| patterns.patterns[j][i]);
    let gram = x.transpose() * &x;
    // Cholesky alone can accept a numerically singular Gram matrix; gate on
    // its conditioning explicitly.
    let eigs = gram.symmetric_eigenvalues();
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eigs.iter().copied().fold(0.0f64, f64::max);
    if min <= 1e-10 * max.max(1.0) {
        return Err(BenchError::RankDeficient);
    }
    let chol = gram.cholesky().ok_or(BenchError::RankDeficient)?;
    let pinv = chol.solve(&x.transpose()); // (X^T X)^-1 X^T
    Ok(x * pinv / n as f64)
}

fn sgn(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Synchronous recall `x <- sgn(theta x)` (zero maps to +1) until a fixed
/// point or `max_iter`; a limit cycle is reported as non-converged.
pub fn hopfield_recall(theta: &DMatrix<f64>, x0: &[f64], max_iter: usize) -> (Vec<f64>, bool) {
    let mut x = DVector::from_column_slice(x0);
    for _ in 0..max_iter {
        let next = (theta * &x).map(sgn);
        if next == x {
            return (x.iter().copied().collect(), true);
        }
        x = next;
    }
    (x.iter().copied().collect(), false)
}

/// Reconstruction route of the denoising demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiseMethod {
    Hopfield,
    Bp,
    Cbp,
}

impl DenoiseMethod {
    pub fn parse(s: &str) -> Result<Self, BenchError> {
        match s {
            "hopfield" => Ok(Self::Hopfield),
            "bp" => Ok(Self::Bp),
            "cbp" => Ok(Self::Cbp),
            other => Err(BenchError::UnknownMethod(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Hopfield => "hopfield",
            Self::Bp => "bp",
            Self::Cbp => "cbp",
        }
    }
}

/// Per-pattern bit accuracies of one denoising pass.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DenoiseReport {
    pub method: String,
    pub noise_fraction: f64,
    pub per_pattern_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Graded pixel outputs (`tanh(B)` for bp/cbp, the recall state for
    /// hopfield) of the last pattern, for inspection.
    pub last_reconstruction: Vec<f64>,
}

/// Damping used while fitting Circular BP for the denoising demo.
const DENOISE_FIT_DAMPING: f64 = 0.8;
/// Noise examples used for that fit.
const DENOISE_FIT_EXAMPLES: usize = 1000;

/// Corrupts each stored pattern by zeroing a random `noise_fraction` of its
/// pixels, reconstructs with the chosen method, and reports bit accuracy
/// against the clean pattern.
///
/// bp/cbp read the weights as a complete-graph Ising model with `J = 5 theta`
/// and `M_ext = 3 x_noisy`; pixels are read out as `tanh(B_i)` and then
/// thresholded. The cbp route first fits `(alpha, kappa)` unsupervised on
/// pure-noise inputs with damping 0.8.
pub fn denoise_demo(
    patterns: &PatternSet,
    noise_fraction: f64,
    method: DenoiseMethod,
    seed: u64,
) -> Result<DenoiseReport, BenchError> {
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(BenchError::BadNoise(noise_fraction));
    }
    let n = patterns.pixel_count();
    let theta = hopfield_pseudoinverse(patterns)?;

    let model = match method {
        DenoiseMethod::Hopfield => None,
        _ => {
            let graph = UndirectedGraph::complete(n)?;
            let couplings: Vec<f64> = graph
                .edges()
                .iter()
                .map(|&(i, j)| 5.0 * theta[(i, j)])
                .collect();
            Some(IsingModel::from_parts(graph, couplings, vec![0.0; n])?)
        }
    };
    let params = match (&model, method) {
        (Some(m), DenoiseMethod::Cbp) => {
            let opts = UnsupOptions {
                n_examples: DENOISE_FIT_EXAMPLES,
                damping: DENOISE_FIT_DAMPING,
                ..Default::default()
            };
            Some(learning::fit_unsupervised(
                m,
                &opts,
                derive_seed(seed, &[99]),
            )?)
        }
        (Some(m), _) => Some(CbpParams::bp(m.graph())),
        (None, _) => None,
    };

    let zero_count = (noise_fraction * n as f64).round() as usize;
    let mut per_pattern = Vec::with_capacity(patterns.len());
    let mut last_reconstruction = Vec::new();
    for (p_idx, clean) in patterns.patterns.iter().enumerate() {
        let mut noisy = clean.clone();
        let mut pixels: Vec<usize> = (0..n).collect();
        let mut rng = seeded_rng(derive_seed(seed, &[1, p_idx as u64]));
        pixels.shuffle(&mut rng);
        for &px in pixels.iter().take(zero_count) {
            noisy[px] = 0.0;
        }

        let graded: Vec<f64> = match method {
            DenoiseMethod::Hopfield => hopfield_recall(&theta, &noisy, 100).0,
            _ => {
                let m_ext: Vec<f64> = noisy.iter().map(|v| 3.0 * v).collect();
                let m = model.as_ref().expect("built above").with_m_ext(&m_ext)?;
                let report = run_cbp(
                    &m,
                    params.as_ref().expect("built above"),
                    &RunOptions::default(),
                );
                report.beliefs.b.iter().map(|&b| b.tanh()).collect()
            }
        };
        let correct = graded
            .iter()
            .zip(clean)
            .filter(|(&g, &c)| sgn(g) == c)
            .count();
        per_pattern.push(correct as f64 / n as f64);
        last_reconstruction = graded;
    }
    let mean_accuracy = per_pattern.iter().sum::<f64>() / per_pattern.len() as f64;
    Ok(DenoiseReport {
        method: method.as_str().to_string(),
        noise_fraction,
        per_pattern_accuracy: per_pattern,
        mean_accuracy,
        last_reconstruction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::random_patterns;
    use approx::assert_relative_eq;

    #[test]
    fn single_pattern_rank_one_identity() {
        let p = PatternSet::new(vec![vec![1.0, -1.0, 1.0, 1.0]]).unwrap();
        let theta = hopfield_pseudoinverse(&p).unwrap();
        // theta x = x / n for the stored pattern.
        let x = DVector::from_column_slice(&p.patterns()[0]);
        let y = &theta * &x;
        for (yi, xi) in y.iter().zip(x.iter()) {
            assert_relative_eq!(*yi, xi / 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stored_patterns_are_recall_fixed_points() {
        let p = random_patterns(6, 24, 3).unwrap();
        let theta = hopfield_pseudoinverse(&p).unwrap();
        for pattern in p.patterns() {
            let scaled = &theta * DVector::from_column_slice(pattern);
            for (s, x) in scaled.iter().zip(pattern) {
                assert_relative_eq!(*s, x / 24.0, epsilon = 1e-10);
            }
            let (state, converged) = hopfield_recall(&theta, pattern, 50);
            assert!(converged);
            assert_eq!(&state, pattern);
            // Sign symmetry: the negated pattern is a fixed point too.
            let negated: Vec<f64> = pattern.iter().map(|v| -v).collect();
            let (state, converged) = hopfield_recall(&theta, &negated, 50);
            assert!(converged);
            assert_eq!(state, negated);
        }
    }

    #[test]
    fn orthogonal_patterns_give_symmetric_theta() {
        let p = PatternSet::hadamard(4, 8).unwrap();
        // Orthogonality check.
        for a in 0..4 {
            for b in (a + 1)..4 {
                let dot: f64 = p.patterns()[a]
                    .iter()
                    .zip(&p.patterns()[b])
                    .map(|(x, y)| x * y)
                    .sum();
                assert_eq!(dot, 0.0);
            }
        }
        let theta = hopfield_pseudoinverse(&p).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_relative_eq!(theta[(i, j)], theta[(j, i)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_recall_all_ones() {
        let theta = DMatrix::zeros(5, 5);
        let (state, converged) = hopfield_recall(&theta, &[-1.0, 1.0, -1.0, 1.0, -1.0], 10);
        assert!(converged);
        assert!(state.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rank_deficient_patterns_are_rejected() {
        let p = PatternSet::new(vec![vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        assert!(matches!(
            hopfield_pseudoinverse(&p),
            Err(BenchError::RankDeficient)
        ));
    }

    #[test]
    fn pattern_validation() {
        assert!(PatternSet::new(vec![]).is_err());
        assert!(PatternSet::new(vec![vec![1.0, 0.5]]).is_err());
        assert!(PatternSet::new(vec![vec![1.0], vec![1.0, -1.0]]).is_err());
    }

    #[test]
    fn noiseless_hopfield_denoising_is_perfect() {
        let p = random_patterns(5, 16, 9).unwrap();
        let report = denoise_demo(&p, 0.0, DenoiseMethod::Hopfield, 1).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
    }

    #[test]
    fn full_noise_gives_uniform_beliefs() {
        let p = random_patterns(3, 8, 11).unwrap();
        let report = denoise_demo(&p, 1.0, DenoiseMethod::Bp, 2).unwrap();
        // M_ext = 0 everywhere and zero init: beliefs stay at probability 1/2,
        // so the graded outputs are all zero.
        assert!(report.last_reconstruction.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoising_is_deterministic_under_seed() {
        let p = random_patterns(4, 16, 21).unwrap();
        let a = denoise_demo(&p, 0.5, DenoiseMethod::Bp, 5).unwrap();
        let b = denoise_demo(&p, 0.5, DenoiseMethod::Bp, 5).unwrap();
        assert_eq!(a.per_pattern_accuracy, b.per_pattern_accuracy);
        let c = denoise_demo(&p, 0.5, DenoiseMethod::Bp, 6).unwrap();
        assert!(
            a.per_pattern_accuracy != c.per_pattern_accuracy || a.mean_accuracy == c.mean_accuracy
        );
    }
}
