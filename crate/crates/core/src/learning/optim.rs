//! Optimizers used by the fitting procedures: resilient backpropagation and
//! Levenberg-Marquardt nonlinear least squares.

use nalgebra::{DMatrix, DVector};

/// Sign-based resilient backpropagation (iRprop-).
///
/// Step sizes grow by 1.2 on a stable gradient sign, shrink by 0.5 on a sign
/// flip (in which case the update is skipped for that coordinate), and stay
/// inside `[1e-6, 1.0]`.
pub struct Rprop {
    step: Vec<f64>,
    prev_grad: Vec<f64>,
}

impl Rprop {
    pub const GROW: f64 = 1.2;
    pub const SHRINK: f64 = 0.5;
    pub const STEP_MIN: f64 = 1e-6;
    pub const STEP_MAX: f64 = 1.0;

    pub fn new(dim: usize, initial_step: f64) -> Self {
        Self {
            step: vec![initial_step; dim],
            prev_grad: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) {
        for i in 0..theta.len() {
            let mut g = grad[i];
            let product = g * self.prev_grad[i];
            if product > 0.0 {
                self.step[i] = (self.step[i] * Self::GROW).min(Self::STEP_MAX);
            } else if product < 0.0 {
                self.step[i] = (self.step[i] * Self::SHRINK).max(Self::STEP_MIN);
                g = 0.0;
            }
            if g != 0.0 {
                theta[i] -= g.signum() * self.step[i];
            }
            self.prev_grad[i] = g;
        }
    }
}

/// Controls for [`levenberg_marquardt`].
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_grow: f64,
    pub lambda_shrink: f64,
    /// Stop once an accepted step moves the parameters less than this.
    pub min_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 60,
            lambda_init: 1e-3,
            lambda_grow: 4.0,
            lambda_shrink: 3.0,
            min_step: 1e-10,
        }
    }
}

/// An accepted Levenberg-Marquardt iterate.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub theta: Vec<f64>,
    pub cost: f64,
}

/// Levenberg-Marquardt with an analytic Jacobian.
///
/// Minimizes `||r(theta)||^2` by damped Gauss-Newton steps; `on_accept` runs
/// after every accepted step (validation tracking lives there). Returns the
/// last accepted iterate.
pub fn levenberg_marquardt<R, J, C>(
    theta0: &[f64],
    residual_fn: R,
    jacobian_fn: J,
    opts: &LmOptions,
    on_accept: C,
) -> LmOutcome
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
    C: FnMut(&LmOutcome),
{
    lm_loop(theta0, &residual_fn, &jacobian_fn, opts, on_accept)
}

/// Levenberg-Marquardt with a forward finite-difference Jacobian.
pub fn levenberg_marquardt_fd<R, C>(
    theta0: &[f64],
    residual_fn: R,
    opts: &LmOptions,
    on_accept: C,
) -> LmOutcome
where
    R: Fn(&[f64]) -> Vec<f64>,
    C: FnMut(&LmOutcome),
{
    let jac = |theta: &[f64]| -> DMatrix<f64> {
        let base = residual_fn(theta);
        let mut j = DMatrix::zeros(base.len(), theta.len());
        let mut probe = theta.to_vec();
        for col in 0..theta.len() {
            let h = 1e-6 * theta[col].abs().max(1.0);
            probe[col] = theta[col] + h;
            let shifted = residual_fn(&probe);
            probe[col] = theta[col];
            for row in 0..base.len() {
                j[(row, col)] = (shifted[row] - base[row]) / h;
            }
        }
        j
    };
    lm_loop(theta0, &residual_fn, &jac, opts, on_accept)
}

fn lm_loop<C>(
    theta0: &[f64],
    residual_fn: &dyn Fn(&[f64]) -> Vec<f64>,
    jacobian_fn: &dyn Fn(&[f64]) -> DMatrix<f64>,
    opts: &LmOptions,
    mut on_accept: C,
) -> LmOutcome
where
    C: FnMut(&LmOutcome),
{
    let cost_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut theta = theta0.to_vec();
    let mut residuals = residual_fn(&theta);
    let mut cost = cost_of(&residuals);
    let mut lambda = opts.lambda_init;

    for _ in 0..opts.max_iters {
        let jac = jacobian_fn(&theta);
        let r = DVector::from_column_slice(&residuals);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * r;
        let mut accepted = false;
        for _ in 0..12 {
            let mut lhs = jtj.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let delta = match lhs.cholesky() {
                Some(chol) => chol.solve(&(-&jtr)),
                None => break,
            };
            let candidate: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            let cand_res = residual_fn(&candidate);
            let cand_cost = cost_of(&cand_res);
            if cand_cost.is_finite() && cand_cost < cost {
                let step = delta.amax();
                theta = candidate;
                residuals = cand_res;
                cost = cand_cost;
                lambda = (lambda / opts.lambda_shrink).max(1e-12);
                accepted = true;
                on_accept(&LmOutcome {
                    theta: theta.clone(),
                    cost,
                });
                if step < opts.min_step {
                    return LmOutcome { theta, cost };
                }
                break;
            }
            lambda *= opts.lambda_grow;
            if lambda > 1e12 {
                return LmOutcome { theta, cost };
            }
        }
        if !accepted {
            break;
        }
    }
    LmOutcome { theta, cost }
}
