//! First-order minimization of empirical losses.
//!
//! Supports plain gradient descent and Adam, full-batch or mini-batch, an
//! optional validation split with patience-based early stopping, and a
//! gradient-norm stopping rule. All shuffling is driven by the caller's
//! stream, so a fit is a pure function of (objective, init, config, seed).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{shuffled_indices, Stream};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Epochs without validation improvement before early stop.
const PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adam,
    Gd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub step_size: f64,
    /// `None` runs full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    /// Stop once the (epoch-averaged) gradient norm falls below this.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Fraction held out for early stopping; 0 disables it.
    #[serde(default)]
    pub val_frac: f64,
}

fn default_grad_tol() -> f64 {
    1e-9
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            step_size: 1e-3,
            batch_size: None,
            max_epochs: 2000,
            grad_tol: default_grad_tol(),
            val_frac: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(Error::config(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if let Some(b) = self.batch_size {
            if b == 0 {
                return Err(Error::config("batch_size must be positive"));
            }
        }
        if !(0.0..0.95).contains(&self.val_frac) {
            return Err(Error::config(format!("val_frac must lie in [0, 0.95), got {}", self.val_frac)));
        }
        if !self.grad_tol.is_finite() || self.grad_tol < 0.0 {
            return Err(Error::config("grad_tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    MaxEpochs,
    EarlyStop,
}

/// Result of a minimization run.
#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub params: Vec<f64>,
    pub epochs: usize,
    /// Training loss at the returned parameters.
    pub final_loss: f64,
    /// Gradient norm at the returned parameters.
    pub grad_norm: f64,
    /// Training loss at the start of each epoch (full batch) or the mean
    /// batch loss per epoch (mini-batch).
    pub loss_trace: Vec<f64>,
    pub val_loss: Option<f64>,
    pub stop: StopReason,
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(dim: usize) -> Self {
        AdamState { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Minimizes `eval` starting from `init`.
///
/// `eval(params, indices)` returns the mean loss and mean gradient over the
/// given observation indices (drawn from `0..n_obs`). Divergence to a
/// non-finite loss or gradient aborts with a fit error.
pub fn minimize<F>(
    eval: &mut F,
    init: Vec<f64>,
    n_obs: usize,
    cfg: &OptimizerConfig,
    rng: &mut Stream,
) -> Result<OptimOutcome>
where
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if n_obs == 0 {
        return Err(Error::config("cannot optimize over an empty dataset"));
    }

    // validation split
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if cfg.val_frac > 0.0 {
        let perm = shuffled_indices(n_obs, rng);
        let n_val = ((cfg.val_frac * n_obs as f64).ceil() as usize).clamp(1, n_obs - 1);
        (perm[n_val..].to_vec(), perm[..n_val].to_vec())
    } else {
        ((0..n_obs).collect(), Vec::new())
    };

    let mut params = init;
    let dim = params.len();
    let mut adam = AdamState::new(dim);
    let mut loss_trace = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut strikes = 0usize;
    let mut stop = StopReason::MaxEpochs;
    let mut epochs_run = 0usize;

    let check_finite = |loss: f64, grad: &[f64], epoch: usize| -> Result<()> {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::fit(format!(
                "optimizer diverged at epoch {epoch}: loss = {loss}, |grad| = {}",
                l2_norm(grad)
            )));
        }
        Ok(())
    };

    'epochs: for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut epoch_losses = Vec::new();
        let mut epoch_grad_norm = 0.0;
        let mut n_batches = 0usize;

        match cfg.batch_size {
            None => {
                let (loss, grad) = eval(&params, &train_idx)?;
                check_finite(loss, &grad, epoch)?;
                epoch_losses.push(loss);
                epoch_grad_norm = l2_norm(&grad);
                n_batches = 1;
                if epoch_grad_norm <= cfg.grad_tol {
                    loss_trace.push(loss);
                    stop = StopReason::GradTol;
                    break 'epochs;
                }
                match cfg.algorithm {
                    Algorithm::Adam => adam.step(&mut params, &grad, cfg.step_size),
                    Algorithm::Gd => {
                        for i in 0..dim {
                            params[i] -= cfg.step_size * grad[i];
                        }
                    }
                }
            }
            Some(batch) => {
                let order = shuffled_indices(train_idx.len(), rng);
                for chunk in order.chunks(batch) {
                    let idxs: Vec<usize> = chunk.iter().map(|&i| train_idx[i]).collect();
                    let (loss, grad) = eval(&params, &idxs)?;
                    check_finite(loss, &grad, epoch)?;
                    epoch_losses.push(loss);
                    epoch_grad_norm += l2_norm(&grad);
                    n_batches += 1;
                    match cfg.algorithm {
                        Algorithm::Adam => adam.step(&mut params, &grad, cfg.step_size),
                        Algorithm::Gd => {
                            for i in 0..dim {
                                params[i] -= cfg.step_size * grad[i];
                            }
                        }
                    }
                }
            }
        }

        let mean_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        loss_trace.push(mean_loss);
        if n_batches > 1 {
            epoch_grad_norm /= n_batches as f64;
        }
        if epoch_grad_norm <= cfg.grad_tol {
            stop = StopReason::GradTol;
            break 'epochs;
        }

        if !val_idx.is_empty() {
            let (val_loss, _) = eval(&params, &val_idx)?;
            if !val_loss.is_finite() {
                return Err(Error::fit(format!("validation loss diverged at epoch {epoch}")));
            }
            let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
            if improved {
                best = Some((val_loss, params.clone()));
                strikes = 0;
            } else {
                strikes += 1;
                if strikes >= PATIENCE {
                    stop = StopReason::EarlyStop;
                    break 'epochs;
                }
            }
        }
    }

    let (final_params, val_loss) = match best {
        Some((v, p)) => (p, Some(v)),
        None => (params, None),
    };
    let (final_loss, final_grad) = eval(&final_params, &train_idx)?;
    check_finite(final_loss, &final_grad, epochs_run)?;

    Ok(OptimOutcome {
        params: final_params,
        epochs: epochs_run,
        final_loss,
        grad_norm: l2_norm(&final_grad),
        loss_trace,
        val_loss,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Quadratic bowl centred at `c` (per-index shift to fake per-obs data).
    fn quad_eval(c: f64) -> impl FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)> {
        move |params, idxs| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; params.len()];
            for &i in idxs {
                let target = c + (i % 3) as f64 * 0.0; // identical targets
                for (j, p) in params.iter().enumerate() {
                    let d = p - target;
                    loss += d * d;
                    grad[j] += 2.0 * d;
                }
            }
            let n = idxs.len() as f64;
            Ok((loss / n, grad.iter().map(|g| g / n).collect()))
        }
    }

    #[test]
    fn gd_converges_on_quadratic() {
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Gd,
            step_size: 0.1,
            batch_size: None,
            max_epochs: 500,
            grad_tol: 1e-10,
            val_frac: 0.0,
        };
        let out = minimize(&mut quad_eval(2.5), vec![0.0, 0.0], 10, &cfg, &mut rng::master(0)).unwrap();
        assert!(out.params.iter().all(|p| (p - 2.5).abs() < 1e-6));
        assert_eq!(out.stop, StopReason::GradTol);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Adam,
            step_size: 0.05,
            batch_size: None,
            max_epochs: 2000,
            grad_tol: 1e-9,
            val_frac: 0.0,
        };
        let out = minimize(&mut quad_eval(-1.0), vec![0.3], 10, &cfg, &mut rng::master(1)).unwrap();
        assert!((out.params[0] + 1.0).abs() < 1e-5, "got {}", out.params[0]);
    }

    #[test]
    fn full_batch_trace_is_monotone() {
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Gd,
            step_size: 0.05,
            batch_size: None,
            max_epochs: 300,
            grad_tol: 0.0,
            val_frac: 0.0,
        };
        let out = minimize(&mut quad_eval(1.0), vec![4.0], 5, &cfg, &mut rng::master(2)).unwrap();
        for w in out.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut bad = |_p: &[f64], _i: &[usize]| Ok((f64::NAN, vec![0.0]));
        let cfg = OptimizerConfig::default();
        let err = minimize(&mut bad, vec![0.0], 4, &cfg, &mut rng::master(3)).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn minibatch_runs_and_returns_finite() {
        let cfg = OptimizerConfig {
            algorithm: Algorithm::Adam,
            step_size: 0.02,
            batch_size: Some(4),
            max_epochs: 400,
            grad_tol: 1e-12,
            val_frac: 0.25,
        };
        let out = minimize(&mut quad_eval(0.7), vec![0.0], 20, &cfg, &mut rng::master(4)).unwrap();
        assert!((out.params[0] - 0.7).abs() < 1e-2);
        assert!(out.val_loss.is_some());
    }
}
