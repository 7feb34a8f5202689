//! Evaluation of fitted reward models against oracle scores: reward MSE
//! (raw and scale-aligned), parameter error, and policy regret.
//!
//! Fits under different barrier conventions target the reward up to a scale
//! factor (logistic fits estimate `a r`, the unknown-barrier orthogonal fit
//! estimates `r/a`), so the scale-aligned MSE replaces the prediction by
//! `c* rhat` with the least-squares optimal `c*` before comparing. Regret
//! is invariant to any positive scaling outright.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::num::{tree_mean, tree_sum};
use crate::reward::RewardModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse_raw: f64,
    pub mse_scale_aligned: f64,
    /// Least-squares scale `c*` applied for the aligned MSE.
    pub scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_param_error: Option<f64>,
    /// Cumulative regret over the test queries.
    pub regret: f64,
    /// Regret divided by the number of queries.
    pub regret_mean: f64,
    pub n_test: usize,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "mse_raw,mse_scale_aligned,scale,l2_param_error,regret,regret_mean,n_test"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mse_raw,
            self.mse_scale_aligned,
            self.scale,
            self.l2_param_error.map_or(String::from(""), |v| v.to_string()),
            self.regret,
            self.regret_mean,
            self.n_test
        )
    }
}

fn predicted_and_oracle(model: &RewardModel, test: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let oracle = test.oracle_diffs()?;
    let predicted: Vec<f64> = test
        .observations
        .iter()
        .map(|o| model.reward_diff(&o.pair))
        .collect::<Result<_>>()?;
    Ok((predicted, oracle))
}

/// Mean squared error of predicted reward differences against the oracle,
/// raw and after the optimal scalar rescaling `c* = <rhat, ro>/<rhat, rhat>`
/// (`c* = 0` for an identically zero prediction).
pub fn reward_mse(model: &RewardModel, test: &Dataset) -> Result<(f64, f64, f64)> {
    let (predicted, oracle) = predicted_and_oracle(model, test)?;
    let raw: Vec<f64> = predicted.iter().zip(&oracle).map(|(p, o)| (p - o) * (p - o)).collect();
    let mse_raw = tree_mean(&raw);
    let dot_po: f64 = tree_sum(&predicted.iter().zip(&oracle).map(|(p, o)| p * o).collect::<Vec<_>>());
    let dot_pp: f64 = tree_sum(&predicted.iter().map(|p| p * p).collect::<Vec<_>>());
    let scale = if dot_pp > 0.0 { dot_po / dot_pp } else { 0.0 };
    let aligned: Vec<f64> = predicted
        .iter()
        .zip(&oracle)
        .map(|(p, o)| (scale * p - o) * (scale * p - o))
        .collect();
    Ok((mse_raw, tree_mean(&aligned), scale))
}

/// Cumulative regret: for each pair the model picks option 1 when
/// `rhat(X1) >= rhat(X2)` (ties go to option 1), and pays the oracle gap to
/// the truly better option.
pub fn regret(model: &RewardModel, test: &Dataset) -> Result<f64> {
    let (predicted, oracle) = predicted_and_oracle(model, test)?;
    let losses: Vec<f64> = predicted
        .iter()
        .zip(&oracle)
        .map(|(p, o)| if *p >= 0.0 { (-o).max(0.0) } else { o.max(0.0) })
        .collect();
    Ok(tree_sum(&losses))
}

/// Euclidean distance between a fitted linear model's coefficients and a
/// reference parameter vector.
pub fn param_error(model: &RewardModel, theta_o: &[f64]) -> Result<f64> {
    match model {
        RewardModel::Linear(lin) => {
            if lin.theta.len() != theta_o.len() {
                return Err(Error::domain(format!(
                    "parameter dimension mismatch: {} vs {}",
                    lin.theta.len(),
                    theta_o.len()
                )));
            }
            Ok(lin
                .theta
                .iter()
                .zip(theta_o)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt())
        }
        RewardModel::Mlp(_) => {
            Err(Error::domain("parameter error is defined for linear models only"))
        }
    }
}

/// Full evaluation; pass `theta_o` for linear experiments to include the
/// parameter error.
pub fn evaluate(model: &RewardModel, test: &Dataset, theta_o: Option<&[f64]>) -> Result<EvalReport> {
    let (mse_raw, mse_scale_aligned, scale) = reward_mse(model, test)?;
    let reg = regret(model, test)?;
    let l2 = match theta_o {
        Some(t) => Some(param_error(model, t)?),
        None => None,
    };
    let n = test.n();
    Ok(EvalReport {
        mse_raw,
        mse_scale_aligned,
        scale,
        l2_param_error: l2,
        regret: reg,
        regret_mean: reg / n as f64,
        n_test: n,
    })
}
