//! Two-stage reward estimation: nuisance fitting (plug-in or regression),
//! sample handling (data splitting, K-fold cross-fitting, data reuse), and
//! second-stage loss minimization.
//!
//! The plain logistic fit needs no nuisances and runs on the full data. The
//! response-time losses consume first-stage estimates: a preliminary reward
//! `rf` fitted by logistic loss, a time nuisance obtained either by the
//! plug-in closed form `a tanh(a rf)/rf` or by squared-error regression on
//! capped decision times, and (for `ortho2`) a choice-mean nuisance
//! `tanh(a rf)`. In unknown-barrier mode everything runs at internal barrier
//! 1 and the fitted model targets the scaled reward.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{fold_assign, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    cap_time, logloss_point, nonortho_point, ortho2_point, ortho_point, CapConfig, LossKind,
    NuisanceSet, Observation, PairFn,
};
use crate::num::{sigmoid, softplus, tanhc, tree_mean};
use crate::optim::{minimize, OptimOutcome, OptimizerConfig};
use crate::reward::{InitMode, ModelKind, QueryPair, RewardModel};
use crate::rng::{self, Stream};

const RIDGE_SCALE: f64 = 1e-4;
const CHOICE_CLAMP: f64 = 1.0 - 1e-9;
const GRAM_CONDITION_LIMIT: f64 = 1e10;

/// Sample-handling strategy of the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Split,
    Crossfit,
    Reuse,
}

/// How the time nuisance is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuisanceMode {
    #[default]
    Plugin,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarrierKind {
    #[default]
    Known,
    Unknown,
}

/// Architecture template for fitted models and nuisances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Linear,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![32, 16]
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Linear
    }
}

impl ModelSpec {
    pub fn widths(&self, dim: usize) -> Vec<usize> {
        match self {
            ModelSpec::Linear => vec![dim],
            ModelSpec::Mlp { hidden } => {
                let mut w = Vec::with_capacity(hidden.len() + 2);
                w.push(dim);
                w.extend_from_slice(hidden);
                w.push(1);
                w
            }
        }
    }

    pub fn instantiate(&self, dim: usize, mode: InitMode, rng: &mut Stream) -> Result<RewardModel> {
        let kind = match self {
            ModelSpec::Linear => ModelKind::Linear,
            ModelSpec::Mlp { .. } => ModelKind::Mlp,
        };
        RewardModel::random_init(kind, &self.widths(dim), mode, rng)
    }
}

/// Full fit configuration. The serialized keys are the config-file surface:
/// `loss, strategy, folds, split_frac, nuisance, cap, barrier, a,
/// optimizer.*, seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss: LossKind,
    pub strategy: StrategyKind,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_split_frac")]
    pub split_frac: f64,
    #[serde(default)]
    pub nuisance: NuisanceMode,
    /// Decision-time cap; omitted means the default `50 a^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<CapConfig>,
    #[serde(default)]
    pub barrier: BarrierKind,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}
fn default_split_frac() -> f64 {
    0.5
}
fn default_a() -> f64 {
    1.0
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            loss: LossKind::Ortho,
            strategy: StrategyKind::Crossfit,
            folds: default_folds(),
            split_frac: default_split_frac(),
            nuisance: NuisanceMode::Plugin,
            cap: None,
            barrier: BarrierKind::Known,
            a: default_a(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.split_frac && self.split_frac < 1.0) {
            return Err(Error::config(format!(
                "split_frac must lie in (0,1), got {}",
                self.split_frac
            )));
        }
        if self.folds < 2 {
            return Err(Error::config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.barrier == BarrierKind::Known && (!self.a.is_finite() || self.a <= 0.0) {
            return Err(Error::config(format!("known barrier requires a > 0, got {}", self.a)));
        }
        if self.barrier == BarrierKind::Unknown && self.loss == LossKind::Ortho {
            return Err(Error::config(
                "loss ortho needs the barrier; use ortho2 in unknown-barrier mode",
            ));
        }
        self.optimizer.validate()
    }

    /// Barrier value passed to the loss formulas.
    pub fn a_internal(&self) -> f64 {
        match self.barrier {
            BarrierKind::Known => self.a,
            BarrierKind::Unknown => 1.0,
        }
    }

    /// Cap resolved to a concrete value: the configured one, or the default
    /// `50 a^2` (with `a = 1` when the barrier is unknown).
    pub fn resolved_cap(&self) -> CapConfig {
        self.cap.unwrap_or_else(|| {
            let a = self.a_internal();
            CapConfig::At(50.0 * a * a)
        })
    }
}

/// Per-stage nuisance diagnostics for the fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceRecord {
    /// Fold whose held-out observations this nuisance serves; `None` for
    /// split/reuse.
    pub fold: Option<usize>,
    /// Observations the nuisance was trained on.
    pub train_size: usize,
    /// Final (or validation) loss of the preliminary reward fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_loss: Option<f64>,
    /// Final (or validation) loss of the time regression.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_loss: Option<f64>,
}

/// Diagnostics of a completed fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss: LossKind,
    pub strategy: String,
    pub n_obs: usize,
    /// Observations entering the second-stage objective.
    pub n_second_stage: usize,
    pub a_internal: f64,
    pub t_nd: f64,
    pub cap: CapConfig,
    pub nuisance_val_losses: Vec<NuisanceRecord>,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub epochs: usize,
    pub loss_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_of: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_train_sizes: Option<Vec<usize>>,
    /// Condition number of the Gram matrix of pair differences.
    pub gram_condition: f64,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: RewardModel,
    pub report: FitReport,
}

// ---------------------------------------------------------------------------
// Stage one: nuisance estimation
// ---------------------------------------------------------------------------

/// Maximum-likelihood reward fit (logistic loss) with a vanishing ridge
/// penalty `1e-4/n * |params|^2` so separable samples stay finite.
///
/// Pass the true barrier as `a_internal` in known-barrier mode; pass 1 in
/// unknown mode, in which case the fit targets the scaled reward `a r`.
pub fn fit_logistic(
    obs: &[Observation],
    dim: usize,
    spec: &ModelSpec,
    a_internal: f64,
    opt: &OptimizerConfig,
    rng: &mut Stream,
) -> Result<(RewardModel, OptimOutcome)> {
    if obs.is_empty() {
        return Err(Error::config("logistic fit needs a non-empty dataset"));
    }
    let lambda = RIDGE_SCALE / obs.len() as f64;
    let mut scratch = spec.instantiate(dim, InitMode::Fit, rng)?;
    let init = scratch.params_flat();
    let mut eval = |params: &[f64], idxs: &[usize]| -> Result<(f64, Vec<f64>)> {
        scratch.set_params_flat(params)?;
        let n = idxs.len() as f64;
        let mut values = Vec::with_capacity(idxs.len());
        let mut grad = vec![0.0; params.len()];
        for &i in idxs {
            let o = &obs[i];
            let (rdiff, rgrad) = scratch.reward_diff_grad(&o.pair)?;
            let (v, dldr) = logloss_point(o.y as f64, rdiff, a_internal);
            values.push(v);
            for (g, r) in grad.iter_mut().zip(&rgrad) {
                *g += dldr * r / n;
            }
        }
        let mut loss = tree_mean(&values);
        for (g, p) in grad.iter_mut().zip(params) {
            *g += 2.0 * lambda * p;
            loss += lambda * p * p;
        }
        Ok((loss, grad))
    };
    let outcome = minimize(&mut eval, init, obs.len(), opt, rng)?;
    scratch.set_params_flat(&outcome.params)?;
    Ok((scratch, outcome))
}

/// Plug-in time nuisance `pair -> a tanh(a rf(pair)) / rf(pair)`, the
/// expected decision time implied by a preliminary reward. Always in
/// `(0, a^2]`.
pub fn plugin_time_nuisance(reward_nuisance: &RewardModel, a: f64) -> PairFn {
    let model = reward_nuisance.clone();
    Arc::new(move |pair: &QueryPair| {
        let r = model.reward_diff(pair).expect("nuisance model dimension mismatch");
        a * a * tanhc(a * r)
    })
}

/// Plug-in choice-mean nuisance `pair -> tanh(a rf(pair))`, clamped inside
/// the open interval (-1, 1).
pub fn plugin_choice_nuisance(reward_nuisance: &RewardModel, a: f64) -> PairFn {
    let model = reward_nuisance.clone();
    Arc::new(move |pair: &QueryPair| {
        let r = model.reward_diff(pair).expect("nuisance model dimension mismatch");
        (a * r).tanh().clamp(-CHOICE_CLAMP, CHOICE_CLAMP)
    })
}

/// Regression time nuisance: a network on the concatenated pair features
/// trained by squared error against capped decision times, with a softplus
/// head so outputs stay strictly positive.
#[derive(Debug, Clone)]
pub struct TimeNuisanceModel {
    net: RewardModel,
}

impl TimeNuisanceModel {
    pub fn eval(&self, pair: &QueryPair) -> f64 {
        let mut input = Vec::with_capacity(2 * pair.dim());
        input.extend_from_slice(&pair.x1);
        input.extend_from_slice(&pair.x2);
        softplus(self.net.reward(&input).expect("time nuisance dimension mismatch"))
    }

    pub fn into_pair_fn(self) -> PairFn {
        Arc::new(move |pair: &QueryPair| self.eval(pair))
    }
}

/// Fits the regression time nuisance on `obs`.
pub fn fit_time_regression(
    obs: &[Observation],
    dim: usize,
    hidden: &[usize],
    cap: CapConfig,
    t_nd: f64,
    opt: &OptimizerConfig,
    rng: &mut Stream,
) -> Result<(TimeNuisanceModel, OptimOutcome)> {
    if obs.is_empty() {
        return Err(Error::config("time regression needs a non-empty dataset"));
    }
    let inputs: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| {
            let mut v = Vec::with_capacity(2 * dim);
            v.extend_from_slice(&o.pair.x1);
            v.extend_from_slice(&o.pair.x2);
            v
        })
        .collect();
    let targets: Vec<f64> = obs.iter().map(|o| cap_time(o.t_total - t_nd, cap)).collect();

    let mut widths = Vec::with_capacity(hidden.len() + 2);
    widths.push(2 * dim);
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut scratch = RewardModel::random_init(ModelKind::Mlp, &widths, InitMode::Fit, rng)?;
    let init = scratch.params_flat();

    let mut eval = |params: &[f64], idxs: &[usize]| -> Result<(f64, Vec<f64>)> {
        scratch.set_params_flat(params)?;
        let n = idxs.len() as f64;
        let mut values = Vec::with_capacity(idxs.len());
        let mut grad = vec![0.0; params.len()];
        for &i in idxs {
            let (z, zgrad) = scratch.value_grad(&inputs[i])?;
            let out = softplus(z);
            let resid = out - targets[i];
            values.push(resid * resid);
            let dldz = 2.0 * resid * sigmoid(z);
            for (g, r) in grad.iter_mut().zip(&zgrad) {
                *g += dldz * r / n;
            }
        }
        Ok((tree_mean(&values), grad))
    };
    let outcome = minimize(&mut eval, init, obs.len(), opt, rng)?;
    scratch.set_params_flat(&outcome.params)?;
    Ok((TimeNuisanceModel { net: scratch }, outcome))
}

// ---------------------------------------------------------------------------
// Stage two
// ---------------------------------------------------------------------------

/// Per-observation inputs of the second-stage objective, with nuisance
/// values already evaluated (out-of-fold under cross-fitting).
struct SecondStageData<'a> {
    obs: Vec<&'a Observation>,
    t_dec: Vec<f64>,
    r_frak: Vec<f64>,
    t_hat: Vec<f64>,
    y_hat: Vec<f64>,
}

impl<'a> SecondStageData<'a> {
    fn build(
        kind: LossKind,
        obs: Vec<&'a Observation>,
        nuis_of: impl Fn(usize) -> &'a NuisanceSet,
        t_nd: f64,
        cap: CapConfig,
    ) -> Result<SecondStageData<'a>> {
        let n = obs.len();
        let mut data = SecondStageData {
            t_dec: Vec::with_capacity(n),
            r_frak: Vec::new(),
            t_hat: Vec::new(),
            y_hat: Vec::new(),
            obs,
        };
        for i in 0..n {
            let o = data.obs[i];
            let nuis = nuis_of(i);
            nuis.check_for(kind)?;
            data.t_dec.push(cap_time(o.t_total - t_nd, cap));
            if matches!(kind, LossKind::Nonortho | LossKind::Ortho | LossKind::Ortho2) {
                let t_hat = (nuis.time.as_ref().unwrap())(&o.pair);
                if !(t_hat > 0.0) {
                    return Err(Error::fit(format!(
                        "time nuisance produced a non-positive value {t_hat}"
                    )));
                }
                data.t_hat.push(t_hat);
            }
            if kind == LossKind::Ortho {
                data.r_frak.push((nuis.reward.as_ref().unwrap())(&o.pair));
            }
            if kind == LossKind::Ortho2 {
                data.y_hat.push((nuis.choice.as_ref().unwrap())(&o.pair));
            }
        }
        Ok(data)
    }
}

fn second_stage(
    kind: LossKind,
    a_internal: f64,
    data: &SecondStageData,
    dim: usize,
    spec: &ModelSpec,
    opt: &OptimizerConfig,
    rng: &mut Stream,
) -> Result<(RewardModel, OptimOutcome)> {
    let mut scratch = spec.instantiate(dim, InitMode::Fit, rng)?;
    let init = scratch.params_flat();
    let mut eval = |params: &[f64], idxs: &[usize]| -> Result<(f64, Vec<f64>)> {
        scratch.set_params_flat(params)?;
        let n = idxs.len() as f64;
        let mut values = Vec::with_capacity(idxs.len());
        let mut grad = vec![0.0; params.len()];
        for &i in idxs {
            let o = data.obs[i];
            let (rdiff, rgrad) = scratch.reward_diff_grad(&o.pair)?;
            let y = o.y as f64;
            let (v, dldr) = match kind {
                LossKind::Logloss => logloss_point(y, rdiff, a_internal),
                LossKind::Nonortho => nonortho_point(y, rdiff, data.t_hat[i], a_internal),
                LossKind::Ortho => {
                    ortho_point(y, data.t_dec[i], rdiff, data.r_frak[i], data.t_hat[i], a_internal)
                }
                LossKind::Ortho2 => {
                    ortho2_point(y, data.t_dec[i], rdiff, data.y_hat[i], data.t_hat[i], a_internal)?
                }
            };
            values.push(v);
            for (g, r) in grad.iter_mut().zip(&rgrad) {
                *g += dldr * r / n;
            }
        }
        Ok((tree_mean(&values), grad))
    };
    let outcome = minimize(&mut eval, init, data.obs.len(), opt, rng)?;
    scratch.set_params_flat(&outcome.params)?;
    Ok((scratch, outcome))
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct StageOneOutput {
    nuisances: NuisanceSet,
    record: NuisanceRecord,
}

/// Fits the nuisances required by `cfg.loss` on `obs`.
fn fit_nuisance_set(
    obs: &[Observation],
    dim: usize,
    cfg: &FitConfig,
    model_spec: &ModelSpec,
    cap: CapConfig,
    t_nd: f64,
    fold: Option<usize>,
    rng: &mut Stream,
) -> Result<StageOneOutput> {
    let a_int = cfg.a_internal();
    // the preliminary reward is needed by ortho always, and by any plug-in
    let needs_reward = cfg.loss == LossKind::Ortho
        || cfg.nuisance == NuisanceMode::Plugin
        || cfg.loss == LossKind::Ortho2;
    let mut record =
        NuisanceRecord { fold, train_size: obs.len(), reward_loss: None, time_loss: None };
    let mut nuis = NuisanceSet::none();

    let reward_model = if needs_reward {
        let (model, out) = fit_logistic(obs, dim, model_spec, a_int, &cfg.optimizer, rng)?;
        record.reward_loss = Some(out.val_loss.unwrap_or(out.final_loss));
        Some(model)
    } else {
        None
    };

    match cfg.nuisance {
        NuisanceMode::Plugin => {
            let model = reward_model.as_ref().expect("plugin mode fits the reward nuisance");
            nuis.time = Some(plugin_time_nuisance(model, a_int));
        }
        NuisanceMode::Regression => {
            let hidden = match model_spec {
                ModelSpec::Mlp { hidden } => hidden.clone(),
                ModelSpec::Linear => default_hidden(),
            };
            let (time_model, out) =
                fit_time_regression(obs, dim, &hidden, cap, t_nd, &cfg.optimizer, rng)?;
            record.time_loss = Some(out.val_loss.unwrap_or(out.final_loss));
            nuis.time = Some(time_model.into_pair_fn());
        }
    }

    if cfg.loss == LossKind::Ortho {
        nuis.reward = Some({
            let model = reward_model.clone().expect("ortho fits the reward nuisance");
            Arc::new(move |pair: &QueryPair| {
                model.reward_diff(pair).expect("nuisance model dimension mismatch")
            })
        });
    }
    if cfg.loss == LossKind::Ortho2 {
        let model = reward_model.as_ref().expect("ortho2 fits the reward nuisance");
        nuis.choice = Some(plugin_choice_nuisance(model, a_int));
    }

    Ok(StageOneOutput { nuisances: nuis, record })
}

/// Condition number of the Gram matrix of pair differences.
fn gram_condition(dataset: &Dataset) -> f64 {
    let d = dataset.dim;
    let n = dataset.n() as f64;
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for o in &dataset.observations {
        for i in 0..d {
            let di = o.pair.x1[i] - o.pair.x2[i];
            for j in 0..d {
                let dj = o.pair.x1[j] - o.pair.x2[j];
                gram[(i, j)] += di * dj / n;
            }
        }
    }
    let eig = gram.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &l in eig.eigenvalues.iter() {
        let l = l.abs();
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn strategy_label(cfg: &FitConfig) -> String {
    match cfg.strategy {
        StrategyKind::Split => format!("split({})", cfg.split_frac),
        StrategyKind::Crossfit => format!("crossfit({})", cfg.folds),
        StrategyKind::Reuse => "reuse".to_string(),
    }
}

fn base_report(dataset: &Dataset, cfg: &FitConfig, cap: CapConfig) -> FitReport {
    let cond = gram_condition(dataset);
    FitReport {
        loss: cfg.loss,
        strategy: strategy_label(cfg),
        n_obs: dataset.n(),
        n_second_stage: 0,
        a_internal: cfg.a_internal(),
        t_nd: dataset.t_nd(),
        cap,
        nuisance_val_losses: Vec::new(),
        final_loss: f64::NAN,
        grad_norm: f64::NAN,
        epochs: 0,
        loss_trace: Vec::new(),
        fold_of: None,
        fold_train_sizes: None,
        gram_condition: cond,
        rank_deficient: !cond.is_finite() || cond > GRAM_CONDITION_LIMIT,
    }
}

fn fill_from_outcome(report: &mut FitReport, n_stage2: usize, out: &OptimOutcome) {
    report.n_second_stage = n_stage2;
    report.final_loss = out.final_loss;
    report.grad_norm = out.grad_norm;
    report.epochs = out.epochs;
    report.loss_trace = out.loss_trace.clone();
}

/// Runs the full two-stage estimator on `dataset` with the model family of
/// `model_spec`.
pub fn two_stage_fit(
    dataset: &Dataset,
    cfg: &FitConfig,
    model_spec: &ModelSpec,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let n = dataset.n();
    if n == 0 {
        return Err(Error::config("cannot fit an empty dataset"));
    }
    let cap = cfg.resolved_cap();
    let t_nd = dataset.t_nd();
    let a_int = cfg.a_internal();
    let dim = dataset.dim;
    let mut report = base_report(dataset, cfg, cap);
    let mut stage2_rng = rng::substream(rng::derive_seed(cfg.seed, &[0xB2]), 0);

    // choices-only estimation skips the nuisance stage entirely
    if cfg.loss == LossKind::Logloss {
        let (model, out) =
            fit_logistic(&dataset.observations, dim, model_spec, a_int, &cfg.optimizer, &mut stage2_rng)?;
        fill_from_outcome(&mut report, n, &out);
        return Ok(FitOutcome { model, report });
    }

    match cfg.strategy {
        StrategyKind::Split => {
            if n < 20 {
                return Err(Error::config(format!(
                    "data splitting needs at least 20 observations, got {n}"
                )));
            }
            let (nuis_ds, stage2_ds) = crate::data::split(dataset, cfg.split_frac, cfg.seed)?;
            let mut nuis_rng = rng::substream(rng::derive_seed(cfg.seed, &[0xA1, 0]), 0);
            let stage1 = fit_nuisance_set(
                &nuis_ds.observations,
                dim,
                cfg,
                model_spec,
                cap,
                t_nd,
                None,
                &mut nuis_rng,
            )?;
            report.nuisance_val_losses.push(stage1.record);
            let data = SecondStageData::build(
                cfg.loss,
                stage2_ds.observations.iter().collect(),
                |_| &stage1.nuisances,
                t_nd,
                cap,
            )?;
            let (model, out) =
                second_stage(cfg.loss, a_int, &data, dim, model_spec, &cfg.optimizer, &mut stage2_rng)?;
            fill_from_outcome(&mut report, data.obs.len(), &out);
            Ok(FitOutcome { model, report })
        }
        StrategyKind::Crossfit => {
            // leave-one-out (folds == n) is allowed as the degenerate case
            if n < 10 * cfg.folds && cfg.folds != n {
                return Err(Error::config(format!(
                    "cross-fitting with {} folds needs at least {} observations, got {n}",
                    cfg.folds,
                    10 * cfg.folds
                )));
            }
            let folds = fold_assign(n, cfg.folds, cfg.seed)?;
            let mut per_fold: Vec<NuisanceSet> = Vec::with_capacity(cfg.folds);
            let mut train_sizes = Vec::with_capacity(cfg.folds);
            for k in 0..cfg.folds {
                let train_idx = folds.out_of_fold(k);
                train_sizes.push(train_idx.len());
                let train: Vec<Observation> =
                    train_idx.iter().map(|&i| dataset.observations[i].clone()).collect();
                let mut nuis_rng =
                    rng::substream(rng::derive_seed(cfg.seed, &[0xA1, k as u64 + 1]), 0);
                let stage1 =
                    fit_nuisance_set(&train, dim, cfg, model_spec, cap, t_nd, Some(k), &mut nuis_rng)?;
                report.nuisance_val_losses.push(stage1.record);
                per_fold.push(stage1.nuisances);
            }
            let data = SecondStageData::build(
                cfg.loss,
                dataset.observations.iter().collect(),
                |i| &per_fold[folds.fold_of[i] as usize],
                t_nd,
                cap,
            )?;
            let (model, out) =
                second_stage(cfg.loss, a_int, &data, dim, model_spec, &cfg.optimizer, &mut stage2_rng)?;
            fill_from_outcome(&mut report, n, &out);
            report.fold_of = Some(folds.fold_of.clone());
            report.fold_train_sizes = Some(train_sizes);
            Ok(FitOutcome { model, report })
        }
        StrategyKind::Reuse => {
            let mut nuis_rng = rng::substream(rng::derive_seed(cfg.seed, &[0xA1, 0]), 0);
            let stage1 = fit_nuisance_set(
                &dataset.observations,
                dim,
                cfg,
                model_spec,
                cap,
                t_nd,
                None,
                &mut nuis_rng,
            )?;
            report.nuisance_val_losses.push(stage1.record);
            let data = SecondStageData::build(
                cfg.loss,
                dataset.observations.iter().collect(),
                |_| &stage1.nuisances,
                t_nd,
                cap,
            )?;
            let (model, out) =
                second_stage(cfg.loss, a_int, &data, dim, model_spec, &cfg.optimizer, &mut stage2_rng)?;
            fill_from_outcome(&mut report, n, &out);
            Ok(FitOutcome { model, report })
        }
    }
}

/// Second stage only, with caller-supplied nuisances evaluated on the full
/// dataset. This is the injection hook used by the covariance validation
/// experiments and by tests that supply exact nuisances.
pub fn two_stage_fit_with_nuisances(
    dataset: &Dataset,
    cfg: &FitConfig,
    model_spec: &ModelSpec,
    nuisances: &NuisanceSet,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if cfg.loss == LossKind::Logloss {
        return Err(Error::config("logloss takes no nuisances; use two_stage_fit"));
    }
    nuisances.check_for(cfg.loss)?;
    let cap = cfg.resolved_cap();
    let t_nd = dataset.t_nd();
    let mut report = base_report(dataset, cfg, cap);
    report.strategy = "injected".to_string();
    let data = SecondStageData::build(
        cfg.loss,
        dataset.observations.iter().collect(),
        |_| nuisances,
        t_nd,
        cap,
    )?;
    let mut stage2_rng = rng::substream(rng::derive_seed(cfg.seed, &[0xB2]), 0);
    let (model, out) = second_stage(
        cfg.loss,
        cfg.a_internal(),
        &data,
        dataset.dim,
        model_spec,
        &cfg.optimizer,
        &mut stage2_rng,
    )?;
    fill_from_outcome(&mut report, dataset.n(), &out);
    Ok(FitOutcome { model, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.split_frac = 1.0;
        assert!(cfg.validate().is_err());
        cfg.split_frac = 0.5;
        cfg.folds = 1;
        assert!(cfg.validate().is_err());
        cfg.folds = 5;
        cfg.barrier = BarrierKind::Unknown;
        cfg.loss = LossKind::Ortho;
        assert!(cfg.validate().is_err());
        cfg.loss = LossKind::Ortho2;
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.a_internal(), 1.0);
    }

    #[test]
    fn config_round_trips_with_exact_keys() {
        let text = r#"{
            "loss": "ortho",
            "strategy": "crossfit",
            "folds": 5,
            "split_frac": 0.5,
            "nuisance": "plugin",
            "cap": "none",
            "barrier": "known",
            "a": 1.5,
            "optimizer": {"algorithm": "adam", "step_size": 0.001, "max_epochs": 100},
            "seed": 11
        }"#;
        let cfg: FitConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.loss, LossKind::Ortho);
        assert_eq!(cfg.cap, Some(CapConfig::None));
        assert_eq!(cfg.a, 1.5);
        let back = serde_json::to_value(&cfg).unwrap();
        for key in ["loss", "strategy", "folds", "split_frac", "nuisance", "cap", "barrier", "a", "optimizer", "seed"] {
            assert!(back.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn default_cap_is_fifty_a_squared() {
        let mut cfg = FitConfig { a: 2.0, ..FitConfig::default() };
        assert_eq!(cfg.resolved_cap(), CapConfig::At(200.0));
        cfg.barrier = BarrierKind::Unknown;
        cfg.loss = LossKind::Ortho2;
        assert_eq!(cfg.resolved_cap(), CapConfig::At(50.0));
        cfg.cap = Some(CapConfig::None);
        assert_eq!(cfg.resolved_cap(), CapConfig::None);
    }

    #[test]
    fn plugin_nuisance_examples() {
        let zero = RewardModel::linear(vec![0.0, 0.0]).unwrap();
        let t = plugin_time_nuisance(&zero, 1.0);
        let pair = QueryPair::new(vec![0.3, 0.1], vec![0.0, 0.5]).unwrap();
        assert_eq!(t(&pair), 1.0);
        let y = plugin_choice_nuisance(&zero, 1.0);
        assert_eq!(y(&pair), 0.0);

        // rf(pair) = 1 at a = 1
        let unit = RewardModel::linear(vec![1.0]).unwrap();
        let p1 = QueryPair::new(vec![1.5], vec![0.5]).unwrap();
        let t1 = plugin_time_nuisance(&unit, 1.0);
        approx::assert_relative_eq!(t1(&p1), (1.0f64).tanh(), max_relative = 1e-14);
        let y1 = plugin_choice_nuisance(&unit, 1.0);
        approx::assert_relative_eq!(y1(&p1), (1.0f64).tanh(), max_relative = 1e-14);

        // plug-in time values stay in (0, a^2]; choice mean is odd in rf
        let steep = RewardModel::linear(vec![40.0]).unwrap();
        let t40 = plugin_time_nuisance(&steep, 1.0);
        let v = t40(&p1);
        assert!(v > 0.0 && v <= 1.0);
        let y40 = plugin_choice_nuisance(&steep, 1.0);
        assert!((y40(&p1) + y40(&p1.swapped())).abs() < 1e-12);
    }

    #[test]
    fn model_spec_widths() {
        assert_eq!(ModelSpec::Linear.widths(7), vec![7]);
        assert_eq!(ModelSpec::Mlp { hidden: vec![32, 16] }.widths(10), vec![10, 32, 16, 1]);
    }
}
