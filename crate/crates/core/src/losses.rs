//! Pointwise losses for reward estimation from choices and response times.
//!
//! Four losses are implemented, all in their general-barrier form (they
//! reduce to the unit-barrier versions at `a = 1`):
//!
//! - `logloss`: `log(1 + exp(-2 a y r))`, choices only;
//! - `nonortho`: `(y - r t/a)^2`, consumes a time nuisance directly;
//! - `ortho`: `(y - (T - t) rf/a - r t/a)^2`, debiased by a preliminary
//!   reward `rf` so that nuisance errors enter only at second order;
//! - `ortho2`: `(y - (T - t) yh/t - r t/a)^2`, the unknown-barrier variant
//!   whose debias weight `yh/t` avoids the unidentifiable `rf/a`.
//!
//! Decision times are capped before entering any residual; losses always
//! consume the decision portion `t_total - t_nd`.

use std::sync::Arc;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::num::{log1p_exp, sigmoid, tree_mean, tree_sum};
use crate::reward::{QueryPair, RewardModel};

/// One recorded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pair: QueryPair,
    /// Choice: `+1` for option 1, `-1` for option 2.
    pub y: i8,
    /// Total response time in seconds (non-decision time included).
    pub t_total: f64,
}

impl Observation {
    pub fn new(pair: QueryPair, y: i8, t_total: f64) -> Result<Self> {
        if y != 1 && y != -1 {
            return Err(Error::domain(format!("y must be +1 or -1, got {y}")));
        }
        if !t_total.is_finite() || t_total <= 0.0 {
            return Err(Error::domain(format!("t_total must be positive, got {t_total}")));
        }
        Ok(Observation { pair, y, t_total })
    }
}

/// Decision-time cap: `At(B)` truncates at `B`, `None` leaves times alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapConfig {
    None,
    At(f64),
}

impl CapConfig {
    pub fn at(cap: f64) -> Result<Self> {
        if !cap.is_finite() || cap <= 0.0 {
            return Err(Error::config(format!("cap must be positive, got {cap}")));
        }
        Ok(CapConfig::At(cap))
    }
}

impl Serialize for CapConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CapConfig::None => s.serialize_str("none"),
            CapConfig::At(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for CapConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct CapVisitor;
        impl Visitor<'_> for CapVisitor {
            type Value = CapConfig;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a positive number or the string \"none\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<CapConfig, E> {
                CapConfig::at(v).map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<CapConfig, E> {
                self.visit_f64(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<CapConfig, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CapConfig, E> {
                if v == "none" {
                    Ok(CapConfig::None)
                } else {
                    Err(E::custom(format!("cap must be a number or \"none\", got {v:?}")))
                }
            }
        }
        d.deserialize_any(CapVisitor)
    }
}

/// `min(t_decision, B)`; identity when no cap is set.
pub fn cap_time(t_decision: f64, cap: CapConfig) -> f64 {
    match cap {
        CapConfig::None => t_decision,
        CapConfig::At(b) => t_decision.min(b),
    }
}

/// Loss selector. The serialized names are fixed strings used in configs
/// and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Logloss,
    Nonortho,
    Ortho,
    Ortho2,
}

impl LossKind {
    pub const ALL: [LossKind; 4] =
        [LossKind::Logloss, LossKind::Nonortho, LossKind::Ortho, LossKind::Ortho2];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Logloss => "logloss",
            LossKind::Nonortho => "nonortho",
            LossKind::Ortho => "ortho",
            LossKind::Ortho2 => "ortho2",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logloss" => Ok(LossKind::Logloss),
            "nonortho" => Ok(LossKind::Nonortho),
            "ortho" => Ok(LossKind::Ortho),
            "ortho2" => Ok(LossKind::Ortho2),
            other => Err(Error::config(format!(
                "unknown loss {other:?}; valid kinds are logloss, nonortho, ortho, ortho2"
            ))),
        }
    }
}

/// Nuisance evaluated on a query pair.
pub type PairFn = Arc<dyn Fn(&QueryPair) -> f64 + Send + Sync>;

/// First-stage estimates consumed by the second-stage losses.
///
/// `reward` is the preliminary reward `rf`, `time` the expected decision
/// time (strictly positive outputs), `choice` the optional choice mean in
/// `(-1, 1)` used by `ortho2`.
#[derive(Clone, Default)]
pub struct NuisanceSet {
    pub reward: Option<PairFn>,
    pub time: Option<PairFn>,
    pub choice: Option<PairFn>,
}

impl std::fmt::Debug for NuisanceSet {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.debug_struct("NuisanceSet")
            .field("reward", &self.reward.is_some())
            .field("time", &self.time.is_some())
            .field("choice", &self.choice.is_some())
            .finish()
    }
}

impl NuisanceSet {
    pub fn none() -> Self {
        NuisanceSet::default()
    }

    pub fn with_reward(mut self, f: PairFn) -> Self {
        self.reward = Some(f);
        self
    }

    pub fn with_time(mut self, f: PairFn) -> Self {
        self.time = Some(f);
        self
    }

    pub fn with_choice(mut self, f: PairFn) -> Self {
        self.choice = Some(f);
        self
    }

    /// Checks that the pieces required by `kind` are present.
    pub fn check_for(&self, kind: LossKind) -> Result<()> {
        let missing = |what: &str| {
            Err(Error::config(format!("loss {kind} requires a {what} nuisance, none supplied")))
        };
        match kind {
            LossKind::Logloss => Ok(()),
            LossKind::Nonortho => {
                if self.time.is_none() {
                    return missing("time");
                }
                Ok(())
            }
            LossKind::Ortho => {
                if self.reward.is_none() {
                    return missing("reward");
                }
                if self.time.is_none() {
                    return missing("time");
                }
                Ok(())
            }
            LossKind::Ortho2 => {
                if self.choice.is_none() {
                    return missing("choice");
                }
                if self.time.is_none() {
                    return missing("time");
                }
                Ok(())
            }
        }
    }
}

/// Logistic loss `log(1 + exp(-2 a y r))` and its `d/dr`.
///
/// Computed as `log1p(exp(-|u|)) + max(0, -u)` with `u = 2 a y r`, which is
/// overflow-free for any magnitude.
pub fn logloss_point(y: f64, rdiff: f64, a: f64) -> (f64, f64) {
    debug_assert!(a > 0.0);
    let u = 2.0 * a * y * rdiff;
    let value = log1p_exp(-u);
    let grad = -2.0 * a * y * sigmoid(-u);
    (value, grad)
}

/// Squared-error loss `(y - r t/a)^2` and its `d/dr`.
pub fn nonortho_point(y: f64, rdiff: f64, t_hat: f64, a: f64) -> (f64, f64) {
    debug_assert!(t_hat > 0.0 && a > 0.0);
    let residual = y - rdiff * t_hat / a;
    let value = residual * residual;
    let grad = -2.0 * (t_hat / a) * residual;
    (value, grad)
}

/// Orthogonalized loss `(y - (T - t) rf/a - r t/a)^2` and its `d/dr`.
pub fn ortho_point(
    y: f64,
    t_decision: f64,
    rdiff: f64,
    r_frak: f64,
    t_hat: f64,
    a: f64,
) -> (f64, f64) {
    debug_assert!(t_hat > 0.0 && a > 0.0);
    let residual = y - (t_decision - t_hat) * r_frak / a - rdiff * t_hat / a;
    let value = residual * residual;
    let grad = -2.0 * (t_hat / a) * residual;
    (value, grad)
}

/// Unknown-barrier orthogonal loss `(y - (T - t) yh/t - r t/a)^2` and its
/// `d/dr`. With the barrier unknown, `a_internal` is fixed to 1 and the
/// fitted model targets the scaled reward `r/a`.
pub fn ortho2_point(
    y: f64,
    t_decision: f64,
    rdiff: f64,
    y_hat: f64,
    t_hat: f64,
    a_internal: f64,
) -> Result<(f64, f64)> {
    if t_hat <= 0.0 {
        return Err(Error::domain(format!("time nuisance must be positive, got {t_hat}")));
    }
    debug_assert!(a_internal > 0.0);
    let residual = y - (t_decision - t_hat) * y_hat / t_hat - rdiff * t_hat / a_internal;
    let value = residual * residual;
    let grad = -2.0 * (t_hat / a_internal) * residual;
    Ok((value, grad))
}

/// Evaluation context for [`empirical_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossContext {
    pub kind: LossKind,
    /// Barrier passed to the loss formulas (the true `a` in known-barrier
    /// mode, 1 in unknown-barrier mode).
    pub a: f64,
    /// Non-decision time subtracted from total response times.
    pub t_nd: f64,
    pub cap: CapConfig,
}

/// Mean pointwise loss over `obs` with the parameter gradient assembled
/// through the model's reward-difference gradient.
///
/// Decision times are capped before entering the residual. Observations are
/// reduced in a fixed pairwise order, so the value is reproducible bit for
/// bit (documented cross-run tolerance 1e-12).
pub fn empirical_loss(
    ctx: &LossContext,
    obs: &[Observation],
    model: &RewardModel,
    nuisances: &NuisanceSet,
) -> Result<(f64, Vec<f64>)> {
    if obs.is_empty() {
        return Err(Error::config("empirical loss needs at least one observation"));
    }
    nuisances.check_for(ctx.kind)?;
    let n = obs.len() as f64;
    let mut values = Vec::with_capacity(obs.len());
    let mut grad = vec![0.0; model.param_count()];
    for o in obs {
        let (rdiff, rgrad) = model.reward_diff_grad(&o.pair)?;
        let y = o.y as f64;
        let t_dec = cap_time(o.t_total - ctx.t_nd, ctx.cap);
        let (value, dldr) = match ctx.kind {
            LossKind::Logloss => logloss_point(y, rdiff, ctx.a),
            LossKind::Nonortho => {
                let t_hat = (nuisances.time.as_ref().unwrap())(&o.pair);
                nonortho_point(y, rdiff, t_hat, ctx.a)
            }
            LossKind::Ortho => {
                let t_hat = (nuisances.time.as_ref().unwrap())(&o.pair);
                let r_frak = (nuisances.reward.as_ref().unwrap())(&o.pair);
                ortho_point(y, t_dec, rdiff, r_frak, t_hat, ctx.a)
            }
            LossKind::Ortho2 => {
                let t_hat = (nuisances.time.as_ref().unwrap())(&o.pair);
                let y_hat = (nuisances.choice.as_ref().unwrap())(&o.pair);
                ortho2_point(y, t_dec, rdiff, y_hat, t_hat, ctx.a)?
            }
        };
        values.push(value);
        for (g, r) in grad.iter_mut().zip(&rgrad) {
            *g += dldr * r / n;
        }
    }
    Ok((tree_mean(&values), grad))
}

/// Per-observation inputs for the derivative probes below, all evaluated at
/// the reference point (true reward and true nuisances).
#[derive(Debug, Clone, Default)]
pub struct ProbeSample {
    pub y: Vec<f64>,
    /// Capped decision times.
    pub t_dec: Vec<f64>,
    /// Reward differences of the reference model.
    pub rdiff: Vec<f64>,
    /// Reward-nuisance values (ortho).
    pub r_frak: Vec<f64>,
    /// Time-nuisance values.
    pub t_hat: Vec<f64>,
    /// Choice-nuisance values (ortho2).
    pub y_hat: Vec<f64>,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct ProbeEstimate {
    pub value: f64,
    pub std_err: f64,
}

fn point_loss(
    kind: LossKind,
    a: f64,
    y: f64,
    t_dec: f64,
    rdiff: f64,
    r_frak: f64,
    t_hat: f64,
    y_hat: f64,
) -> Result<f64> {
    Ok(match kind {
        LossKind::Logloss => logloss_point(y, rdiff, a).0,
        LossKind::Nonortho => nonortho_point(y, rdiff, t_hat, a).0,
        LossKind::Ortho => ortho_point(y, t_dec, rdiff, r_frak, t_hat, a).0,
        LossKind::Ortho2 => ortho2_point(y, t_dec, rdiff, y_hat, t_hat, a)?.0,
    })
}

fn mean_and_se(samples: &[f64]) -> ProbeEstimate {
    let n = samples.len() as f64;
    let mean = tree_mean(samples);
    let sq: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = tree_sum(&sq) / (n - 1.0);
    ProbeEstimate { value: mean, std_err: (var / n).sqrt() }
}

/// Mixed finite-difference derivative of the empirical loss in a reward
/// direction `k` and a nuisance direction `(h_reward, h_time, h_choice)`,
/// centred at the sample in `probe`:
///
/// `[L(r+ek, g+eh) - L(r+ek, g) - L(r, g+eh) + L(r, g)] / e^2`
///
/// For a Neyman-orthogonal loss this is zero at the truth up to Monte-Carlo
/// error; for the plain squared loss it is not. Direction components that a
/// loss does not use are ignored.
pub fn mixed_derivative_probe(
    kind: LossKind,
    a: f64,
    eps: f64,
    probe: &ProbeSample,
    k: &[f64],
    h_reward: &[f64],
    h_time: &[f64],
    h_choice: &[f64],
) -> Result<ProbeEstimate> {
    let n = probe.y.len();
    if n < 2 {
        return Err(Error::config("probe needs at least two observations"));
    }
    let at = |xs: &[f64], i: usize| if xs.is_empty() { 0.0 } else { xs[i] };
    let mut quotients = Vec::with_capacity(n);
    for i in 0..n {
        let (y, t) = (probe.y[i], probe.t_dec[i]);
        let r0 = probe.rdiff[i];
        let r1 = r0 + eps * k[i];
        let (rf0, th0, yh0) = (at(&probe.r_frak, i), probe.t_hat[i], at(&probe.y_hat, i));
        let rf1 = rf0 + eps * at(h_reward, i);
        let th1 = th0 + eps * at(h_time, i);
        let yh1 = yh0 + eps * at(h_choice, i);
        let l_kk = point_loss(kind, a, y, t, r1, rf1, th1, yh1)?;
        let l_k0 = point_loss(kind, a, y, t, r1, rf0, th0, yh0)?;
        let l_0k = point_loss(kind, a, y, t, r0, rf1, th1, yh1)?;
        let l_00 = point_loss(kind, a, y, t, r0, rf0, th0, yh0)?;
        quotients.push((l_kk - l_k0 - l_0k + l_00) / (eps * eps));
    }
    Ok(mean_and_se(&quotients))
}

/// Directional derivative of the empirical loss in the reward direction `k`
/// at the reference point: `mean(dl/dr * k)` with its standard error. Zero
/// within Monte-Carlo error when the reference is the population minimizer.
pub fn gradient_probe(
    kind: LossKind,
    a: f64,
    probe: &ProbeSample,
    k: &[f64],
) -> Result<ProbeEstimate> {
    let n = probe.y.len();
    if n < 2 {
        return Err(Error::config("probe needs at least two observations"));
    }
    let at = |xs: &[f64], i: usize| if xs.is_empty() { 0.0 } else { xs[i] };
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let (y, t) = (probe.y[i], probe.t_dec[i]);
        let dldr = match kind {
            LossKind::Logloss => logloss_point(y, probe.rdiff[i], a).1,
            LossKind::Nonortho => nonortho_point(y, probe.rdiff[i], probe.t_hat[i], a).1,
            LossKind::Ortho => {
                ortho_point(y, t, probe.rdiff[i], at(&probe.r_frak, i), probe.t_hat[i], a).1
            }
            LossKind::Ortho2 => {
                ortho2_point(y, t, probe.rdiff[i], at(&probe.y_hat, i), probe.t_hat[i], a)?.1
            }
        };
        terms.push(dldr * k[i]);
    }
    Ok(mean_and_se(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LOG_1P_EXP_M2: f64 = 0.126928011042972_5; // log(1 + e^-2)
    const ONE_MINUS_TANH1_SQ: f64 = 0.056837346474444_15; // (1 - tanh 1)^2

    #[test]
    fn cap_examples() {
        assert_eq!(cap_time(5.0, CapConfig::at(3.0).unwrap()), 3.0);
        assert_eq!(cap_time(1.0, CapConfig::at(3.0).unwrap()), 1.0);
        assert_eq!(cap_time(2.0, CapConfig::None), 2.0);
        assert!(CapConfig::at(0.0).is_err());
        assert!(CapConfig::at(-1.0).is_err());
    }

    #[test]
    fn cap_serde_forms() {
        let at: CapConfig = serde_json::from_str("3.5").unwrap();
        assert_eq!(at, CapConfig::At(3.5));
        let none: CapConfig = serde_json::from_str("\"none\"").unwrap();
        assert_eq!(none, CapConfig::None);
        assert!(serde_json::from_str::<CapConfig>("\"nope\"").is_err());
        assert_eq!(serde_json::to_string(&CapConfig::None).unwrap(), "\"none\"");
    }

    #[test]
    fn logloss_examples() {
        let (v, _) = logloss_point(1.0, 0.0, 1.0);
        assert_relative_eq!(v, std::f64::consts::LN_2, max_relative = 1e-15);
        let (v, _) = logloss_point(1.0, 1.0, 1.0);
        assert_relative_eq!(v, LOG_1P_EXP_M2, max_relative = 1e-14);
        let (_, g) = logloss_point(1.0, 0.0, 1.0);
        assert_relative_eq!(g, -1.0, max_relative = 1e-15);
        // stable far into the tails
        let (v, g) = logloss_point(1.0, 400.0, 1.0);
        assert!(v >= 0.0 && v < 1e-300 && g.abs() < 1e-300);
        let (v, _) = logloss_point(-1.0, 400.0, 1.0);
        assert_relative_eq!(v, 800.0, max_relative = 1e-12);
    }

    #[test]
    fn nonortho_examples() {
        assert_eq!(nonortho_point(1.0, 0.0, 0.7, 1.0).0, 1.0);
        let t1 = (1.0f64).tanh();
        assert_relative_eq!(nonortho_point(1.0, 1.0, t1, 1.0).0, ONE_MINUS_TANH1_SQ, max_relative = 1e-13);
        // residual constructed to vanish: y = -1, rdiff = -1/t_hat
        let (v, _) = nonortho_point(-1.0, -2.0, 0.5, 1.0);
        assert!(v.abs() < 1e-30);
    }

    #[test]
    fn ortho_examples() {
        let (v, _) = ortho_point(1.0, 0.8, 0.6, 0.5, 0.9, 1.0);
        assert_relative_eq!(v, 0.2601, max_relative = 1e-12);
        // debias term vanishes when T equals the time nuisance
        let (v1, g1) = ortho_point(1.0, 0.9, 0.6, 0.5, 0.9, 1.0);
        let (v2, g2) = nonortho_point(1.0, 0.6, 0.9, 1.0);
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
        let (v, _) = ortho_point(1.0, 1.2, 1.0, 0.0, 1.0, 1.0);
        assert!(v.abs() < 1e-30);
    }

    #[test]
    fn ortho_reduces_to_nonortho_at_zero_reward_nuisance() {
        for i in 0..50 {
            let x = i as f64 * 0.17 - 4.0;
            let (v1, g1) = ortho_point(1.0, 0.3 + x.abs(), x, 0.0, 0.8, 1.3);
            let (v2, g2) = nonortho_point(1.0, x, 0.8, 1.3);
            assert_eq!(v1, v2);
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn ortho2_examples() {
        let (v, _) = ortho2_point(1.0, 0.8, 0.6, 0.45, 0.9, 1.0).unwrap();
        assert_relative_eq!(v, 0.2601, max_relative = 1e-12);
        // constructed zero residual: T = t_hat and rdiff t_hat = y a
        let (v, _) = ortho2_point(1.0, 0.9, 1.0 / 0.9, 0.2, 0.9, 1.0).unwrap();
        assert!(v.abs() < 1e-25);
        // gradient sign: positive residual means negative gradient
        let (_, g) = ortho2_point(1.0, 0.8, 0.0, 0.0, 0.9, 1.0).unwrap();
        assert!(g < 0.0);
        assert!(ortho2_point(1.0, 0.8, 0.6, 0.45, 0.0, 1.0).is_err());
        assert!(ortho2_point(1.0, 0.8, 0.6, 0.45, -0.1, 1.0).is_err());
    }

    fn obs(x1: Vec<f64>, x2: Vec<f64>, y: i8, t: f64) -> Observation {
        Observation::new(QueryPair::new(x1, x2).unwrap(), y, t).unwrap()
    }

    #[test]
    fn empirical_loss_matches_pointwise_on_singleton() {
        let model = RewardModel::linear(vec![0.5, -0.2]).unwrap();
        let o = obs(vec![1.0, 0.0], vec![0.0, 1.0], 1, 0.8);
        let ctx = LossContext { kind: LossKind::Logloss, a: 1.0, t_nd: 0.0, cap: CapConfig::None };
        let (v, _) = empirical_loss(&ctx, std::slice::from_ref(&o), &model, &NuisanceSet::none()).unwrap();
        let rdiff = model.reward_diff(&o.pair).unwrap();
        assert_eq!(v, logloss_point(1.0, rdiff, 1.0).0);

        // mean of two identical observations equals the single value
        let (v2, _) = empirical_loss(&ctx, &[o.clone(), o], &model, &NuisanceSet::none()).unwrap();
        assert_relative_eq!(v, v2, max_relative = 1e-15);
    }

    #[test]
    fn empirical_loss_requires_nuisances() {
        let model = RewardModel::linear(vec![0.5]).unwrap();
        let o = obs(vec![1.0], vec![0.0], 1, 0.8);
        let ctx = LossContext { kind: LossKind::Ortho, a: 1.0, t_nd: 0.0, cap: CapConfig::None };
        let err = empirical_loss(&ctx, &[o], &model, &NuisanceSet::none()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn empirical_losses_are_nonnegative() {
        let model = RewardModel::linear(vec![0.3, 0.9]).unwrap();
        let data: Vec<Observation> = (0..40)
            .map(|i| {
                let s = i as f64 * 0.37;
                obs(
                    vec![s.sin(), s.cos()],
                    vec![(s + 1.0).sin(), (s + 1.0).cos()],
                    if i % 3 == 0 { -1 } else { 1 },
                    0.2 + (i as f64) * 0.05,
                )
            })
            .collect();
        let nuis = NuisanceSet::none()
            .with_reward(Arc::new(|_: &QueryPair| 0.4))
            .with_time(Arc::new(|_: &QueryPair| 0.8))
            .with_choice(Arc::new(|_: &QueryPair| 0.3));
        for kind in LossKind::ALL {
            let ctx = LossContext { kind, a: 1.2, t_nd: 0.1, cap: CapConfig::at(3.0).unwrap() };
            let (v, _) = empirical_loss(&ctx, &data, &model, &nuis).unwrap();
            assert!(v >= 0.0, "{kind} produced negative loss {v}");
        }
    }
}
