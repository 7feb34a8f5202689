//! Monte-Carlo evaluation of the asymptotic covariances of the linear-reward
//! estimators, and their empirical validation by repeated fits.
//!
//! For the choices-only estimator the asymptotic covariance is
//! `(4 a^2 E[sig(-2a<t,X>) sig(2a<t,X>) X X^T])^{-1}`; for the
//! response-time-augmented orthogonal estimator it is the influence-function
//! sandwich `A^{-1} B A^{-1}` with `A = E[t^2 X X^T]`, `B = E[t^3 X X^T]`
//! and `t = a tanh(a <t,X>) / <t,X>`. The product `sig(2x) sig(-2x)` decays
//! exponentially in the reward magnitude while `tanh(x)/x` decays only
//! polynomially, which is the entire gap between the two estimators.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureDist, GeneratorInfo, OracleSpec, Provenance};
use crate::error::{Error, Result};
use crate::estimation::{two_stage_fit, two_stage_fit_with_nuisances, FitConfig, ModelSpec};
use crate::ez::{EZParams, EZSampleConfig};
use crate::losses::{LossKind, NuisanceSet};
use crate::num::{sigmoid, tanhc};
use crate::reward::{QueryPair, RewardModel};
use crate::rng::{self, Stream};

const CONDITION_LIMIT: f64 = 1e12;
const MIN_MC_SAMPLES: usize = 10_000;

/// Theoretical covariances of both estimators at a common design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub d: usize,
    pub theta_o: Vec<f64>,
    pub a: f64,
    pub features: FeatureDist,
    pub mc_samples: usize,
    /// Row-major d x d matrix.
    pub sigma_logloss: Vec<f64>,
    pub sigma_ortho: Vec<f64>,
    pub cond_logloss: f64,
    pub cond_ortho: f64,
}

fn dot(theta: &[f64], x: &[f64]) -> f64 {
    theta.iter().zip(x).map(|(t, v)| t * v).sum()
}

/// Symmetric-eigendecomposition inverse with a condition check; errors name
/// the offending eigenvalue.
fn invert_spd(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l.abs());
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if lo <= 0.0 || cond > CONDITION_LIMIT {
        return Err(Error::Degenerate(format!(
            "{what} matrix is numerically singular: smallest eigenvalue {lo:.3e}, condition {cond:.3e}"
        )));
    }
    let d = m.nrows();
    let mut inv_diag = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        inv_diag[(i, i)] = 1.0 / eig.eigenvalues[i];
    }
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok(((&inv + inv.transpose()) * 0.5, cond))
}

/// Covariance of the logistic estimator
/// `(4 a^2 E[sig(-2a u) sig(2a u) X X^T])^{-1}` with `u = <theta_o, X>`,
/// Monte-Carlo averaged over `n` feature draws.
pub fn cov_logloss_with<S>(
    theta_o: &[f64],
    a: f64,
    mut sampler: S,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)>
where
    S: FnMut(&mut Stream) -> Vec<f64>,
{
    check_inputs(theta_o, a, n)?;
    let d = theta_o.len();
    let mut rng = rng::substream(seed, 0xC0);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for _ in 0..n {
        let x = sampler(&mut rng);
        let u = dot(theta_o, &x);
        let w = 4.0 * a * a * sigmoid(2.0 * a * u) * sigmoid(-2.0 * a * u);
        accumulate(&mut acc, &x, w);
    }
    finish(&mut acc, n);
    invert_spd(&acc, "logistic information")
}

/// Covariance of the orthogonal estimator: the sandwich
/// `A^{-1} B A^{-1}` with `A = E[t^2 X X^T]`, `B = E[t^3 X X^T]`,
/// `t = a tanh(a u)/u`.
pub fn cov_ortho_with<S>(
    theta_o: &[f64],
    a: f64,
    mut sampler: S,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)>
where
    S: FnMut(&mut Stream) -> Vec<f64>,
{
    check_inputs(theta_o, a, n)?;
    let d = theta_o.len();
    let mut rng = rng::substream(seed, 0xC0);
    let mut acc2 = DMatrix::<f64>::zeros(d, d);
    let mut acc3 = DMatrix::<f64>::zeros(d, d);
    for _ in 0..n {
        let x = sampler(&mut rng);
        let t = a * a * tanhc(a * dot(theta_o, &x));
        accumulate(&mut acc2, &x, t * t);
        accumulate(&mut acc3, &x, t * t * t);
    }
    finish(&mut acc2, n);
    finish(&mut acc3, n);
    let (a_inv, cond) = invert_spd(&acc2, "orthogonal Jacobian")?;
    let sigma = &a_inv * &acc3 * &a_inv;
    Ok(((&sigma + sigma.transpose()) * 0.5, cond))
}

/// [`cov_logloss_with`] driven by a named feature distribution.
pub fn cov_logloss(
    theta_o: &[f64],
    a: f64,
    features: FeatureDist,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)> {
    let d = theta_o.len();
    cov_logloss_with(theta_o, a, move |rng| features.sample(d, rng), n, seed)
}

/// [`cov_ortho_with`] driven by a named feature distribution.
pub fn cov_ortho(
    theta_o: &[f64],
    a: f64,
    features: FeatureDist,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)> {
    let d = theta_o.len();
    cov_ortho_with(theta_o, a, move |rng| features.sample(d, rng), n, seed)
}

fn check_inputs(theta_o: &[f64], a: f64, n: usize) -> Result<()> {
    if theta_o.is_empty() || theta_o.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("theta_o must be non-empty and finite"));
    }
    if !a.is_finite() || a <= 0.0 {
        return Err(Error::domain(format!("barrier must be positive, got {a}")));
    }
    if n < MIN_MC_SAMPLES {
        return Err(Error::config(format!(
            "Monte-Carlo covariance needs at least {MIN_MC_SAMPLES} samples, got {n}"
        )));
    }
    Ok(())
}

fn accumulate(acc: &mut DMatrix<f64>, x: &[f64], w: f64) {
    let d = x.len();
    for i in 0..d {
        for j in 0..=i {
            acc[(i, j)] += w * x[i] * x[j];
        }
    }
}

fn finish(acc: &mut DMatrix<f64>, n: usize) {
    let d = acc.nrows();
    for i in 0..d {
        for j in 0..=i {
            let v = acc[(i, j)] / n as f64;
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
}

/// Builds the full report for both estimators on a common sampled design.
pub fn covariance_report(
    theta_o: &[f64],
    a: f64,
    features: FeatureDist,
    n: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    let (log, cond_log) = cov_logloss(theta_o, a, features, n, seed)?;
    let (ort, cond_ort) = cov_ortho(theta_o, a, features, n, seed)?;
    Ok(CovarianceReport {
        d: theta_o.len(),
        theta_o: theta_o.to_vec(),
        a,
        features,
        mc_samples: n,
        sigma_logloss: log.iter().copied().collect(),
        sigma_ortho: ort.iter().copied().collect(),
        cond_logloss: cond_log,
        cond_ortho: cond_ort,
    })
}

// ---------------------------------------------------------------------------
// Empirical validation
// ---------------------------------------------------------------------------

/// One cell of the estimator-covariance validation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovExperiment {
    pub theta_o: Vec<f64>,
    pub a: f64,
    pub features: FeatureDist,
    /// Observations per repetition.
    pub n: usize,
    pub reps: usize,
    pub loss: LossKind,
    /// Strategy/optimizer settings; `loss`, `a` and `barrier` are overridden
    /// by this experiment's fields.
    pub fit: FitConfig,
    /// Inject the exact `(r_o, t_o)` (and choice-mean) nuisances instead of
    /// estimating them.
    pub exact_nuisance: bool,
}

/// Sample covariance of `sqrt(n) (theta_hat - theta_o)` over repetitions.
#[derive(Debug, Clone)]
pub struct CovEmpirical {
    pub cov: DMatrix<f64>,
    /// Per-repetition estimates (successful ones).
    pub estimates: Vec<Vec<f64>>,
    pub failures: usize,
}

/// Exact nuisances for a linear truth: reward difference, expected decision
/// time and choice mean, all evaluated through the closed forms.
pub fn exact_nuisances(theta_o: &[f64], a: f64) -> NuisanceSet {
    let theta_r = theta_o.to_vec();
    let theta_t = theta_o.to_vec();
    let theta_y = theta_o.to_vec();
    NuisanceSet::none()
        .with_reward(std::sync::Arc::new(move |p: &QueryPair| {
            dot(&theta_r, &p.x1) - dot(&theta_r, &p.x2)
        }))
        .with_time(std::sync::Arc::new(move |p: &QueryPair| {
            let u = dot(&theta_t, &p.x1) - dot(&theta_t, &p.x2);
            a * a * tanhc(a * u)
        }))
        .with_choice(std::sync::Arc::new(move |p: &QueryPair| {
            let u = dot(&theta_y, &p.x1) - dot(&theta_y, &p.x2);
            (a * u).tanh()
        }))
}

/// Runs `reps` independent generation+fit cycles and returns the sample
/// covariance of the rescaled errors. Failed repetitions are recorded and
/// excluded; more than 10% failures abort the experiment.
pub fn empirical_estimator_cov(exp: &CovExperiment, seed: u64) -> Result<CovEmpirical> {
    if exp.reps < 2 {
        return Err(Error::config("need at least 2 repetitions for a covariance"));
    }
    let d = exp.theta_o.len();
    let truth = RewardModel::linear(exp.theta_o.to_vec())?;
    let ez = EZParams::new(exp.a, 0.0)?;
    let sample_cfg = EZSampleConfig::default_for(&ez);
    let mut fit_cfg = exp.fit.clone();
    fit_cfg.loss = exp.loss;
    fit_cfg.a = exp.a;
    fit_cfg.barrier = crate::estimation::BarrierKind::Known;
    let nuisances = exact_nuisances(&exp.theta_o, exp.a);

    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(exp.reps);
    let mut failures = 0usize;
    for rep in 0..exp.reps {
        let rep_seed = rng::derive_seed(seed, &[0xE0, rep as u64]);
        let mut feat_rng = rng::substream(rep_seed, 0xFE);
        // pair (X, 0) realizes the pair-level feature X exactly
        let dataset = {
            let mut observations = Vec::with_capacity(exp.n);
            let mut trial_rng = rng::substream(rep_seed, 0x7A);
            let mut ok = true;
            for _ in 0..exp.n {
                let x = exp.features.sample(d, &mut feat_rng);
                let pair = QueryPair::new(x.clone(), vec![0.0; d])?;
                let rdiff = truth.reward_diff(&pair)?;
                match crate::ez::sample_trial(rdiff, &ez, &sample_cfg, &mut trial_rng) {
                    Ok((y, t)) => observations.push(crate::losses::Observation::new(pair, y, t)?),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                failures += 1;
                continue;
            }
            crate::data::Dataset {
                dim: d,
                observations,
                provenance: Provenance {
                    generator: Some(GeneratorInfo::Spec {
                        spec: OracleSpec {
                            truth: truth.clone(),
                            features: exp.features,
                            ez,
                            n: exp.n,
                        },
                        digest: String::new(),
                    }),
                    seed: rep_seed,
                    ez: Some(ez),
                    sampler: Some(sample_cfg),
                    created: None,
                    oracle_scores: None,
                },
            }
        };
        fit_cfg.seed = rep_seed;
        let fitted = if exp.loss == LossKind::Logloss {
            two_stage_fit(&dataset, &fit_cfg, &ModelSpec::Linear)
        } else if exp.exact_nuisance {
            two_stage_fit_with_nuisances(&dataset, &fit_cfg, &ModelSpec::Linear, &nuisances)
        } else {
            two_stage_fit(&dataset, &fit_cfg, &ModelSpec::Linear)
        };
        match fitted {
            Ok(out) => match out.model {
                RewardModel::Linear(lin) => estimates.push(lin.theta),
                RewardModel::Mlp(_) => {
                    return Err(Error::config("covariance experiment requires linear fits"))
                }
            },
            Err(_) => failures += 1,
        }
    }

    if failures * 10 > exp.reps {
        return Err(Error::fit(format!(
            "{failures}/{} repetitions failed; experiment aborted",
            exp.reps
        )));
    }
    let m = estimates.len();
    if m < 2 {
        return Err(Error::fit("fewer than 2 successful repetitions"));
    }
    let sqrt_n = (exp.n as f64).sqrt();
    let scaled: Vec<Vec<f64>> = estimates
        .iter()
        .map(|est| est.iter().zip(&exp.theta_o).map(|(e, t)| sqrt_n * (e - t)).collect())
        .collect();
    let mut mean = vec![0.0; d];
    for s in &scaled {
        for i in 0..d {
            mean[i] += s[i] / m as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in &scaled {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]) / (m - 1) as f64;
            }
        }
    }
    Ok(CovEmpirical { cov, estimates, failures })
}

// ---------------------------------------------------------------------------
// Orthogonality diagnostic
// ---------------------------------------------------------------------------

/// Probe results for one perturbation direction.
#[derive(Debug, Clone, Copy)]
pub struct OrthoProbe {
    /// Mixed finite difference of the orthogonal loss (0 within noise).
    pub ortho: crate::losses::ProbeEstimate,
    /// Same probe for the plain squared loss (systematically nonzero).
    pub nonortho: crate::losses::ProbeEstimate,
    /// Directional gradient of the orthogonal loss at the truth.
    pub grad_at_truth: crate::losses::ProbeEstimate,
}

/// Monte-Carlo orthogonality check at a known linear truth.
///
/// Samples `n` trials from a random linear reward of norm `theta_norm` on
/// unit-sphere items, sets the nuisances to their exact values, and for
/// `n_dirs` random affine perturbation directions (of magnitude `dir_scale`,
/// applied to the reward and to both nuisance components) evaluates the
/// forward mixed finite-difference quotient at step `eps`.
pub fn orthogonality_diagnostic(
    d: usize,
    theta_norm: f64,
    a: f64,
    n: usize,
    n_dirs: usize,
    eps: f64,
    dir_scale: f64,
    seed: u64,
) -> Result<Vec<OrthoProbe>> {
    use crate::losses::{gradient_probe, mixed_derivative_probe, ProbeSample};
    use rand_distr::StandardNormal;

    let mut theta_rng = rng::substream(seed, 0x01);
    let mut theta: Vec<f64> =
        (0..d).map(|_| rand::Rng::sample::<f64, _>(&mut theta_rng, StandardNormal)).collect();
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in theta.iter_mut() {
        *v *= theta_norm / norm;
    }

    let ez = EZParams::new(a, 0.0)?;
    let cfg = EZSampleConfig::default_for(&ez);
    let mut gen_rng = rng::substream(seed, 0x02);
    let mut probe = ProbeSample::default();
    let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = FeatureDist::Sphere.sample(d, &mut gen_rng);
        let x2 = FeatureDist::Sphere.sample(d, &mut gen_rng);
        let rdiff: f64 = dot(&theta, &x1) - dot(&theta, &x2);
        let (y, t_total) = crate::ez::sample_trial(rdiff, &ez, &cfg, &mut gen_rng)?;
        probe.y.push(y as f64);
        probe.t_dec.push(t_total);
        probe.rdiff.push(rdiff);
        probe.r_frak.push(rdiff);
        probe.t_hat.push(a * a * tanhc(a * rdiff));
        diffs.push(x1.iter().zip(&x2).map(|(p, q)| p - q).collect());
    }

    let mut dir_rng = rng::substream(seed, 0x03);
    let draw_direction = |rng: &mut Stream| -> Vec<f64> {
        // affine direction: intercept plus a linear functional of the diff
        let mut c: Vec<f64> =
            (0..=d).map(|_| rand::Rng::sample::<f64, _>(rng, StandardNormal)).collect();
        for v in c.iter_mut() {
            *v *= dir_scale;
        }
        c
    };
    let eval_direction = |coef: &[f64], diff: &[f64]| -> f64 {
        coef[0] + coef[1..].iter().zip(diff).map(|(c, x)| c * x).sum::<f64>()
    };

    let mut out = Vec::with_capacity(n_dirs);
    for _ in 0..n_dirs {
        let k_c = draw_direction(&mut dir_rng);
        let hr_c = draw_direction(&mut dir_rng);
        let ht_c = draw_direction(&mut dir_rng);
        let k: Vec<f64> = diffs.iter().map(|x| eval_direction(&k_c, x)).collect();
        let h_r: Vec<f64> = diffs.iter().map(|x| eval_direction(&hr_c, x)).collect();
        let h_t: Vec<f64> = diffs.iter().map(|x| eval_direction(&ht_c, x)).collect();
        let ortho =
            mixed_derivative_probe(LossKind::Ortho, a, eps, &probe, &k, &h_r, &h_t, &[])?;
        let nonortho =
            mixed_derivative_probe(LossKind::Nonortho, a, eps, &probe, &k, &h_r, &h_t, &[])?;
        let grad_at_truth = gradient_probe(LossKind::Ortho, a, &probe, &k)?;
        out.push(OrthoProbe { ortho, nonortho, grad_at_truth });
    }
    Ok(out)
}
