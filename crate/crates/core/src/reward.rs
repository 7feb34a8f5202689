//! Parameterized reward functions with exact analytic parameter gradients.
//!
//! Two families are supported: linear rewards and small feed-forward
//! networks with sigmoid hidden layers and an affine scalar output. Both
//! evaluate single items and query-pair differences, and both expose flat
//! parameter vectors so the optimizer and the serializer share one layout:
//! layer by layer, weights row-major, then biases (a linear model is just
//! its coefficient vector).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::num::sigmoid;
use crate::rng::Stream;

/// One comparison query: the feature vectors of the two presented options.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPair {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl QueryPair {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if x1.is_empty() || x1.len() != x2.len() {
            return Err(Error::domain(format!(
                "query pair dimensions must match and be >= 1, got {} and {}",
                x1.len(),
                x2.len()
            )));
        }
        if x1.iter().chain(x2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("query pair features must be finite"));
        }
        Ok(QueryPair { x1, x2 })
    }

    pub fn dim(&self) -> usize {
        self.x1.len()
    }

    /// Swapped copy (option 2 first).
    pub fn swapped(&self) -> QueryPair {
        QueryPair { x1: self.x2.clone(), x2: self.x1.clone() }
    }
}

/// Linear reward `x -> <theta, x>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReward {
    pub theta: Vec<f64>,
}

/// Feed-forward reward with sigmoid hidden activations and affine scalar
/// output. `widths` lists input, hidden and output sizes; the output width
/// is always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpReward {
    widths: Vec<usize>,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// Row-major `(out, in)` weight matrix.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl MlpReward {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("mlp needs at least input and output widths"));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::config(format!(
                "mlp output width must be 1, got {}",
                widths.last().unwrap()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::config("mlp widths must be positive"));
        }
        let layers = widths
            .windows(2)
            .map(|io| Layer { w: vec![0.0; io[0] * io[1]], b: vec![0.0; io[1]] })
            .collect();
        Ok(MlpReward { widths: widths.to_vec(), layers })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let inp = &acts[l];
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &layer.w[o * n_in..(o + 1) * n_in];
                let mut z = layer.b[o];
                for i in 0..n_in {
                    z += row[i] * inp[i];
                }
                out.push(if l < last { sigmoid(z) } else { z });
            }
            acts.push(out);
        }
        acts
    }

    fn value(&self, x: &[f64]) -> f64 {
        let acts = self.forward_cached(x);
        acts.last().unwrap()[0]
    }

    /// Output value and gradient w.r.t. the flat parameters, accumulated
    /// into `grad` with sign `scale`.
    fn accumulate_value_grad(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward_cached(x);
        let value = acts.last().unwrap()[0];
        let n_layers = self.layers.len();

        // delta[o] = d value / d z_l[o], starting at the affine output
        let mut delta = vec![1.0_f64];
        let mut offset_end = grad.len();
        for l in (0..n_layers).rev() {
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            let w_len = n_in * n_out;
            let base = offset_end - w_len - n_out;
            let inp = &acts[l];
            for o in 0..n_out {
                let d = delta[o] * scale;
                let w_row = base + o * n_in;
                for i in 0..n_in {
                    grad[w_row + i] += d * inp[i];
                }
                grad[base + w_len + o] += d;
            }
            if l > 0 {
                let layer = &self.layers[l];
                let mut next = vec![0.0_f64; n_in];
                for o in 0..n_out {
                    let row = &layer.w[o * n_in..(o + 1) * n_in];
                    let d = delta[o];
                    for i in 0..n_in {
                        next[i] += row[i] * d;
                    }
                }
                // chain through the sigmoid of the previous hidden layer
                let h = &acts[l];
                for i in 0..n_in {
                    next[i] *= h[i] * (1.0 - h[i]);
                }
                delta = next;
            }
            offset_end = base;
        }
        value
    }
}

/// A reward model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    Linear(LinearReward),
    Mlp(MlpReward),
}

/// Model family selector used by initializers and templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// Parameter initialization mode.
///
/// `Truth` draws every weight matrix and the output vector i.i.d. standard
/// normal (ground-truth networks); `Fit` starts linear models at zero and
/// network weights at variance-scaled Gaussians (`std = 1/sqrt(fan_in)`),
/// biases zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Truth,
    Fit,
}

impl RewardModel {
    pub fn linear(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("linear parameters must be finite and non-empty"));
        }
        Ok(RewardModel::Linear(LinearReward { theta }))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            RewardModel::Linear(_) => ModelKind::Linear,
            RewardModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Input feature dimension.
    pub fn dim_in(&self) -> usize {
        match self {
            RewardModel::Linear(m) => m.theta.len(),
            RewardModel::Mlp(m) => m.widths[0],
        }
    }

    /// Layer widths for networks, `[d]` for linear models.
    pub fn dims(&self) -> Vec<usize> {
        match self {
            RewardModel::Linear(m) => vec![m.theta.len()],
            RewardModel::Mlp(m) => m.widths.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            RewardModel::Linear(m) => m.theta.len(),
            RewardModel::Mlp(m) => m.layers.iter().map(|l| l.w.len() + l.b.len()).sum(),
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            RewardModel::Linear(m) => m.theta.clone(),
            RewardModel::Mlp(m) => {
                let mut out = Vec::with_capacity(self.param_count());
                for l in &m.layers {
                    out.extend_from_slice(&l.w);
                    out.extend_from_slice(&l.b);
                }
                out
            }
        }
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        match self {
            RewardModel::Linear(m) => m.theta.copy_from_slice(params),
            RewardModel::Mlp(m) => {
                let mut off = 0;
                for l in &mut m.layers {
                    let w_len = l.w.len();
                    l.w.copy_from_slice(&params[off..off + w_len]);
                    off += w_len;
                    let b_len = l.b.len();
                    l.b.copy_from_slice(&params[off..off + b_len]);
                    off += b_len;
                }
            }
        }
        Ok(())
    }

    /// Reward of a single item.
    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim_in() {
            return Err(Error::domain(format!(
                "feature dimension {} does not match model input {}",
                x.len(),
                self.dim_in()
            )));
        }
        Ok(match self {
            RewardModel::Linear(m) => m.theta.iter().zip(x).map(|(t, v)| t * v).sum(),
            RewardModel::Mlp(m) => m.value(x),
        })
    }

    /// Reward difference `r(x1) - r(x2)`; antisymmetric under swapping.
    pub fn reward_diff(&self, pair: &QueryPair) -> Result<f64> {
        Ok(self.reward(&pair.x1)? - self.reward(&pair.x2)?)
    }

    /// Reward difference together with its exact gradient w.r.t. the flat
    /// parameters (backpropagation through both forward passes with
    /// opposite signs for networks; `x1 - x2` for linear models).
    pub fn reward_diff_grad(&self, pair: &QueryPair) -> Result<(f64, Vec<f64>)> {
        if pair.dim() != self.dim_in() {
            return Err(Error::domain(format!(
                "pair dimension {} does not match model input {}",
                pair.dim(),
                self.dim_in()
            )));
        }
        match self {
            RewardModel::Linear(m) => {
                let mut grad = Vec::with_capacity(m.theta.len());
                let mut diff = 0.0;
                for i in 0..m.theta.len() {
                    let g = pair.x1[i] - pair.x2[i];
                    diff += m.theta[i] * g;
                    grad.push(g);
                }
                Ok((diff, grad))
            }
            RewardModel::Mlp(m) => {
                let mut grad = vec![0.0; self.param_count()];
                let v1 = m.accumulate_value_grad(&pair.x1, 1.0, &mut grad);
                let v2 = m.accumulate_value_grad(&pair.x2, -1.0, &mut grad);
                Ok((v1 - v2, grad))
            }
        }
    }

    /// Scalar output and parameter gradient at a single input. Used by the
    /// response-time regression head, which trains on item-level inputs.
    pub fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim_in() {
            return Err(Error::domain(format!(
                "feature dimension {} does not match model input {}",
                x.len(),
                self.dim_in()
            )));
        }
        match self {
            RewardModel::Linear(_) => {
                let v = self.reward(x)?;
                Ok((v, x.to_vec()))
            }
            RewardModel::Mlp(m) => {
                let mut grad = vec![0.0; self.param_count()];
                let v = m.accumulate_value_grad(x, 1.0, &mut grad);
                Ok((v, grad))
            }
        }
    }

    /// Randomly initialized model.
    ///
    /// `dims` is `[d]` for linear models and the full width list for
    /// networks.
    pub fn random_init(
        kind: ModelKind,
        dims: &[usize],
        mode: InitMode,
        rng: &mut Stream,
    ) -> Result<RewardModel> {
        match kind {
            ModelKind::Linear => {
                if dims.len() != 1 || dims[0] == 0 {
                    return Err(Error::config(format!("linear dims must be [d], got {dims:?}")));
                }
                let theta = match mode {
                    InitMode::Truth => {
                        (0..dims[0]).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                    InitMode::Fit => vec![0.0; dims[0]],
                };
                Ok(RewardModel::Linear(LinearReward { theta }))
            }
            ModelKind::Mlp => {
                let mut mlp = MlpReward::zeros(dims)?;
                for (l, layer) in mlp.layers.iter_mut().enumerate() {
                    let fan_in = dims[l] as f64;
                    let std = match mode {
                        InitMode::Truth => 1.0,
                        InitMode::Fit => 1.0 / fan_in.sqrt(),
                    };
                    for w in layer.w.iter_mut() {
                        *w = std * rng.sample::<f64, _>(StandardNormal);
                    }
                    // biases stay zero in both modes
                }
                Ok(RewardModel::Mlp(mlp))
            }
        }
    }

    fn from_parts(kind: ModelKind, dims: &[usize], params: &[f64]) -> Result<RewardModel> {
        let mut model = match kind {
            ModelKind::Linear => {
                if dims.len() != 1 {
                    return Err(Error::data(format!("linear dims must be [d], got {dims:?}")));
                }
                RewardModel::Linear(LinearReward { theta: vec![0.0; dims[0]] })
            }
            ModelKind::Mlp => RewardModel::Mlp(MlpReward::zeros(dims)?),
        };
        model
            .set_params_flat(params)
            .map_err(|e| Error::data(format!("model params do not match dims: {e}")))?;
        Ok(model)
    }
}

/// Wire format: `{"kind": "linear"|"mlp", "dims": [...], "params": [...]}`
/// with the flat array in row-major layer order.
#[derive(Serialize, Deserialize)]
struct ModelWire {
    kind: ModelKind,
    dims: Vec<usize>,
    params: Vec<f64>,
}

impl Serialize for RewardModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ModelWire { kind: self.kind(), dims: self.dims(), params: self.params_flat() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RewardModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = ModelWire::deserialize(deserializer)?;
        RewardModel::from_parts(wire.kind, &wire.dims, &wire.params).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn pair(x1: &[f64], x2: &[f64]) -> QueryPair {
        QueryPair::new(x1.to_vec(), x2.to_vec()).unwrap()
    }

    #[test]
    fn linear_examples() {
        let m = RewardModel::linear(vec![1.0, 2.0]).unwrap();
        assert_eq!(m.reward(&[3.0, 4.0]).unwrap(), 11.0);
        let zero = RewardModel::linear(vec![0.0, 0.0]).unwrap();
        assert_eq!(zero.reward(&[5.0, -7.0]).unwrap(), 0.0);
        assert!(m.reward(&[1.0]).is_err());
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let m = RewardModel::Mlp(MlpReward::zeros(&[3, 4, 1]).unwrap());
        assert_eq!(m.reward(&[0.3, -0.2, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn reward_diff_examples() {
        let m = RewardModel::linear(vec![1.0, 0.0]).unwrap();
        let p = pair(&[2.0, 5.0], &[1.0, 5.0]);
        assert_eq!(m.reward_diff(&p).unwrap(), 1.0);
        let same = pair(&[2.0, 5.0], &[2.0, 5.0]);
        assert_eq!(m.reward_diff(&same).unwrap(), 0.0);
        // antisymmetry
        assert_eq!(m.reward_diff(&p.swapped()).unwrap(), -1.0);
    }

    #[test]
    fn linear_grad_is_feature_difference() {
        let m = RewardModel::linear(vec![0.4, -0.7]).unwrap();
        let p = pair(&[2.0, 5.0], &[1.0, 5.0]);
        let (_, g) = m.reward_diff_grad(&p).unwrap();
        assert_eq!(g, vec![1.0, 0.0]);
        let same = pair(&[2.0, 5.0], &[2.0, 5.0]);
        assert_eq!(m.reward_diff_grad(&same).unwrap().1, vec![0.0, 0.0]);
    }

    fn finite_diff_grad(m: &RewardModel, p: &QueryPair, h: f64) -> Vec<f64> {
        let base = m.params_flat();
        let mut g = Vec::with_capacity(base.len());
        let mut probe = m.clone();
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            probe.set_params_flat(&up).unwrap();
            let f_up = probe.reward_diff(p).unwrap();
            let mut dn = base.clone();
            dn[i] -= h;
            probe.set_params_flat(&dn).unwrap();
            let f_dn = probe.reward_diff(p).unwrap();
            g.push((f_up - f_dn) / (2.0 * h));
        }
        g
    }

    #[test]
    fn mlp_grad_matches_finite_differences() {
        let mut stream = rng::substream(42, 0);
        for trial in 0..20 {
            let m = RewardModel::random_init(ModelKind::Mlp, &[4, 6, 3, 1], InitMode::Fit, &mut stream)
                .unwrap();
            let x1: Vec<f64> = (0..4).map(|_| stream.sample::<f64, _>(StandardNormal)).collect();
            let x2: Vec<f64> = (0..4).map(|_| stream.sample::<f64, _>(StandardNormal)).collect();
            let p = QueryPair::new(x1, x2).unwrap();
            let (v, g) = m.reward_diff_grad(&p).unwrap();
            assert_relative_eq!(v, m.reward_diff(&p).unwrap(), max_relative = 1e-14);
            let fd = finite_diff_grad(&m, &p, 1e-5);
            for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
                // the 1e-4 floor absorbs central-difference roundoff
                // (~1e-11) on exactly-zero entries such as the output bias
                let scale = a.abs().max(b.abs()).max(1e-4);
                assert!(
                    (a - b).abs() / scale <= 1e-5,
                    "trial {trial} param {i}: analytic {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn mlp_antisymmetry_under_swap() {
        let mut stream = rng::substream(7, 1);
        let m =
            RewardModel::random_init(ModelKind::Mlp, &[3, 5, 1], InitMode::Truth, &mut stream).unwrap();
        let p = pair(&[0.2, -1.0, 0.4], &[1.1, 0.0, -0.3]);
        let d = m.reward_diff(&p).unwrap();
        assert_relative_eq!(m.reward_diff(&p.swapped()).unwrap(), -d, max_relative = 1e-15);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = RewardModel::random_init(ModelKind::Mlp, &[4, 8, 1], InitMode::Truth, &mut rng::substream(5, 2))
            .unwrap();
        let b = RewardModel::random_init(ModelKind::Mlp, &[4, 8, 1], InitMode::Truth, &mut rng::substream(5, 2))
            .unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn truth_init_weight_distribution() {
        let mut stream = rng::substream(9, 3);
        let m = RewardModel::random_init(ModelKind::Mlp, &[40, 50, 1], InitMode::Truth, &mut stream)
            .unwrap();
        let params = m.params_flat();
        // drop zero biases; the 40*50 + 50 weights should look N(0,1)
        let weights: Vec<f64> = params.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(weights.len(), 40 * 50 + 50);
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        let var = weights.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (weights.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn fit_init_dims_match_request() {
        let m = RewardModel::random_init(ModelKind::Mlp, &[10, 32, 16, 1], InitMode::Fit, &mut rng::master(0))
            .unwrap();
        assert_eq!(m.dims(), vec![10, 32, 16, 1]);
        assert_eq!(m.param_count(), 10 * 32 + 32 + 32 * 16 + 16 + 16 + 1);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut stream = rng::substream(13, 0);
        for kind_dims in [(ModelKind::Linear, vec![6]), (ModelKind::Mlp, vec![3, 4, 1])] {
            let m = RewardModel::random_init(kind_dims.0, &kind_dims.1, InitMode::Truth, &mut stream)
                .unwrap();
            let json = serde_json::to_string(&m).unwrap();
            let back: RewardModel = serde_json::from_str(&json).unwrap();
            assert_eq!(m.params_flat(), back.params_flat());
            assert_eq!(m.dims(), back.dims());
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = RewardModel::random_init(ModelKind::Mlp, &[5, 7, 1], InitMode::Truth, &mut rng::master(2))
            .unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let a = m.reward(&x).unwrap();
        let b = m.reward(&x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
