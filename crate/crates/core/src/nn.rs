//! Dense tanh networks with exact analytic gradients, the diagonal Gaussian
//! policy head, and RMSProp.
//!
//! Parameters live in one flat `Vec<f64>` per network, laid out layer by
//! layer as `[W₀ (out×in, row-major), b₀, W₁, b₁, …]` followed by `extra`
//! trailing entries (the actor's state-independent log-σ vector).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Actor,
    Critic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn shapes_from_sizes(sizes: &[usize]) -> Result<Vec<LayerShape>> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::param("layer sizes", format!("need >= 2 positive sizes, got {sizes:?}")));
    }
    Ok(sizes.windows(2).map(|w| LayerShape { inputs: w[0], outputs: w[1] }).collect())
}

fn total_len(layers: &[LayerShape], extra: usize) -> usize {
    layers.iter().map(LayerShape::len).sum::<usize>() + extra
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    role: Role,
    layers: Vec<LayerShape>,
    extra: usize,
    values: Vec<f64>,
    version: u64,
}

impl ParamSet {
    pub fn zeros(role: Role, sizes: &[usize], extra: usize) -> Result<Self> {
        let layers = shapes_from_sizes(sizes)?;
        let values = vec![0.0; total_len(&layers, extra)];
        Ok(Self { role, layers, extra, values, version: 0 })
    }

    /// Weights uniform in ±1/√fan_in, biases and extras zero.
    pub fn init<R: Rng + ?Sized>(role: Role, sizes: &[usize], extra: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(role, sizes, extra)?;
        let mut offset = 0;
        for shape in p.layers.clone() {
            let bound = 1.0 / (shape.inputs as f64).sqrt();
            for w in &mut p.values[offset..offset + shape.inputs * shape.outputs] {
                *w = rng.gen_range(-bound..bound);
            }
            offset += shape.len();
        }
        Ok(p)
    }

    pub fn from_parts(
        role: Role,
        layers: Vec<LayerShape>,
        extra: usize,
        values: Vec<f64>,
        version: u64,
    ) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::param("layer shapes", "consecutive layers do not chain"));
            }
        }
        if layers.is_empty() {
            return Err(Error::Empty("layer table"));
        }
        let expected = total_len(&layers, extra);
        if values.len() != expected {
            return Err(Error::DimensionMismatch { what: "parameter values", expected, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(Self { role, layers, extra, values, version })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn extra_len(&self) -> usize {
        self.extra
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn extra(&self) -> &[f64] {
        &self.values[self.values.len() - self.extra..]
    }

    fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let offset: usize = self.layers[..index].iter().map(LayerShape::len).sum();
        let shape = self.layers[index];
        let w_len = shape.inputs * shape.outputs;
        (&self.values[offset..offset + w_len], &self.values[offset + w_len..offset + shape.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_congruent(&self, g: &GradientSet) -> bool {
        self.layers == g.layers && self.extra == g.extra && self.values.len() == g.values.len()
    }

    fn check(&self, g: &GradientSet) -> Result<()> {
        if self.is_congruent(g) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { what: "gradient set", expected: self.len(), got: g.len() })
        }
    }

    /// Plain gradient step `φ ← φ − lr·g`.
    pub fn sgd_step(&mut self, g: &GradientSet, lr: f64) -> Result<()> {
        self.check(g)?;
        for (p, d) in self.values.iter_mut().zip(&g.values) {
            *p -= lr * d;
        }
        self.version += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    layers: Vec<LayerShape>,
    extra: usize,
    values: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(p: &ParamSet) -> Self {
        Self { layers: p.layers.clone(), extra: p.extra, values: vec![0.0; p.values.len()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if other.values.len() != self.values.len() || other.layers != self.layers {
            return Err(Error::DimensionMismatch { what: "gradient set", expected: self.len(), got: other.len() });
        }
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Rescales to `max_norm` if the global norm exceeds it. Returns the original norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Activations from one forward pass: `acts[0]` is the input, `acts[l + 1]`
/// the output of layer `l` (tanh for hidden layers, linear for the last).
#[derive(Clone, Debug)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

pub fn mlp_forward(p: &ParamSet, input: &[f64]) -> Result<ForwardCache> {
    if input.len() != p.input_dim() {
        return Err(Error::DimensionMismatch { what: "features", expected: p.input_dim(), got: input.len() });
    }
    let last = p.layers.len() - 1;
    let mut acts = Vec::with_capacity(p.layers.len() + 1);
    acts.push(input.to_vec());
    for (l, shape) in p.layers.iter().enumerate() {
        let (w, b) = p.layer(l);
        let x = &acts[l];
        let mut y = b.to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * shape.inputs..(o + 1) * shape.inputs];
            *yo += row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            if l < last {
                *yo = yo.tanh();
            }
        }
        acts.push(y);
    }
    Ok(ForwardCache { acts })
}

/// Accumulates into `g` the gradient of a scalar loss whose derivative with
/// respect to the network output is `d_out`.
pub fn mlp_backward(p: &ParamSet, cache: &ForwardCache, d_out: &[f64], g: &mut GradientSet) -> Result<()> {
    p.check(g)?;
    if cache.acts.len() != p.layers.len() + 1 || cache.acts[0].len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "forward cache",
            expected: p.layers.len() + 1,
            got: cache.acts.len(),
        });
    }
    if d_out.len() != p.output_dim() {
        return Err(Error::DimensionMismatch { what: "output gradient", expected: p.output_dim(), got: d_out.len() });
    }
    let mut offsets = Vec::with_capacity(p.layers.len());
    let mut acc = 0;
    for s in &p.layers {
        offsets.push(acc);
        acc += s.len();
    }

    let mut delta = d_out.to_vec();
    for l in (0..p.layers.len()).rev() {
        let shape = p.layers[l];
        let (w, _) = p.layer(l);
        let x = &cache.acts[l];
        let base = offsets[l];
        let w_len = shape.inputs * shape.outputs;
        {
            let gv = &mut g.values[base..base + shape.len()];
            let (gw, gb) = gv.split_at_mut(w_len);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (gwi, xi) in gw[o * shape.inputs..(o + 1) * shape.inputs].iter_mut().zip(x) {
                    *gwi += d * xi;
                }
                gb[o] += d;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; shape.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (pi, wi) in prev.iter_mut().zip(&w[o * shape.inputs..(o + 1) * shape.inputs]) {
                    *pi += wi * d;
                }
            }
            for (pi, a) in prev.iter_mut().zip(x) {
                *pi *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
    Ok(())
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((&m, &ls), &v)| {
            let z = (v - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| HALF_LN_2PI_E + ls).sum()
}

/// `Σ ln(1 − tanh²u)`, the log-Jacobian of the tanh squashing.
pub fn tanh_log_det(raw: &[f64]) -> f64 {
    raw.iter()
        .map(|&u| {
            let t = -2.0 * u;
            let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            2.0 * (std::f64::consts::LN_2 - u - softplus)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Pre-squash Gaussian sample u.
    pub raw_action: Vec<f64>,
    /// tanh(u), in (−1, 1).
    pub action: Vec<f64>,
    /// Gaussian log-density of `raw_action`.
    pub log_prob: f64,
    /// Log-density of `action` after the tanh change of variables.
    pub squashed_log_prob: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct ActorForward {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    cache: ForwardCache,
}

impl ActorForward {
    pub fn log_prob(&self, raw: &[f64]) -> f64 {
        gaussian_log_prob(&self.mean, &self.log_std, raw)
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.log_std)
    }

    fn output_for(&self, raw: Vec<f64>) -> PolicyOutput {
        let log_prob = self.log_prob(&raw);
        let squashed_log_prob = log_prob - tanh_log_det(&raw);
        PolicyOutput {
            mean: self.mean.clone(),
            log_std: self.log_std.clone(),
            action: raw.iter().map(|u| u.tanh()).collect(),
            raw_action: raw,
            log_prob,
            squashed_log_prob,
            entropy: self.entropy(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PolicyOutput {
        let raw = self
            .mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.output_for(raw)
    }

    /// The mode of the policy, used for evaluation.
    pub fn greedy(&self) -> PolicyOutput {
        self.output_for(self.mean.clone())
    }

    pub fn evaluate(&self, raw: &[f64]) -> PolicyOutput {
        self.output_for(raw.to_vec())
    }
}

/// Mean from the MLP, log-σ from the parameter set's trailing block.
pub fn forward_actor(p: &ParamSet, features: &[f64]) -> Result<ActorForward> {
    if p.extra != p.output_dim() {
        return Err(Error::DimensionMismatch { what: "log-std block", expected: p.output_dim(), got: p.extra });
    }
    if !p.is_finite() {
        return Err(Error::NonFinite("actor parameters"));
    }
    let cache = mlp_forward(p, features)?;
    Ok(ActorForward { mean: cache.output().to_vec(), log_std: p.extra().to_vec(), cache })
}

/// Accumulates into `g` the gradient of
/// `coef_log_prob · log π(raw | s) + coef_entropy · H(π(·|s))`.
pub fn actor_backward(
    p: &ParamSet,
    fwd: &ActorForward,
    raw: &[f64],
    coef_log_prob: f64,
    coef_entropy: f64,
    g: &mut GradientSet,
) -> Result<()> {
    let d = p.output_dim();
    if raw.len() != d {
        return Err(Error::DimensionMismatch { what: "action", expected: d, got: raw.len() });
    }
    let mut d_mean = vec![0.0; d];
    let n = g.values.len();
    for i in 0..d {
        let inv_var = (-2.0 * fwd.log_std[i]).exp();
        let diff = raw[i] - fwd.mean[i];
        d_mean[i] = coef_log_prob * diff * inv_var;
        g.values[n - d + i] += coef_log_prob * (diff * diff * inv_var - 1.0) + coef_entropy;
    }
    mlp_backward(p, &fwd.cache, &d_mean, g)
}

pub fn forward_critic(p: &ParamSet, features: &[f64]) -> Result<(f64, ForwardCache)> {
    if p.output_dim() != 1 {
        return Err(Error::DimensionMismatch { what: "critic output", expected: 1, got: p.output_dim() });
    }
    let cache = mlp_forward(p, features)?;
    Ok((cache.output()[0], cache))
}

/// Accumulates `d_value · ∇V(s)` into `g`.
pub fn critic_backward(p: &ParamSet, cache: &ForwardCache, d_value: f64, g: &mut GradientSet) -> Result<()> {
    mlp_backward(p, cache, &[d_value], g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState {
    /// Running average μ of squared gradients.
    pub mean_square: Vec<f64>,
    /// δ.
    pub decay: f64,
    /// ε.
    pub lr: f64,
    /// Stability constant added under the square root.
    pub eps: f64,
}

impl RmsPropState {
    pub fn new(len: usize, decay: f64, lr: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::param("rmsprop decay", format!("must be in [0, 1), got {decay}")));
        }
        if !(lr > 0.0) {
            return Err(Error::param("learning rate", format!("must be positive, got {lr}")));
        }
        if !(eps > 0.0) {
            return Err(Error::param("rmsprop eps", format!("must be positive, got {eps}")));
        }
        Ok(Self { mean_square: vec![0.0; len], decay, lr, eps })
    }

    /// `μ ← δμ + (1−δ)g²; φ ← φ − ε·g/√(μ + α)`.
    pub fn step(&mut self, params: &mut ParamSet, g: &GradientSet) -> Result<()> {
        params.check(g)?;
        if self.mean_square.len() != params.len() {
            return Err(Error::DimensionMismatch {
                what: "rmsprop state",
                expected: params.len(),
                got: self.mean_square.len(),
            });
        }
        for ((p, &d), mu) in params.values.iter_mut().zip(&g.values).zip(&mut self.mean_square) {
            *mu = self.decay * *mu + (1.0 - self.decay) * d * d;
            *p -= self.lr * d / (*mu + self.eps).sqrt();
        }
        params.version += 1;
        Ok(())
    }
}

/// Separate actor and critic networks sharing the same input features.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub actor: ParamSet,
    pub critic: ParamSet,
}

impl ActorCritic {
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![feature_dim];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(action_dim);
        sizes.push(1);
        Ok(Self {
            actor: ParamSet::init(Role::Actor, &actor_sizes, action_dim, rng)?,
            critic: ParamSet::init(Role::Critic, &sizes, 0, rng)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }
}
