#![allow(dead_code)]

pub mod brute;
pub mod calc;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavnet::channel::ChannelParams;
use uavnet::harness::ExperimentConfig;
use uavnet::nn::{ActorCritic, GradientSet, ParamSet};
use uavnet::scenario::{Scenario, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn a2g(p: &ChannelParams) -> calc::Link {
    calc::Link { f_c: p.carrier_hz, beta_los: p.beta_los_db, beta_nlos: p.beta_nlos_db, a: p.a2g.a, b: p.a2g.b }
}

pub fn g2a(p: &ChannelParams) -> calc::Link {
    calc::Link { f_c: p.carrier_hz, beta_los: p.beta_los_db, beta_nlos: p.beta_nlos_db, a: p.g2a.a, b: p.g2a.b }
}

pub fn smoke() -> ExperimentConfig {
    ExperimentConfig::builtin("smoke").unwrap()
}

pub fn default_preset() -> ExperimentConfig {
    ExperimentConfig::builtin("default").unwrap()
}

/// Scenario plus the config's evaluation task.
pub fn world(cfg: &ExperimentConfig) -> (Arc<Scenario>, Arc<Task>) {
    let s = Arc::new(cfg.scenario().unwrap());
    let t = Arc::new(cfg.distribution().sample(cfg.eval.task_seed).unwrap());
    (s, t)
}

pub fn small_model(feature_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> ActorCritic {
    ActorCritic::init(feature_dim, action_dim, hidden, &mut rng(seed)).unwrap()
}

pub fn random_features(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Central-difference gradient of `loss` over every parameter.
pub fn fd_grad(p: &ParamSet, h: f64, loss: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.len())
        .map(|i| {
            let x = p.values()[i];
            q.values_mut()[i] = x + h;
            let up = loss(&q);
            q.values_mut()[i] = x - h;
            let down = loss(&q);
            q.values_mut()[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// max_i |a_i − b_i| / max(‖b‖_∞, floor).
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(floor, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn grad_vec(g: &GradientSet) -> Vec<f64> {
    g.values().to_vec()
}
