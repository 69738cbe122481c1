mod common;

use common::{fd_grad, max_rel_err, random_features};
use rand::Rng;
use uavnet::a3c::{self, RolloutBuffer, Transition};
use uavnet::meta::{self, Sample, TaskBatch};
use uavnet::nn::{self, GradientSet, ParamSet, RmsPropState, Role};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

/// Random architecture: 1 to 3 layers, widths up to 32.
fn random_sizes(r: &mut impl Rng, input: usize, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    for _ in 0..r.gen_range(0..=2) {
        s.push(r.gen_range(2..=32));
    }
    s.push(output);
    s
}

fn random_actor(r: &mut impl Rng) -> ParamSet {
    let (i, o) = (r.gen_range(2..=8), r.gen_range(1..=4));
    let mut p = ParamSet::init(Role::Actor, &random_sizes(r, i, o), o, r).unwrap();
    for v in p.values_mut().iter_mut().rev().take(o) {
        *v = r.gen_range(-1.0..0.5);
    }
    p
}

fn random_critic(r: &mut impl Rng) -> ParamSet {
    let i = r.gen_range(2..=8);
    ParamSet::init(Role::Critic, &random_sizes(r, i, 1), 0, r).unwrap()
}

fn random_buffer(r: &mut impl Rng, p: &ParamSet, n: usize) -> RolloutBuffer {
    let transitions = (0..n)
        .map(|_| Transition {
            features: random_features(r, p.input_dim()),
            raw_action: (0..p.output_dim()).map(|_| r.gen_range(-1.5..1.5)).collect(),
            reward: r.gen_range(-2.0..2.0),
            log_prob: 0.0,
            value: r.gen_range(-1.0..1.0),
            done: false,
        })
        .collect();
    RolloutBuffer { transitions, bootstrap_value: r.gen_range(-1.0..1.0) }
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut r = common::rng(20);
    for _ in 0..25 {
        let p = random_critic(&mut r);
        let x = random_features(&mut r, p.input_dim());
        let target = r.gen_range(-1.0..1.0);
        let loss = |q: &ParamSet| (nn::mlp_forward(q, &x).unwrap().output()[0] - target).powi(2);
        let cache = nn::mlp_forward(&p, &x).unwrap();
        let mut g = GradientSet::zeros_like(&p);
        nn::mlp_backward(&p, &cache, &[2.0 * (cache.output()[0] - target)], &mut g).unwrap();
        let err = max_rel_err(g.values(), &fd_grad(&p, H, loss), FLOOR);
        assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn actor_loss_gradient_matches_finite_differences() {
    let mut r = common::rng(21);
    for _ in 0..25 {
        let p = random_actor(&mut r);
        let n = r.gen_range(1..=6);
        let buf = random_buffer(&mut r, &p, n);
        let adv: Vec<f64> = (0..buf.len()).map(|_| r.gen_range(-2.0..2.0)).collect();
        let phi = r.gen_range(0.0..0.1);
        let (g, _, _) = a3c::actor_loss_grads(&p, &buf, &adv, phi).unwrap();
        let fd = fd_grad(&p, H, |q| a3c::actor_loss_grads(q, &buf, &adv, phi).unwrap().1);
        let err = max_rel_err(g.values(), &fd, FLOOR);
        assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn entropy_only_gradient_is_scaled_entropy_derivative() {
    let mut r = common::rng(22);
    let p = random_actor(&mut r);
    let buf = random_buffer(&mut r, &p, 3);
    let phi = 0.05;
    let (g, _, _) = a3c::actor_loss_grads(&p, &buf, &[0.0; 3], phi).unwrap();
    let entropy = |q: &ParamSet| {
        buf.transitions.iter().map(|t| nn::forward_actor(q, &t.features).unwrap().entropy()).sum::<f64>()
    };
    let fd: Vec<f64> = fd_grad(&p, H, entropy).iter().map(|d| -phi * d).collect();
    assert!(max_rel_err(g.values(), &fd, FLOOR) < TOL);
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut r = common::rng(23);
    for _ in 0..25 {
        let p = random_critic(&mut r);
        let mut buf = random_buffer(&mut r, &ParamSet::zeros(Role::Actor, &[p.input_dim(), 1], 1).unwrap(), 5);
        buf.transitions.iter_mut().for_each(|t| t.raw_action.clear());
        let ret: Vec<f64> = (0..buf.len()).map(|_| r.gen_range(-3.0..3.0)).collect();
        let (g, _) = a3c::critic_loss_grads(&p, &buf, &ret).unwrap();
        let fd = fd_grad(&p, H, |q| a3c::critic_loss_grads(q, &buf, &ret).unwrap().1);
        let err = max_rel_err(g.values(), &fd, FLOOR);
        assert!(err < TOL, "relative error {err}");
    }
}

fn random_batch(r: &mut impl Rng, p: &ParamSet, n: usize) -> TaskBatch {
    let samples = (0..n)
        .map(|_| {
            let features = random_features(r, p.input_dim());
            let raw_action: Vec<f64> = (0..p.output_dim()).map(|_| r.gen_range(-1.5..1.5)).collect();
            let behavior_log_prob = nn::forward_actor(p, &features).unwrap().log_prob(&raw_action);
            Sample {
                features,
                raw_action,
                advantage: r.gen_range(-2.0..2.0),
                ret: r.gen_range(-2.0..2.0),
                behavior_log_prob,
            }
        })
        .collect();
    TaskBatch { samples, mean_reward: 0.0 }
}

#[test]
fn task_loss_gradient_matches_finite_differences() {
    let mut r = common::rng(24);
    for _ in 0..25 {
        let p = random_actor(&mut r);
        let n = r.gen_range(1..=8);
        let batch = random_batch(&mut r, &p, n);
        let (_, g) = meta::task_loss(&p, &batch).unwrap();
        let fd = fd_grad(&p, H, |q| meta::task_loss(q, &batch).unwrap().0);
        let err = max_rel_err(g.values(), &fd, FLOOR);
        assert!(err < TOL, "relative error {err}");
    }
}

#[test]
fn critic_task_loss_gradient_matches_finite_differences() {
    let mut r = common::rng(27);
    for _ in 0..20 {
        let actor = random_actor(&mut r);
        let batch = random_batch(&mut r, &actor, 5);
        let sizes = random_sizes(&mut r, actor.input_dim(), 1);
        let p = ParamSet::init(Role::Critic, &sizes, 0, &mut r).unwrap();
        let (_, g) = meta::critic_task_loss(&p, &batch).unwrap();
        let fd = fd_grad(&p, H, |q| meta::critic_task_loss(q, &batch).unwrap().0);
        assert!(max_rel_err(g.values(), &fd, FLOOR) < TOL);
    }
}

#[test]
fn task_loss_on_one_unit_advantage_is_negative_log_prob() {
    let mut r = common::rng(25);
    let p = random_actor(&mut r);
    let mut batch = random_batch(&mut r, &p, 1);
    batch.samples[0].advantage = 1.0;
    let s = &batch.samples[0];
    let lp = nn::forward_actor(&p, &s.features).unwrap().log_prob(&s.raw_action);
    assert!((meta::task_loss(&p, &batch).unwrap().0 + lp).abs() < 1e-12);

    batch.samples[0].advantage = 0.0;
    let (loss, g) = meta::task_loss(&p, &batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.values().iter().all(|&v| v == 0.0));
}

/// Per-transition recomputation with densities from the closed form.
#[test]
fn importance_weights_match_density_ratio_oracle() {
    let mut r = common::rng(26);
    for _ in 0..20 {
        let behavior = random_actor(&mut r);
        let mut current = behavior.clone();
        for v in current.values_mut() {
            *v += r.gen_range(-0.05..0.05);
        }
        let batch = random_batch(&mut r, &behavior, 6);
        let (_, got, _) = meta::importance_weighted_grad(&current, &batch).unwrap();

        let n = batch.samples.len() as f64;
        let mut want = GradientSet::zeros_like(&current);
        for s in &batch.samples {
            let f = nn::forward_actor(&current, &s.features).unwrap();
            let density = |mean: &[f64], log_std: &[f64]| -> f64 {
                mean.iter()
                    .zip(log_std)
                    .zip(&s.raw_action)
                    .map(|((m, ls), x)| {
                        let sd = ls.exp();
                        (-(x - m).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                    })
                    .product()
            };
            let fb = nn::forward_actor(&behavior, &s.features).unwrap();
            let w = (density(&f.mean, &f.log_std) / density(&fb.mean, &fb.log_std)).clamp(0.1, 10.0);
            nn::actor_backward(&current, &f, &s.raw_action, -w * s.advantage / n, 0.0, &mut want).unwrap();
        }
        assert!(max_rel_err(got.values(), want.values(), FLOOR) < 1e-10);
    }
}

#[test]
fn rmsprop_reference_example() {
    let mut p = ParamSet::zeros(Role::Critic, &[1, 1], 0).unwrap();
    let mut g = GradientSet::zeros_like(&p);
    g.values_mut().fill(0.1);
    let mut opt = RmsPropState::new(p.len(), 0.9, 0.001, 1e-8).unwrap();
    opt.step(&mut p, &g).unwrap();
    for (&v, &mu) in p.values().iter().zip(&opt.mean_square) {
        assert!((mu - 1e-3).abs() < 1e-15);
        assert!((v.abs() - 3.1623e-3).abs() < 1e-7, "update {v}");
    }
    let first = p.values()[0];
    opt.step(&mut p, &g).unwrap();
    assert!((p.values()[0] - first).abs() < first.abs());
}
