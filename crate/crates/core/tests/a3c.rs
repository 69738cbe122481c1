mod common;

use std::sync::Arc;

use rand::Rng;
use uavnet::a3c::{self, EpisodeRunner, GlobalModel, RolloutBuffer, Submission, TrainConfig, Transition, UpdateRecord};
use uavnet::env::Env;
use uavnet::harness::init_model;
use uavnet::nn::{self, GradientSet, RmsPropState};

/// Ξ_t as an explicit double sum: discounted rewards up to the first
/// terminal transition at or after t, plus the discounted bootstrap if none.
fn double_sum_returns(buf: &RolloutBuffer, gamma: f64) -> Vec<f64> {
    let n = buf.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for i in t..n {
                total += gamma.powi((i - t) as i32) * buf.transitions[i].reward;
                if buf.transitions[i].done {
                    return total;
                }
            }
            total + gamma.powi((n - t) as i32) * buf.bootstrap_value
        })
        .collect()
}

fn random_buffer(r: &mut impl Rng) -> RolloutBuffer {
    let n = r.gen_range(1..=30);
    RolloutBuffer {
        transitions: (0..n)
            .map(|_| Transition {
                features: vec![],
                raw_action: vec![],
                reward: r.gen_range(-5.0..5.0),
                log_prob: 0.0,
                value: r.gen_range(-5.0..5.0),
                done: r.gen_bool(0.1),
            })
            .collect(),
        bootstrap_value: r.gen_range(-10.0..10.0),
    }
}

#[test]
fn backward_recursion_matches_double_sum() {
    let mut r = common::rng(30);
    for _ in 0..1000 {
        let buf = random_buffer(&mut r);
        let gamma = r.gen_range(0.0..1.0);
        let got = a3c::nstep_return(&buf, gamma).unwrap();
        for (g, w) in got.iter().zip(double_sum_returns(&buf, gamma)) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn return_examples() {
    let mk = |rewards: &[f64], boot: f64| RolloutBuffer {
        transitions: rewards
            .iter()
            .map(|&reward| Transition {
                features: vec![],
                raw_action: vec![],
                reward,
                log_prob: 0.0,
                value: 1.0,
                done: false,
            })
            .collect(),
        bootstrap_value: boot,
    };
    let b = mk(&[1.0, 2.0], 4.0);
    let ret = a3c::nstep_return(&b, 0.5).unwrap();
    assert_eq!(ret[0], 3.0);
    assert_eq!(a3c::nstep_return(&b, 0.0).unwrap(), vec![1.0, 2.0]);
    assert_eq!(a3c::advantage(&ret, &b.values()).unwrap()[0], 2.0);
    assert_eq!(a3c::advantage(&ret, &ret).unwrap(), vec![0.0, 0.0]);
}

fn smoke_runner(seed: u64) -> (EpisodeRunner, uavnet::harness::ExperimentConfig) {
    let cfg = common::smoke();
    let (s, t) = common::world(&cfg);
    (EpisodeRunner::new(Env::new(s, t, 0).unwrap(), seed, 0).unwrap(), cfg)
}

#[test]
fn submission_replays_offline() {
    let (mut runner, cfg) = smoke_runner(3);
    let model = init_model(&cfg, 3).unwrap();
    let (buf, _) = runner.collect(&model, cfg.train.n_step, 1.0).unwrap();
    let sub = a3c::compute_submission(&model, 0, &buf, &cfg.train).unwrap();

    // Independent recomputation from the recorded rollout.
    let ret = double_sum_returns(&buf, cfg.train.gamma);
    let mut ga = GradientSet::zeros_like(&model.actor);
    let mut gc = GradientSet::zeros_like(&model.critic);
    for (t, &xi) in buf.transitions.iter().zip(&ret) {
        let f = nn::forward_actor(&model.actor, &t.features).unwrap();
        assert!((f.log_prob(&t.raw_action) - t.log_prob).abs() < 1e-12);
        let (v, cache) = nn::forward_critic(&model.critic, &t.features).unwrap();
        assert_eq!(v, t.value);
        nn::actor_backward(&model.actor, &f, &t.raw_action, -(xi - v), -cfg.train.entropy_coef, &mut ga).unwrap();
        nn::critic_backward(&model.critic, &cache, 2.0 * (v - xi), &mut gc).unwrap();
    }
    let (na, nc) = (ga.clip_norm(cfg.train.grad_clip), gc.clip_norm(cfg.train.grad_clip));
    assert!(common::max_rel_err(sub.actor.values(), ga.values(), 1e-12) < 1e-10);
    assert!(common::max_rel_err(sub.critic.values(), gc.values(), 1e-12) < 1e-10);
    assert!((sub.stats.grad_norm - na.hypot(nc)).abs() <= 1e-10 * sub.stats.grad_norm);
}

fn run(cfg: &TrainConfig, seed: u64) -> (Vec<UpdateRecord>, GlobalModel) {
    let ec = common::smoke();
    let (s, t) = common::world(&ec);
    let mut recs = Vec::new();
    let g = a3c::train(
        init_model(&ec, seed).unwrap(),
        cfg,
        seed,
        |_| Env::new(s.clone(), t.clone(), 0),
        |r| {
            recs.push(r.clone());
            Ok(())
        },
    )
    .unwrap();
    for r in &mut recs {
        r.wall_secs = 0.0;
    }
    (recs, g)
}

#[test]
fn serial_training_is_bit_identical() {
    let cfg = TrainConfig { num_workers: 1, serial: true, max_updates: 40, ..TrainConfig::default() };
    let (a, ga) = run(&cfg, 5);
    let (b, gb) = run(&cfg, 5);
    assert_eq!(a.len(), 40);
    assert_eq!(a, b);
    assert_eq!(ga, gb);
    assert!(a.iter().enumerate().all(|(i, r)| r.update == i as u64 + 1 && r.staleness == 0));
}

#[test]
fn parallel_training_counts_every_update_once() {
    let cfg = TrainConfig { num_workers: 4, max_updates: 60, ..TrainConfig::default() };
    let (recs, g) = run(&cfg, 6);
    assert_eq!(g.updates, 60);
    assert_eq!(recs.len(), 60);
    let mut ids: Vec<u64> = recs.iter().map(|r| r.update).collect();
    ids.sort();
    assert_eq!(ids, (1..=60).collect::<Vec<_>>());
    assert!(recs.iter().all(|r| r.worker < 4));
    assert_eq!(g.model.actor.version(), 60);
}

fn random_submission(model: &uavnet::nn::ActorCritic, r: &mut impl Rng) -> Submission {
    let mut actor = GradientSet::zeros_like(&model.actor);
    let mut critic = GradientSet::zeros_like(&model.critic);
    actor.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
    critic.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
    Submission { actor, critic, stats: Default::default(), base_version: 0 }
}

#[test]
fn global_update_examples() {
    let cfg = TrainConfig::default();
    let model = init_model(&common::smoke(), 1).unwrap();
    let mut r = common::rng(31);

    let mut g = GlobalModel::new(model.clone(), &cfg).unwrap();
    let zero = Submission {
        actor: GradientSet::zeros_like(&model.actor),
        critic: GradientSet::zeros_like(&model.critic),
        stats: Default::default(),
        base_version: 0,
    };
    assert_eq!(g.apply(&zero).unwrap(), 1);
    assert_eq!(g.model.actor.values(), model.actor.values());
    assert_eq!(g.model.actor.version(), model.actor.version() + 1);

    let sub = random_submission(&model, &mut r);
    let mut g = GlobalModel::new(model.clone(), &cfg).unwrap();
    g.apply(&sub).unwrap();
    let mut direct = model.clone();
    RmsPropState::new(direct.actor.len(), cfg.rms_decay, cfg.actor_lr, cfg.rms_eps)
        .unwrap()
        .step(&mut direct.actor, &sub.actor)
        .unwrap();
    assert_eq!(g.model.actor.values(), direct.actor.values());

    // Order matters; each order equals its own two-step recomputation.
    let other = random_submission(&model, &mut r);
    let apply_in = |first: &Submission, second: &Submission| {
        let mut g = GlobalModel::new(model.clone(), &cfg).unwrap();
        g.apply(first).unwrap();
        g.apply(second).unwrap();
        g.model
    };
    let by_hand = |first: &Submission, second: &Submission| {
        let mut p = model.actor.clone();
        let mut o = RmsPropState::new(p.len(), cfg.rms_decay, cfg.actor_lr, cfg.rms_eps).unwrap();
        o.step(&mut p, &first.actor).unwrap();
        o.step(&mut p, &second.actor).unwrap();
        p
    };
    let (ab, ba) = (apply_in(&sub, &other), apply_in(&other, &sub));
    assert_ne!(ab.actor.values(), ba.actor.values());
    assert_eq!(ab.actor.values(), by_hand(&sub, &other).values());
    assert_eq!(ba.actor.values(), by_hand(&other, &sub).values());
}

#[test]
fn greedy_evaluation_is_reproducible() {
    let cfg = common::smoke();
    let (s, t) = common::world(&cfg);
    let m = init_model(&cfg, 2).unwrap();
    let a = a3c::evaluate_policy(&m, &s, &t, &[1, 2, 3]).unwrap();
    assert_eq!(a, a3c::evaluate_policy(&m, &s, &t, &[1, 2, 3]).unwrap());
    assert_eq!(a.episodes, 3);
    assert!((0.0..=1.0).contains(&a.qos_fraction));
    assert!(a3c::evaluate_policy(&m, &s, &Arc::clone(&t), &[]).is_err());
}
