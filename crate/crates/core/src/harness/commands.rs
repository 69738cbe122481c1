//! The work behind each CLI subcommand. Every command writes its outputs
//! under `out` and returns the same data for programmatic use.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::a3c::{self, evaluate_policy, EvalStats, TrainConfig};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::meta::{online_adapt, AdaptationReport, MetaConfig, MetaTrainer};
use crate::network::NUM_CONSTRAINTS;
use crate::nn::{forward_actor, ActorCritic};
use crate::scenario::{Scenario, Task};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::metrics::{self, constraint_columns, f, opt, CsvOut};
use super::{init_model, Algo};

/// Meta-training rewrites its checkpoint every this many iterations.
pub const META_CHECKPOINT_EVERY: u64 = 50;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub rows: usize,
    pub checkpoint: PathBuf,
    pub model: ActorCritic,
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<(Arc<Scenario>, Arc<Task>)> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let scenario = Arc::new(cfg.scenario()?);
    let task = Arc::new(cfg.distribution().sample(cfg.eval.task_seed)?);
    Ok((scenario, task))
}

fn timing_file(out: &Path) -> Result<CsvOut> {
    CsvOut::create(&out.join(TIMING_FILE), metrics::TIMING_SCHEMA, &["step", "wall_secs"])
}

/// A3C on the config's evaluation task.
pub fn cmd_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<TrainOutput> {
    let (scenario, task) = prepare(cfg, out)?;
    let mut csv = CsvOut::create(&out.join(METRICS_FILE), metrics::TRAIN_SCHEMA, &metrics::TRAIN_HEADER)?;
    let mut timing = timing_file(out)?;
    let mut rows = 0;
    let global = a3c::train(
        init_model(cfg, seed)?,
        &cfg.train,
        seed,
        |_| Env::new(scenario.clone(), task.clone(), 0),
        |r| {
            rows += 1;
            csv.row([
                r.update.to_string(),
                Algo::A3c.to_string(),
                r.worker.to_string(),
                task.id.to_string(),
                f(r.mean_reward),
                String::new(),
                String::new(),
                f(r.actor_loss),
                f(r.critic_loss),
                f(r.entropy),
                f(r.grad_norm),
            ])?;
            timing.row([r.update.to_string(), f(r.wall_secs)])
        },
    )?;
    csv.finish()?;
    timing.finish()?;
    let ckpt = Checkpoint {
        fingerprint: cfg.fingerprint()?,
        algo: Algo::A3c,
        counter: global.updates,
        label: cfg.name.clone(),
        model: global.model.clone(),
        actor_opt: Some(global.actor_opt),
        critic_opt: Some(global.critic_opt),
        meta: None,
    };
    let path = out.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    Ok(TrainOutput { rows, checkpoint: path, model: global.model })
}

/// Meta-A3C over the config's task distribution.
pub fn cmd_meta_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<TrainOutput> {
    let (scenario, _) = prepare(cfg, out)?;
    let dist = cfg.distribution();
    let mut csv = CsvOut::create(&out.join(METRICS_FILE), metrics::TRAIN_SCHEMA, &metrics::TRAIN_HEADER)?;
    let mut timing = timing_file(out)?;
    let path = out.join(CHECKPOINT_FILE);
    let mut trainer = MetaTrainer::new(init_model(cfg, seed)?, &cfg.meta, &cfg.train, seed)?;
    let start = Instant::now();
    let save = |t: &MetaTrainer| -> Result<()> {
        Checkpoint {
            fingerprint: cfg.fingerprint()?,
            algo: Algo::MetaA3c,
            counter: t.iteration,
            label: cfg.name.clone(),
            model: t.model.clone(),
            actor_opt: t.opt.actor.clone(),
            critic_opt: t.opt.critic.clone(),
            meta: Some(cfg.meta.clone()),
        }
        .save(&path)
    };
    let mut rows = 0;
    while trainer.iteration < cfg.meta.iterations {
        let r = trainer.step(&scenario, &dist, &cfg.meta, &cfg.train)?;
        rows += 1;
        let ids: Vec<String> = r.task_ids.iter().map(u64::to_string).collect();
        csv.row([
            r.iteration.to_string(),
            Algo::MetaA3c.to_string(),
            String::new(),
            ids.join(";"),
            f(r.post_reward),
            f(r.pre_reward),
            f(r.post_reward),
            f(r.post_loss),
            f(r.post_critic_loss),
            String::new(),
            f(r.meta_grad_norm),
        ])?;
        timing.row([r.iteration.to_string(), f(start.elapsed().as_secs_f64())])?;
        if r.iteration % META_CHECKPOINT_EVERY == 0 {
            save(&trainer)?;
        }
    }
    csv.finish()?;
    timing.finish()?;
    save(&trainer)?;
    Ok(TrainOutput { rows, checkpoint: path, model: trainer.model })
}

/// Loads and fingerprint-checks a checkpoint, or initializes fresh networks.
pub fn load_model(cfg: &ExperimentConfig, checkpoint: Option<&Path>, seed: u64) -> Result<ActorCritic> {
    match checkpoint {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            c.check(cfg)?;
            Ok(c.model)
        }
        None => init_model(cfg, seed),
    }
}

/// Online adaptation to the task drawn with `task_seed`.
pub fn cmd_adapt(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    task_seed: u64,
    steps: usize,
    seed: u64,
    out: &Path,
) -> Result<AdaptationReport> {
    let (scenario, _) = prepare(cfg, out)?;
    let model = load_model(cfg, Some(checkpoint), seed)?;
    let task = Arc::new(cfg.distribution().sample(task_seed)?);
    let seeds = cfg.eval.seeds();
    let (adapted, report) = online_adapt(&model, &scenario, &task, steps, &cfg.meta, &cfg.train, &seeds, seed)?;
    let mut csv = CsvOut::create(
        &out.join("adapt.csv"),
        metrics::ADAPT_SCHEMA,
        &["task_id", "steps", "episode_seed", "pre_reward", "post_reward", "pre_sum_rate", "post_sum_rate"],
    )?;
    for &s in &seeds {
        let pre = evaluate_policy(&model, &scenario, &task, &[s])?;
        let post = evaluate_policy(&adapted, &scenario, &task, &[s])?;
        csv.row([
            task.id.to_string(),
            steps.to_string(),
            s.to_string(),
            f(pre.mean_reward),
            f(post.mean_reward),
            f(pre.mean_sum_rate),
            f(post.mean_sum_rate),
        ])?;
    }
    csv.finish()?;
    Checkpoint {
        fingerprint: cfg.fingerprint()?,
        algo: Algo::MetaA3c,
        counter: steps as u64,
        label: format!("{} adapted to task {task_seed}", cfg.name),
        model: adapted,
        actor_opt: None,
        critic_opt: None,
        meta: Some(cfg.meta.clone()),
    }
    .save(&out.join("adapted.bin"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub users: usize,
    pub stats: EvalStats,
}

/// Greedy evaluation, one row per user count (the config's own count when
/// `sweep` is empty).
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    sweep: &[usize],
    seed: u64,
    out: &Path,
) -> Result<Vec<EvalRow>> {
    let (scenario, _) = prepare(cfg, out)?;
    let model = load_model(cfg, checkpoint, seed)?;
    let counts = if sweep.is_empty() { vec![cfg.fleet.num_users] } else { sweep.to_vec() };
    let mut header: Vec<String> =
        ["users", "episodes", "mean_reward", "mean_sum_rate", "std_sum_rate", "qos_fraction"].map(String::from).into();
    header.extend(constraint_columns());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvOut::create(&out.join("eval.csv"), metrics::EVAL_SCHEMA, &header)?;
    let mut rows = Vec::with_capacity(counts.len());
    for k in counts {
        if k == 0 {
            return Err(Error::param("sweep-users", "user counts must be positive"));
        }
        let ck = cfg.with_users(k);
        let task = Arc::new(ck.distribution().sample(ck.eval.task_seed)?);
        let stats = evaluate_policy(&model, &scenario, &task, &ck.eval.seeds())?;
        let mut fields = vec![
            k.to_string(),
            stats.episodes.to_string(),
            f(stats.mean_reward),
            f(stats.mean_sum_rate),
            f(stats.std_sum_rate),
            f(stats.qos_fraction),
        ];
        fields.extend(stats.violations.iter().map(|&v| f(v)));
        csv.row(fields)?;
        rows.push(EvalRow { users: k, stats });
    }
    csv.finish()?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajRow {
    pub slot: usize,
    /// "uav", "ugv" or "user".
    pub entity: &'static str,
    pub id: usize,
    pub pos: [f64; 3],
    /// Reward of the step that ended at this slot; absent at slot 0 and for users.
    pub reward: Option<f64>,
    pub violations: Option<[f64; NUM_CONSTRAINTS]>,
}

/// One greedy episode as a flat table: every vehicle at slots 0..=N, then
/// every user once (slot 0).
pub fn cmd_export_traj(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    task_seed: u64,
    episode_seed: u64,
    seed: u64,
    out: &Path,
) -> Result<Vec<TrajRow>> {
    let (scenario, _) = prepare(cfg, out)?;
    let model = load_model(cfg, checkpoint, seed)?;
    let task = Arc::new(cfg.distribution().sample(task_seed)?);
    let mut env = Env::new(scenario, task.clone(), episode_seed)?;
    let mut rows = Vec::new();
    let push_vehicles = |rows: &mut Vec<TrajRow>, env: &Env, reward: Option<f64>, v: Option<[f64; NUM_CONSTRAINTS]>| {
        let s = env.state();
        for (i, &q) in s.uavs.iter().enumerate() {
            rows.push(TrajRow { slot: s.slot, entity: "uav", id: i, pos: q, reward, violations: v });
        }
        for (i, g) in s.ugvs.iter().enumerate() {
            let pos = [g.point[0], g.point[1], 0.0];
            rows.push(TrajRow { slot: s.slot, entity: "ugv", id: i, pos, reward, violations: v });
        }
    };
    push_vehicles(&mut rows, &env, None, None);
    while !env.is_done() {
        let a = forward_actor(&model.actor, &env.features())?.greedy();
        let step = env.step_unit(&a.action)?;
        push_vehicles(&mut rows, &env, Some(step.reward), Some(step.constraints.violations()));
    }
    for (i, u) in task.users.iter().enumerate() {
        rows.push(TrajRow { slot: 0, entity: "user", id: i, pos: [u[0], u[1], 0.0], reward: None, violations: None });
    }

    let mut header: Vec<String> = ["slot", "entity", "id", "x", "y", "z", "reward"].map(String::from).into();
    header.extend(constraint_columns());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvOut::create(&out.join("traj.csv"), metrics::TRAJ_SCHEMA, &header)?;
    for r in &rows {
        let mut fields =
            vec![r.slot.to_string(), r.entity.to_string(), r.id.to_string(), f(r.pos[0]), f(r.pos[1]), f(r.pos[2])];
        fields.push(opt(r.reward));
        match r.violations {
            Some(v) => fields.extend(v.iter().map(|&x| f(x))),
            None => fields.extend(std::iter::repeat_n(String::new(), NUM_CONSTRAINTS)),
        }
        csv.row(fields)?;
    }
    csv.finish()?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub algo: Algo,
    pub config: String,
    pub reps: usize,
    /// Wall time per training episode, learning included.
    pub mean_episode_secs: f64,
    pub std_episode_secs: f64,
    /// Wall time of a greedy rollout alone.
    pub mean_rollout_secs: f64,
    pub std_rollout_secs: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Seconds per training episode for one repetition, single-threaded.
fn time_training_episode(cfg: &ExperimentConfig, algo: Algo, seed: u64) -> Result<f64> {
    let scenario = Arc::new(cfg.scenario()?);
    let model = init_model(cfg, seed)?;
    match algo {
        Algo::A3c => {
            let task = Arc::new(cfg.distribution().sample(cfg.eval.task_seed)?);
            let n = cfg.fleet.num_slots.div_ceil(cfg.train.n_step) as u64;
            let tc = TrainConfig { num_workers: 1, serial: true, max_updates: n, ..cfg.train.clone() };
            let t = Instant::now();
            a3c::train(model, &tc, seed, |_| Env::new(scenario.clone(), task.clone(), 0), |_| Ok(()))?;
            Ok(t.elapsed().as_secs_f64())
        }
        Algo::MetaA3c => {
            let mc = MetaConfig { meta_batch: 1, episodes_per_step: 1, parallel: false, ..cfg.meta.clone() };
            let episodes = (mc.inner_steps + 1) as f64;
            let mut trainer = MetaTrainer::new(model, &mc, &cfg.train, seed)?;
            let t = Instant::now();
            trainer.step(&scenario, &cfg.distribution(), &mc, &cfg.train)?;
            Ok(t.elapsed().as_secs_f64() / episodes)
        }
    }
}

fn time_rollout(cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let scenario = Arc::new(cfg.scenario()?);
    let task = Arc::new(cfg.distribution().sample(cfg.eval.task_seed)?);
    let model = init_model(cfg, seed)?;
    let t = Instant::now();
    let mut env = Env::new(scenario, task, seed)?;
    while !env.is_done() {
        let a = forward_actor(&model.actor, &env.features())?.greedy();
        env.step_unit(&a.action)?;
    }
    Ok(t.elapsed().as_secs_f64())
}

/// Episode wall time for every (algorithm, config) pair over `reps` runs.
pub fn cmd_bench(
    configs: &[ExperimentConfig],
    algos: &[Algo],
    reps: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<BenchRow>> {
    if reps < 5 {
        return Err(Error::param("reps", format!("need at least 5 repetitions, got {reps}")));
    }
    if configs.is_empty() || algos.is_empty() {
        return Err(Error::Empty("benchmark specs"));
    }
    std::fs::create_dir_all(out)?;
    let mut csv = CsvOut::create(
        &out.join("bench.csv"),
        metrics::BENCH_SCHEMA,
        &["algo", "config", "reps", "mean_episode_secs", "std_episode_secs", "mean_rollout_secs", "std_rollout_secs"],
    )?;
    let mut rows = Vec::new();
    for cfg in configs {
        cfg.validate()?;
        for &algo in algos {
            let mut ep = Vec::with_capacity(reps);
            let mut ro = Vec::with_capacity(reps);
            for r in 0..reps as u64 {
                ep.push(time_training_episode(cfg, algo, seed + r)?);
                ro.push(time_rollout(cfg, seed + r)?);
            }
            let ((me, se), (mr, sr)) = (mean_std(&ep), mean_std(&ro));
            csv.row([algo.to_string(), cfg.name.clone(), reps.to_string(), f(me), f(se), f(mr), f(sr)])?;
            rows.push(BenchRow {
                algo,
                config: cfg.name.clone(),
                reps,
                mean_episode_secs: me,
                std_episode_secs: se,
                mean_rollout_secs: mr,
                std_rollout_secs: sr,
            });
        }
    }
    csv.finish()?;
    Ok(rows)
}
