//! Meta-A3C: learn an initialization that adapts to a new task in a few
//! policy-gradient steps.
//!
//! Each meta-iteration samples a batch of tasks, adapts a copy of the shared
//! networks to each with plain gradient steps on fresh rollouts, evaluates the
//! adapted policy on a new rollout, and moves the shared initialization along
//! the sum of the post-adaptation gradients. First-order mode drops the
//! Hessian terms; second-order mode backpropagates through the inner steps
//! using finite-difference Hessian-vector products.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::a3c::{advantage, evaluate_policy, nstep_return, EpisodeRunner, EvalStats, TrainConfig};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::nn::{
    actor_backward, critic_backward, forward_actor, forward_critic, ActorCritic, GradientSet, ParamSet, RmsPropState,
};
use crate::scenario::{Scenario, Task, TaskDistribution};

/// Importance weights are clipped to this range.
pub const IMPORTANCE_CLIP: (f64, f64) = (0.1, 10.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner-loop step size for the actor.
    pub inner_lr: f64,
    /// Inner-loop step size for the critic.
    pub inner_critic_lr: f64,
    pub meta_lr: f64,
    pub inner_steps: usize,
    /// Tasks per meta-iteration.
    pub meta_batch: usize,
    pub iterations: u64,
    pub first_order: bool,
    /// Full episodes collected per inner step and for the post-adaptation batch.
    pub episodes_per_step: usize,
    /// Greedy episodes used to score a policy during online adaptation.
    pub eval_episodes: usize,
    /// Rescale each batch's advantages to zero mean and unit variance.
    pub normalize_advantages: bool,
    /// Adapt the tasks of a meta-batch on separate threads.
    pub parallel: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 5e-4,
            inner_critic_lr: 1e-3,
            meta_lr: 1e-4,
            inner_steps: 5,
            meta_batch: 4,
            iterations: 200,
            first_order: true,
            episodes_per_step: 1,
            eval_episodes: 5,
            normalize_advantages: true,
            parallel: true,
        }
    }
}

impl MetaConfig {
    /// Rates may be zero, which freezes the corresponding update.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("inner_lr", self.inner_lr), ("inner_critic_lr", self.inner_critic_lr), ("meta_lr", self.meta_lr)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("inner_steps", self.inner_steps),
            ("meta_batch", self.meta_batch),
            ("episodes_per_step", self.episodes_per_step),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// One on-policy sample with its advantage and return frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub advantage: f64,
    pub ret: f64,
    /// log π of the policy that generated the sample.
    pub behavior_log_prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskBatch {
    pub samples: Vec<Sample>,
    /// Mean unscaled per-slot reward of the collected episodes.
    pub mean_reward: f64,
}

impl TaskBatch {
    /// Shifts and scales advantages to zero mean and unit variance. Batches
    /// with (near) constant advantages are only centered.
    pub fn normalize_advantages(&mut self) {
        let n = self.samples.len() as f64;
        if n == 0.0 {
            return;
        }
        let mean = self.samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = self.samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-8 { 1.0 / var.sqrt() } else { 1.0 };
        for s in &mut self.samples {
            s.advantage = (s.advantage - mean) * scale;
        }
    }
}

/// Runs `episodes` full episodes under `model`, in chunks of `cfg.n_step`.
pub fn collect_task_batch(
    runner: &mut EpisodeRunner,
    model: &ActorCritic,
    episodes: usize,
    cfg: &TrainConfig,
) -> Result<TaskBatch> {
    let mut batch = TaskBatch::default();
    let mut reward_sum = 0.0;
    for _ in 0..episodes {
        loop {
            let (buf, stats) = runner.collect(model, cfg.n_step, cfg.reward_scale)?;
            reward_sum += stats.mean_reward * stats.transitions as f64;
            let returns = nstep_return(&buf, cfg.gamma)?;
            let adv = advantage(&returns, &buf.values())?;
            for ((t, a), r) in buf.transitions.into_iter().zip(adv).zip(returns) {
                batch.samples.push(Sample {
                    features: t.features,
                    raw_action: t.raw_action,
                    advantage: a,
                    ret: r,
                    behavior_log_prob: t.log_prob,
                });
            }
            if stats.finished_episode_return.is_some() {
                break;
            }
        }
    }
    batch.mean_reward = reward_sum / batch.samples.len().max(1) as f64;
    Ok(batch)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ImportanceStats {
    pub clipped: usize,
    /// Weights that were NaN or infinite and replaced by 1.
    pub nonfinite: usize,
}

/// `L(φ) = −(1/n) Σ log π_φ(u|s)·Θ` and its gradient.
pub fn task_loss(actor: &ParamSet, batch: &TaskBatch) -> Result<(f64, GradientSet)> {
    let (loss, g, _) = weighted_loss(actor, batch, false)?;
    Ok((loss, g))
}

/// Policy gradient of off-policy samples, each term weighted by the clipped
/// ratio π_φ/π_behavior (held constant). Equals the `task_loss` gradient when
/// the samples came from `actor` itself.
pub fn importance_weighted_grad(actor: &ParamSet, batch: &TaskBatch) -> Result<(f64, GradientSet, ImportanceStats)> {
    weighted_loss(actor, batch, true)
}

fn weighted_loss(actor: &ParamSet, batch: &TaskBatch, weighted: bool) -> Result<(f64, GradientSet, ImportanceStats)> {
    if batch.samples.is_empty() {
        return Err(Error::Empty("task batch"));
    }
    let n = batch.samples.len() as f64;
    let mut g = GradientSet::zeros_like(actor);
    let mut loss = 0.0;
    let mut stats = ImportanceStats::default();
    for s in &batch.samples {
        let fwd = forward_actor(actor, &s.features)?;
        let lp = fwd.log_prob(&s.raw_action);
        let w = if weighted {
            let w = (lp - s.behavior_log_prob).exp();
            if !w.is_finite() {
                stats.nonfinite += 1;
                1.0
            } else if w < IMPORTANCE_CLIP.0 || w > IMPORTANCE_CLIP.1 {
                stats.clipped += 1;
                w.clamp(IMPORTANCE_CLIP.0, IMPORTANCE_CLIP.1)
            } else {
                w
            }
        } else {
            1.0
        };
        loss -= w * lp * s.advantage / n;
        actor_backward(actor, &fwd, &s.raw_action, -w * s.advantage / n, 0.0, &mut g)?;
    }
    Ok((loss, g, stats))
}

/// `(1/n) Σ (Ξ − V(s))²` and its gradient.
pub fn critic_task_loss(critic: &ParamSet, batch: &TaskBatch) -> Result<(f64, GradientSet)> {
    if batch.samples.is_empty() {
        return Err(Error::Empty("task batch"));
    }
    let n = batch.samples.len() as f64;
    let mut g = GradientSet::zeros_like(critic);
    let mut loss = 0.0;
    for s in &batch.samples {
        let (v, cache) = forward_critic(critic, &s.features)?;
        loss += (s.ret - v).powi(2) / n;
        critic_backward(critic, &cache, 2.0 * (v - s.ret) / n, &mut g)?;
    }
    Ok((loss, g))
}

fn meta_batch(
    runner: &mut EpisodeRunner,
    model: &ActorCritic,
    cfg: &MetaConfig,
    a3c: &TrainConfig,
) -> Result<TaskBatch> {
    let mut b = collect_task_batch(runner, model, cfg.episodes_per_step, a3c)?;
    if cfg.normalize_advantages {
        b.normalize_advantages();
    }
    Ok(b)
}

/// What happened at one inner step.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerStep {
    /// Actor parameters the batch was collected with and the gradient taken at.
    pub actor: ParamSet,
    pub batch: TaskBatch,
    pub loss: f64,
    pub grad: GradientSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adaptation {
    pub model: ActorCritic,
    pub steps: Vec<InnerStep>,
}

/// `steps` plain gradient steps on fresh rollouts. `model` is not modified.
pub fn inner_adapt(
    model: &ActorCritic,
    runner: &mut EpisodeRunner,
    steps: usize,
    cfg: &MetaConfig,
    a3c: &TrainConfig,
) -> Result<Adaptation> {
    let mut m = model.clone();
    let mut record = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = meta_batch(runner, &m, cfg, a3c)?;
        let (loss, g) = task_loss(&m.actor, &batch)?;
        let (_, gc) = critic_task_loss(&m.critic, &batch)?;
        let before = m.actor.clone();
        m.actor.sgd_step(&g, cfg.inner_lr)?;
        m.critic.sgd_step(&gc, cfg.inner_critic_lr)?;
        if !m.actor.is_finite() || !m.critic.is_finite() {
            return Err(Error::NonFinite("adapted parameters"));
        }
        record.push(InnerStep { actor: before, batch, loss, grad: g });
    }
    Ok(Adaptation { model: m, steps: record })
}

/// Explicitly replays the inner steps from `actor` on the recorded batches and
/// returns the post-adaptation loss.
pub fn meta_objective(actor: &ParamSet, inner: &[TaskBatch], post: &TaskBatch, inner_lr: f64) -> Result<f64> {
    let mut phi = actor.clone();
    for b in inner {
        let (_, g) = task_loss(&phi, b)?;
        phi.sgd_step(&g, inner_lr)?;
    }
    Ok(task_loss(&phi, post)?.0)
}

/// Finite-difference Hessian-vector product of the task loss.
fn hessian_vector(actor: &ParamSet, batch: &TaskBatch, v: &GradientSet) -> Result<GradientSet> {
    let norm = v.norm();
    let mut out = GradientSet::zeros_like(actor);
    if norm == 0.0 {
        return Ok(out);
    }
    let h = 1e-4 / norm;
    let shifted = |sign: f64| -> Result<GradientSet> {
        let mut p = actor.clone();
        for (x, d) in p.values_mut().iter_mut().zip(v.values()) {
            *x += sign * h * d;
        }
        Ok(task_loss(&p, batch)?.1)
    };
    let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
    for ((o, a), b) in out.values_mut().iter_mut().zip(plus.values()).zip(minus.values()) {
        *o = (a - b) / (2.0 * h);
    }
    Ok(out)
}

/// Pulls the post-adaptation gradient back through the inner steps:
/// `v ← (I − β H_j) v` for j from last to first.
pub fn backprop_inner(steps: &[InnerStep], post_grad: &GradientSet, inner_lr: f64) -> Result<GradientSet> {
    let mut v = post_grad.clone();
    for s in steps.iter().rev() {
        let mut hv = hessian_vector(&s.actor, &s.batch, &v)?;
        hv.scale(-inner_lr);
        v.add_assign(&hv)?;
    }
    Ok(v)
}

/// Meta-gradient of `meta_objective` with respect to the initial actor.
pub fn meta_gradient(
    actor: &ParamSet,
    inner: &[TaskBatch],
    post: &TaskBatch,
    inner_lr: f64,
    first_order: bool,
) -> Result<GradientSet> {
    let mut steps = Vec::with_capacity(inner.len());
    let mut phi = actor.clone();
    for b in inner {
        let (loss, g) = task_loss(&phi, b)?;
        steps.push(InnerStep { actor: phi.clone(), batch: b.clone(), loss, grad: g.clone() });
        phi.sgd_step(&g, inner_lr)?;
    }
    let (_, post_grad) = task_loss(&phi, post)?;
    if first_order {
        Ok(post_grad)
    } else {
        backprop_inner(&steps, &post_grad, inner_lr)
    }
}

/// RMSProp state for the outer loop. Absent when the meta rate is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaOptimizer {
    pub actor: Option<RmsPropState>,
    pub critic: Option<RmsPropState>,
}

impl MetaOptimizer {
    pub fn new(model: &ActorCritic, cfg: &MetaConfig, a3c: &TrainConfig) -> Result<Self> {
        if cfg.meta_lr == 0.0 {
            return Ok(Self { actor: None, critic: None });
        }
        Ok(Self {
            actor: Some(RmsPropState::new(model.actor.len(), a3c.rms_decay, cfg.meta_lr, a3c.rms_eps)?),
            critic: Some(RmsPropState::new(model.critic.len(), a3c.rms_decay, cfg.meta_lr, a3c.rms_eps)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskReport {
    pub task_id: u64,
    /// Mean reward of the first inner batch, collected before any adaptation.
    pub pre_reward: f64,
    /// Mean reward of the batch collected by the adapted policy.
    pub post_reward: f64,
    /// Task loss of the adapted actor on its own batch.
    pub post_loss: f64,
    pub post_critic_loss: f64,
    pub importance: ImportanceStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaStepReport {
    pub tasks: Vec<TaskReport>,
    /// Summed gradients handed to the outer optimizer.
    pub actor_grad: GradientSet,
    pub critic_grad: GradientSet,
}

impl MetaStepReport {
    pub fn mean_pre_reward(&self) -> f64 {
        self.tasks.iter().map(|t| t.pre_reward).sum::<f64>() / self.tasks.len().max(1) as f64
    }

    pub fn mean_post_reward(&self) -> f64 {
        self.tasks.iter().map(|t| t.post_reward).sum::<f64>() / self.tasks.len().max(1) as f64
    }
}

struct TaskOutcome {
    report: TaskReport,
    actor_grad: GradientSet,
    critic_grad: GradientSet,
}

fn adapt_one(
    model: &ActorCritic,
    scenario: &Arc<Scenario>,
    task: &Arc<Task>,
    seed: u64,
    cfg: &MetaConfig,
    a3c: &TrainConfig,
) -> Result<TaskOutcome> {
    let env = Env::new(scenario.clone(), task.clone(), seed)?;
    let mut runner = EpisodeRunner::new(env, seed, 0)?;
    let adapted = inner_adapt(model, &mut runner, cfg.inner_steps, cfg, a3c)?;
    let post = meta_batch(&mut runner, &adapted.model, cfg, a3c)?;
    let (post_loss, post_grad, importance) = importance_weighted_grad(&adapted.model.actor, &post)?;
    let actor_grad =
        if cfg.first_order { post_grad } else { backprop_inner(&adapted.steps, &post_grad, cfg.inner_lr)? };
    let (post_critic_loss, critic_grad) = critic_task_loss(&adapted.model.critic, &post)?;
    let pre_reward = adapted.steps.first().map_or(post.mean_reward, |s| s.batch.mean_reward);
    Ok(TaskOutcome {
        report: TaskReport {
            task_id: task.id,
            pre_reward,
            post_reward: post.mean_reward,
            post_loss,
            post_critic_loss,
            importance,
        },
        actor_grad,
        critic_grad,
    })
}

/// One outer step over `tasks`. Task `i` uses rollout seed `seeds[i]`.
pub fn meta_update(
    model: &mut ActorCritic,
    opt: &mut MetaOptimizer,
    scenario: &Arc<Scenario>,
    tasks: &[Arc<Task>],
    seeds: &[u64],
    cfg: &MetaConfig,
    a3c: &TrainConfig,
) -> Result<MetaStepReport> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Empty("meta-batch"));
    }
    if seeds.len() != tasks.len() {
        return Err(Error::DimensionMismatch { what: "task seeds", expected: tasks.len(), got: seeds.len() });
    }
    let snapshot: &ActorCritic = model;
    let outcomes: Vec<Result<TaskOutcome>> = if cfg.parallel && tasks.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = tasks
                .iter()
                .zip(seeds)
                .map(|(t, &seed)| s.spawn(move || adapt_one(snapshot, scenario, t, seed, cfg, a3c)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("adaptation thread panicked")).collect()
        })
    } else {
        tasks.iter().zip(seeds).map(|(t, &seed)| adapt_one(snapshot, scenario, t, seed, cfg, a3c)).collect()
    };

    let mut actor_grad = GradientSet::zeros_like(&model.actor);
    let mut critic_grad = GradientSet::zeros_like(&model.critic);
    let mut reports = Vec::with_capacity(tasks.len());
    for o in outcomes {
        let o = o?;
        actor_grad.add_assign(&o.actor_grad)?;
        critic_grad.add_assign(&o.critic_grad)?;
        reports.push(o.report);
    }
    if actor_grad.values().iter().chain(critic_grad.values()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("meta-gradient"));
    }
    if let (Some(a), Some(c)) = (opt.actor.as_mut(), opt.critic.as_mut()) {
        let mut next = model.clone();
        a.step(&mut next.actor, &actor_grad)?;
        c.step(&mut next.critic, &critic_grad)?;
        *model = next;
    }
    Ok(MetaStepReport { tasks: reports, actor_grad, critic_grad })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaIterRecord {
    pub iteration: u64,
    pub task_ids: Vec<u64>,
    pub pre_reward: f64,
    pub post_reward: f64,
    pub post_loss: f64,
    pub post_critic_loss: f64,
    pub meta_grad_norm: f64,
    pub importance_clipped: usize,
    pub importance_nonfinite: usize,
}

/// Task seeds and rollout seeds for every meta-iteration come from `seed`.
pub struct MetaTrainer {
    pub model: ActorCritic,
    pub opt: MetaOptimizer,
    pub iteration: u64,
    rng: ChaCha8Rng,
}

impl MetaTrainer {
    pub fn new(model: ActorCritic, cfg: &MetaConfig, a3c: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        a3c.validate()?;
        let opt = MetaOptimizer::new(&model, cfg, a3c)?;
        Ok(Self { model, opt, iteration: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn step(
        &mut self,
        scenario: &Arc<Scenario>,
        dist: &TaskDistribution,
        cfg: &MetaConfig,
        a3c: &TrainConfig,
    ) -> Result<MetaIterRecord> {
        let mut tasks = Vec::with_capacity(cfg.meta_batch);
        let mut seeds = Vec::with_capacity(cfg.meta_batch);
        for _ in 0..cfg.meta_batch {
            tasks.push(Arc::new(dist.sample(self.rng.gen())?));
            seeds.push(self.rng.gen());
        }
        let r = meta_update(&mut self.model, &mut self.opt, scenario, &tasks, &seeds, cfg, a3c)?;
        self.iteration += 1;
        let b = r.tasks.len() as f64;
        Ok(MetaIterRecord {
            iteration: self.iteration,
            task_ids: tasks.iter().map(|t| t.id).collect(),
            pre_reward: r.mean_pre_reward(),
            post_reward: r.mean_post_reward(),
            post_loss: r.tasks.iter().map(|t| t.post_loss).sum::<f64>() / b,
            post_critic_loss: r.tasks.iter().map(|t| t.post_critic_loss).sum::<f64>() / b,
            meta_grad_norm: (r.actor_grad.norm().powi(2) + r.critic_grad.norm().powi(2)).sqrt(),
            importance_clipped: r.tasks.iter().map(|t| t.importance.clipped).sum(),
            importance_nonfinite: r.tasks.iter().map(|t| t.importance.nonfinite).sum(),
        })
    }
}

/// Runs `cfg.iterations` meta-iterations from `init`.
pub fn meta_train<C>(
    init: ActorCritic,
    scenario: &Arc<Scenario>,
    dist: &TaskDistribution,
    cfg: &MetaConfig,
    a3c: &TrainConfig,
    seed: u64,
    mut on_iter: C,
) -> Result<MetaTrainer>
where
    C: FnMut(&MetaIterRecord) -> Result<()>,
{
    let mut t = MetaTrainer::new(init, cfg, a3c, seed)?;
    while t.iteration < cfg.iterations {
        let rec = t.step(scenario, dist, cfg, a3c)?;
        on_iter(&rec)?;
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptationReport {
    pub task_id: u64,
    pub steps: usize,
    pub pre: EvalStats,
    pub post: EvalStats,
    pub inner_losses: Vec<f64>,
}

/// Adapts `model` to `task` with `steps` inner steps and scores the policy
/// greedily on `eval_seeds` before and after. Zero steps returns `model`.
#[allow(clippy::too_many_arguments)]
pub fn online_adapt(
    model: &ActorCritic,
    scenario: &Arc<Scenario>,
    task: &Arc<Task>,
    steps: usize,
    cfg: &MetaConfig,
    a3c: &TrainConfig,
    eval_seeds: &[u64],
    seed: u64,
) -> Result<(ActorCritic, AdaptationReport)> {
    cfg.validate()?;
    let pre = evaluate_policy(model, scenario, task, eval_seeds)?;
    let (adapted, inner_losses) = if steps == 0 {
        (model.clone(), Vec::new())
    } else {
        let env = Env::new(scenario.clone(), task.clone(), seed)?;
        let mut runner = EpisodeRunner::new(env, seed, 0)?;
        let a = inner_adapt(model, &mut runner, steps, cfg, a3c)?;
        let losses = a.steps.iter().map(|s| s.loss).collect();
        (a.model, losses)
    };
    let post = evaluate_policy(&adapted, scenario, task, eval_seeds)?;
    Ok((adapted, AdaptationReport { task_id: task.id, steps, pre, post, inner_losses }))
}
