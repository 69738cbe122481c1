//! Asynchronous advantage actor-critic.
//!
//! Workers own private environments, pull a snapshot of the global networks,
//! roll out up to `n_step` transitions, compute n-step returns and analytic
//! gradients, and submit them to a single serialized updater that applies
//! RMSProp. Serial mode runs the same workers round-robin on one thread.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Env;
use crate::error::{Error, Result};
use crate::network::NUM_CONSTRAINTS;
use crate::nn::{
    actor_backward, critic_backward, forward_actor, forward_critic, ActorCritic, GradientSet, ParamSet, RmsPropState,
};
use crate::scenario::{Scenario, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_workers: usize,
    /// Rollout length τ.
    pub n_step: usize,
    pub gamma: f64,
    /// Φ.
    pub entropy_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// N_max.
    pub max_updates: u64,
    pub grad_clip: f64,
    /// Rewards are multiplied by this before returns are formed.
    pub reward_scale: f64,
    /// Run workers round-robin on the calling thread.
    pub serial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_workers: 4,
            n_step: 20,
            gamma: 0.99,
            entropy_coef: 0.01,
            actor_lr: 5e-4,
            critic_lr: 1e-3,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            max_updates: 2000,
            grad_clip: 40.0,
            reward_scale: 1.0,
            serial: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_workers == 0 {
            return Err(Error::param("num_workers", "must be at least 1"));
        }
        if self.n_step == 0 {
            return Err(Error::param("n_step", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidRange { name: "gamma", lo: self.gamma, hi: 1.0 });
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return Err(Error::param("entropy_coef", "must be finite and non-negative"));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("rms_eps", self.rms_eps),
            ("grad_clip", self.grad_clip),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::param("rms_decay", format!("must be in [0, 1), got {}", self.rms_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    /// Pre-squash action u; the environment saw tanh(u).
    pub raw_action: Vec<f64>,
    /// Scaled reward used for returns.
    pub reward: f64,
    pub log_prob: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// V(s_{t+τ}) of the state after the last transition, 0 if it was terminal.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.value).collect()
    }
}

/// Ξ_t = r_t + γ Ξ_{t+1}, seeded with the bootstrap value and reset to zero
/// after terminal transitions.
pub fn nstep_return(buffer: &RolloutBuffer, gamma: f64) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::Empty("rollout buffer"));
    }
    let mut out = vec![0.0; buffer.len()];
    let mut acc = buffer.bootstrap_value;
    for (t, tr) in buffer.transitions.iter().enumerate().rev() {
        if tr.done {
            acc = 0.0;
        }
        acc = tr.reward + gamma * acc;
        out[t] = acc;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("n-step return"));
    }
    Ok(out)
}

/// Θ_t = Ξ_t − V(s_t).
pub fn advantage(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != values.len() {
        return Err(Error::DimensionMismatch { what: "values", expected: returns.len(), got: values.len() });
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Norm of the actor and critic gradients together, before clipping.
    pub grad_norm: f64,
}

/// Gradient of `L_actor = −Σ_t [log π(u_t|s_t)·Θ_t + Φ·H(π(·|s_t))]` with the
/// advantages held constant. Returns the gradient, the loss and mean entropy.
pub fn actor_loss_grads(
    actor: &ParamSet,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    entropy_coef: f64,
) -> Result<(GradientSet, f64, f64)> {
    if advantages.len() != buffer.len() {
        return Err(Error::DimensionMismatch { what: "advantages", expected: buffer.len(), got: advantages.len() });
    }
    let mut g = GradientSet::zeros_like(actor);
    let mut loss = 0.0;
    let mut entropy = 0.0;
    for (tr, &adv) in buffer.transitions.iter().zip(advantages) {
        let fwd = forward_actor(actor, &tr.features)?;
        let h = fwd.entropy();
        loss -= fwd.log_prob(&tr.raw_action) * adv + entropy_coef * h;
        entropy += h;
        actor_backward(actor, &fwd, &tr.raw_action, -adv, -entropy_coef, &mut g)?;
    }
    Ok((g, loss, entropy / buffer.len().max(1) as f64))
}

/// Gradient of `L_critic = Σ_t (Ξ_t − V(s_t))²`.
pub fn critic_loss_grads(critic: &ParamSet, buffer: &RolloutBuffer, returns: &[f64]) -> Result<(GradientSet, f64)> {
    if returns.len() != buffer.len() {
        return Err(Error::DimensionMismatch { what: "returns", expected: buffer.len(), got: returns.len() });
    }
    let mut g = GradientSet::zeros_like(critic);
    let mut loss = 0.0;
    for (tr, &ret) in buffer.transitions.iter().zip(returns) {
        let (v, cache) = forward_critic(critic, &tr.features)?;
        loss += (ret - v) * (ret - v);
        critic_backward(critic, &cache, 2.0 * (v - ret), &mut g)?;
    }
    Ok((g, loss))
}

/// Gradients a worker sends to the global updater.
#[derive(Clone, Debug, PartialEq)]
pub struct Submission {
    pub actor: GradientSet,
    pub critic: GradientSet,
    pub stats: LossStats,
    /// Global version the gradients were computed against.
    pub base_version: u64,
}

/// Returns, advantages and clipped gradients for one rollout.
pub fn compute_submission(
    model: &ActorCritic,
    base_version: u64,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
) -> Result<Submission> {
    let returns = nstep_return(buffer, cfg.gamma)?;
    let adv = advantage(&returns, &buffer.values())?;
    let (mut ga, actor_loss, entropy) = actor_loss_grads(&model.actor, buffer, &adv, cfg.entropy_coef)?;
    let (mut gc, critic_loss) = critic_loss_grads(&model.critic, buffer, &returns)?;
    let grad_norm = ga.clip_norm(cfg.grad_clip).hypot(gc.clip_norm(cfg.grad_clip));
    if ga.values().iter().chain(gc.values()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    Ok(Submission {
        actor: ga,
        critic: gc,
        stats: LossStats { actor_loss, critic_loss, entropy, grad_norm },
        base_version,
    })
}

/// The shared networks with their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalModel {
    pub model: ActorCritic,
    pub actor_opt: RmsPropState,
    pub critic_opt: RmsPropState,
    /// Number of updates applied.
    pub updates: u64,
}

impl GlobalModel {
    pub fn new(model: ActorCritic, cfg: &TrainConfig) -> Result<Self> {
        let actor_opt = RmsPropState::new(model.actor.len(), cfg.rms_decay, cfg.actor_lr, cfg.rms_eps)?;
        let critic_opt = RmsPropState::new(model.critic.len(), cfg.rms_decay, cfg.critic_lr, cfg.rms_eps)?;
        Ok(Self { model, actor_opt, critic_opt, updates: 0 })
    }

    /// Applies one submission. Returns the new update count.
    pub fn apply(&mut self, s: &Submission) -> Result<u64> {
        let mut next = self.model.clone();
        self.actor_opt.step(&mut next.actor, &s.actor)?;
        self.critic_opt.step(&mut next.critic, &s.critic)?;
        if !next.actor.is_finite() || !next.critic.is_finite() {
            return Err(Error::NonFinite("parameters after update"));
        }
        self.model = next;
        self.updates += 1;
        Ok(self.updates)
    }
}

/// Summary of a finished rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RolloutStats {
    /// Mean unscaled reward per transition.
    pub mean_reward: f64,
    pub transitions: usize,
    /// Undiscounted unscaled rewards of episodes that ended in this rollout.
    pub finished_episode_return: Option<f64>,
}

/// Private environment plus the random streams a worker needs.
#[derive(Debug)]
pub struct EpisodeRunner {
    env: Env,
    episode_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    episode_return: f64,
    episodes: u64,
}

impl EpisodeRunner {
    /// Stream `2w` drives the policy, `2w + 1` the episode seeds.
    pub fn new(mut env: Env, seed: u64, worker: usize) -> Result<Self> {
        let mut episode_rng = ChaCha8Rng::seed_from_u64(seed);
        episode_rng.set_stream(2 * worker as u64 + 1);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        policy_rng.set_stream(2 * worker as u64);
        env.reset(episode_rng.gen())?;
        Ok(Self { env, episode_rng, policy_rng, episode_return: 0.0, episodes: 0 })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Rolls out up to `max_len` transitions, stopping early at episode end.
    /// The next call after a terminal transition starts a fresh episode.
    pub fn collect(
        &mut self,
        model: &ActorCritic,
        max_len: usize,
        reward_scale: f64,
    ) -> Result<(RolloutBuffer, RolloutStats)> {
        if self.env.is_done() {
            self.env.reset(self.episode_rng.gen())?;
            self.episode_return = 0.0;
        }
        let mut buf = RolloutBuffer::default();
        let mut raw_sum = 0.0;
        let mut finished = None;
        for _ in 0..max_len {
            let features = self.env.features();
            let fwd = forward_actor(&model.actor, &features)?;
            let out = fwd.sample(&mut self.policy_rng);
            let (value, _) = forward_critic(&model.critic, &features)?;
            let step = self.env.step_unit(&out.action)?;
            raw_sum += step.reward;
            self.episode_return += step.reward;
            buf.transitions.push(Transition {
                features,
                raw_action: out.raw_action,
                reward: step.reward * reward_scale,
                log_prob: out.log_prob,
                value,
                done: step.done,
            });
            if step.done {
                finished = Some(self.episode_return);
                self.episodes += 1;
                break;
            }
        }
        buf.bootstrap_value =
            if self.env.is_done() { 0.0 } else { forward_critic(&model.critic, &self.env.features())?.0 };
        let n = buf.len();
        Ok((buf, RolloutStats { mean_reward: raw_sum / n as f64, transitions: n, finished_episode_return: finished }))
    }
}

/// One applied global update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub update: u64,
    pub worker: usize,
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub transitions: usize,
    /// Undiscounted return of an episode that finished in this rollout.
    pub episode_return: Option<f64>,
    /// Updates applied between the worker's snapshot and this update.
    pub staleness: u64,
    /// Seconds since training started. Not deterministic.
    #[serde(skip)]
    pub wall_secs: f64,
}

fn record(update: u64, worker: usize, stats: &RolloutStats, s: &Submission, start: Instant) -> UpdateRecord {
    UpdateRecord {
        update,
        worker,
        mean_reward: stats.mean_reward,
        actor_loss: s.stats.actor_loss,
        critic_loss: s.stats.critic_loss,
        entropy: s.stats.entropy,
        grad_norm: s.stats.grad_norm,
        transitions: stats.transitions,
        episode_return: stats.finished_episode_return,
        staleness: (update - 1).saturating_sub(s.base_version),
        wall_secs: start.elapsed().as_secs_f64(),
    }
}

/// Trains from `init` for exactly `cfg.max_updates` global updates.
/// `make_env(w)` builds worker `w`'s environment; `on_update` sees each
/// record in application order.
pub fn train<F, C>(
    init: ActorCritic,
    cfg: &TrainConfig,
    seed: u64,
    make_env: F,
    mut on_update: C,
) -> Result<GlobalModel>
where
    F: Fn(usize) -> Result<Env> + Sync,
    C: FnMut(&UpdateRecord) -> Result<()>,
{
    cfg.validate()?;
    let mut runners =
        (0..cfg.num_workers).map(|w| EpisodeRunner::new(make_env(w)?, seed, w)).collect::<Result<Vec<_>>>()?;
    if let Some(r) = runners.first() {
        if r.env().feature_dim() != init.feature_dim() || r.env().action_dim() != init.action_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input/output",
                expected: r.env().feature_dim() + r.env().action_dim(),
                got: init.feature_dim() + init.action_dim(),
            });
        }
    }
    let mut global = GlobalModel::new(init, cfg)?;
    let start = Instant::now();

    if cfg.serial || cfg.num_workers == 1 {
        let mut w = 0;
        while global.updates < cfg.max_updates {
            let (buf, stats) = runners[w].collect(&global.model, cfg.n_step, cfg.reward_scale)?;
            let sub = compute_submission(&global.model, global.updates, &buf, cfg)?;
            let n = global.apply(&sub)?;
            on_update(&record(n, w, &stats, &sub, start))?;
            w = (w + 1) % runners.len();
        }
        return Ok(global);
    }

    let shared = Mutex::new(global);
    let published = RwLock::new(Arc::new((shared.lock().expect("fresh mutex").model.clone(), 0u64)));
    let claimed = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<UpdateRecord>();

    let worker_result: Result<()> = std::thread::scope(|scope| {
        let handles: Vec<_> = runners
            .iter_mut()
            .enumerate()
            .map(|(w, runner)| {
                let tx = tx.clone();
                let (shared, published, claimed, abort) = (&shared, &published, &claimed, &abort);
                scope.spawn(move || -> Result<()> {
                    let res = (|| {
                        while !abort.load(Ordering::SeqCst) {
                            let snapshot = published.read().expect("snapshot lock").clone();
                            let (model, version) = (&snapshot.0, snapshot.1);
                            let (buf, stats) = runner.collect(model, cfg.n_step, cfg.reward_scale)?;
                            let sub = compute_submission(model, version, &buf, cfg)?;
                            if claimed.fetch_add(1, Ordering::SeqCst) >= cfg.max_updates {
                                break;
                            }
                            let mut g = shared.lock().expect("global lock");
                            let n = g.apply(&sub)?;
                            *published.write().expect("snapshot lock") = Arc::new((g.model.clone(), n));
                            drop(g);
                            if tx.send(record(n, w, &stats, &sub, start)).is_err() {
                                break;
                            }
                        }
                        Ok(())
                    })();
                    if res.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    res
                })
            })
            .collect();
        drop(tx);
        let mut cb_err = None;
        for rec in rx {
            if cb_err.is_none() {
                if let Err(e) = on_update(&rec) {
                    abort.store(true, Ordering::SeqCst);
                    cb_err = Some(e);
                }
            }
        }
        for h in handles {
            h.join().expect("worker thread panicked")?;
        }
        cb_err.map_or(Ok(()), Err)
    });
    worker_result?;
    Ok(shared.into_inner().expect("global lock"))
}

/// Aggregates over greedy evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalStats {
    pub episodes: usize,
    /// Mean per-slot reward.
    pub mean_reward: f64,
    /// Mean per-slot sum rate, bit/s.
    pub mean_sum_rate: f64,
    /// Standard deviation across episodes of the per-episode mean sum rate.
    pub std_sum_rate: f64,
    /// Fraction of user-slots meeting R_min.
    pub qos_fraction: f64,
    /// Mean per-episode summed violation of each constraint.
    pub violations: [f64; NUM_CONSTRAINTS],
}

/// Runs one greedy episode per seed and aggregates the results.
pub fn evaluate_policy(
    model: &ActorCritic,
    scenario: &Arc<Scenario>,
    task: &Arc<Task>,
    seeds: &[u64],
) -> Result<EvalStats> {
    if seeds.is_empty() {
        return Err(Error::Empty("evaluation seeds"));
    }
    let mut rewards = 0.0;
    let mut slots = 0usize;
    let mut episode_rates = Vec::with_capacity(seeds.len());
    let mut qos_ok = 0usize;
    let mut user_slots = 0usize;
    let mut violations = [0.0; NUM_CONSTRAINTS];
    for &seed in seeds {
        let mut env = Env::new(scenario.clone(), task.clone(), seed)?;
        let mut rate_sum = 0.0;
        let mut n = 0usize;
        while !env.is_done() {
            let out = forward_actor(&model.actor, &env.features())?.greedy();
            let step = env.step_unit(&out.action)?;
            rewards += step.reward;
            rate_sum += step.state.rates.sum_rate;
            n += 1;
            user_slots += step.state.rates.per_user_rate.len();
            qos_ok += step.state.rates.per_user_rate.iter().filter(|&&r| r >= task.qos.r_min).count();
            for (acc, v) in violations.iter_mut().zip(step.constraints.violations()) {
                *acc += v;
            }
        }
        slots += n;
        episode_rates.push(rate_sum / n.max(1) as f64);
    }
    let e = seeds.len() as f64;
    let mean_rate = episode_rates.iter().sum::<f64>() / e;
    let var = episode_rates.iter().map(|r| (r - mean_rate).powi(2)).sum::<f64>() / e;
    Ok(EvalStats {
        episodes: seeds.len(),
        mean_reward: rewards / slots.max(1) as f64,
        mean_sum_rate: mean_rate,
        std_sum_rate: var.sqrt(),
        qos_fraction: qos_ok as f64 / user_slots.max(1) as f64,
        violations: violations.map(|v| v / e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(reward: f64, value: f64, done: bool) -> Transition {
        Transition { features: vec![], raw_action: vec![], reward, log_prob: 0.0, value, done }
    }

    #[test]
    fn returns_bootstrap_from_last_value() {
        let buf = RolloutBuffer { transitions: vec![tr(1.0, 0.0, false), tr(2.0, 0.0, false)], bootstrap_value: 10.0 };
        let r = nstep_return(&buf, 0.5).unwrap();
        assert_eq!(r, vec![1.0 + 0.5 * (2.0 + 0.5 * 10.0), 2.0 + 0.5 * 10.0]);
    }

    #[test]
    fn terminal_transition_ignores_bootstrap() {
        let buf = RolloutBuffer { transitions: vec![tr(1.0, 0.0, false), tr(3.0, 0.0, true)], bootstrap_value: 99.0 };
        assert_eq!(nstep_return(&buf, 0.9).unwrap(), vec![1.0 + 0.9 * 3.0, 3.0]);
    }

    #[test]
    fn empty_buffer_rejected() {
        assert!(matches!(nstep_return(&RolloutBuffer::default(), 0.9), Err(Error::Empty(_))));
    }

    #[test]
    fn advantage_subtracts_values() {
        assert_eq!(advantage(&[3.0, 1.0], &[1.0, 1.5]).unwrap(), vec![2.0, -0.5]);
        assert!(advantage(&[1.0], &[]).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = TrainConfig { n_step: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { gamma: 1.5, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
