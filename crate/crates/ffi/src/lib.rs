//! C ABI over the simulator and trained policies.
//!
//! Every fallible function returns a status code (`UAVNET_OK` on success)
//! and writes results through out-pointers. On failure the message is kept
//! per thread and can be read with `uavnet_last_error`. Handles are opaque
//! and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use uavnet::channel::{self, ChannelParams, LinkKind};
use uavnet::env::Env;
use uavnet::harness::{commands, ExperimentConfig};
use uavnet::network::NUM_CONSTRAINTS;
use uavnet::nn::{forward_actor, ActorCritic};
use uavnet::Error;

pub const UAVNET_OK: i32 = 0;
/// A required pointer argument was null.
pub const UAVNET_ERR_NULL: i32 = -1;
/// Bad argument: wrong buffer length, invalid UTF-8, out-of-range value.
pub const UAVNET_ERR_INVALID_ARG: i32 = -2;
/// The configuration could not be loaded or failed validation.
pub const UAVNET_ERR_CONFIG: i32 = -3;
/// Unreadable, corrupt or mismatched checkpoint.
pub const UAVNET_ERR_CHECKPOINT: i32 = -4;
/// `uavnet_env_step` after the final slot; reset first.
pub const UAVNET_ERR_EPISODE_DONE: i32 = -5;
/// Any other simulation failure.
pub const UAVNET_ERR_RUNTIME: i32 = -6;
/// A Rust panic was caught at the boundary.
pub const UAVNET_ERR_PANIC: i32 = -7;

pub const UAVNET_NUM_CONSTRAINTS: usize = 11;
const _: () = assert!(UAVNET_NUM_CONSTRAINTS == NUM_CONSTRAINTS);

/// Link direction for the channel helpers.
pub const UAVNET_LINK_A2G: i32 = 0;
pub const UAVNET_LINK_G2A: i32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnsupportedCheckpoint | Error::CorruptCheckpoint(_) | Error::FingerprintMismatch { .. } => {
                UAVNET_ERR_CHECKPOINT
            }
            Error::EpisodeDone => UAVNET_ERR_EPISODE_DONE,
            Error::DimensionMismatch { .. } | Error::NonFinite(_) => UAVNET_ERR_INVALID_ARG,
            e if e.is_config() => UAVNET_ERR_CONFIG,
            _ => UAVNET_ERR_RUNTIME,
        };
        Self::new(code, e.to_string())
    }
}

type Ffi<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> Ffi<()>) -> i32 {
    let (code, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (UAVNET_OK, String::new()),
        Ok(Err(e)) => (e.code, e.message),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (UAVNET_ERR_PANIC, format!("panic: {msg}"))
        }
    };
    if code != UAVNET_OK {
        LAST_ERROR.with(|e| *e.borrow_mut() = message);
    }
    code
}

fn non_null<T>(p: *const T, what: &str) -> Ffi<()> {
    if p.is_null() {
        Err(Failure::new(UAVNET_ERR_NULL, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn string_arg<'a>(p: *const c_char, what: &str) -> Ffi<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(UAVNET_ERR_INVALID_ARG, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, expected: usize, what: &str) -> Ffi<&'a [f64]> {
    non_null(p, what)?;
    if len != expected {
        return Err(Failure::new(UAVNET_ERR_INVALID_ARG, format!("{what} has length {len}, expected {expected}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, expected: usize, what: &str) -> Ffi<&'a mut [f64]> {
    non_null(p, what)?;
    if len < expected {
        return Err(Failure::new(UAVNET_ERR_INVALID_ARG, format!("{what} holds {len} values, need {expected}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, expected))
}

unsafe fn point(p: *const f64, what: &str) -> Ffi<[f64; 3]> {
    let s = slice_arg(p, 3, 3, what)?;
    Ok([s[0], s[1], s[2]])
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes (excluding the NUL), so a call with `len = 0`
/// sizes the buffer.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn uavnet_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Simulator instance bound to one scenario and one task.
pub struct UavnetEnv {
    env: Env,
}

/// Outcome of one slot.
#[repr(C)]
pub struct UavnetStep {
    pub reward: f64,
    /// Sum rate over all users in bit/s.
    pub sum_rate: f64,
    /// 1 once the final slot has been simulated.
    pub done: i32,
    /// Per-constraint violation magnitudes, C1 first.
    pub violations: [f64; UAVNET_NUM_CONSTRAINTS],
}

unsafe fn env_ref<'a>(env: *const UavnetEnv) -> Ffi<&'a UavnetEnv> {
    non_null(env, "env")?;
    Ok(&*env)
}

unsafe fn env_mut<'a>(env: *mut UavnetEnv) -> Ffi<&'a mut UavnetEnv> {
    non_null(env, "env")?;
    Ok(&mut *env)
}

/// Creates an environment from a TOML config path or preset name
/// ("default", "smoke"). The task is drawn from the config's task
/// distribution with `task_seed`; the first episode starts from `seed`.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_new(
    config: *const c_char,
    task_seed: u64,
    seed: u64,
    out: *mut *mut UavnetEnv,
) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        let cfg = ExperimentConfig::load(string_arg(config, "config")?)?;
        cfg.validate()?;
        let scenario = Arc::new(cfg.scenario()?);
        let task = Arc::new(cfg.distribution().sample(task_seed)?);
        let env = Env::new(scenario, task, seed)?;
        *out = Box::into_raw(Box::new(UavnetEnv { env }));
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must come from `uavnet_env_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_free(env: *mut UavnetEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Starts a new episode on the same task.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_reset(env: *mut UavnetEnv, seed: u64) -> i32 {
    guard(|| {
        env_mut(env)?.env.reset(seed)?;
        Ok(())
    })
}

/// Length of the observation vector, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_feature_dim(env: *const UavnetEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.feature_dim())
}

/// Length of the action vector, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_action_dim(env: *const UavnetEnv) -> usize {
    env.as_ref().map_or(0, |e| e.env.action_dim())
}

/// Current slot index, 0 right after reset.
///
/// # Safety
/// `env` must be a live handle and `slot` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_slot(env: *const UavnetEnv, slot: *mut usize) -> i32 {
    guard(|| {
        non_null(slot, "slot")?;
        *slot = env_ref(env)?.env.state().slot;
        Ok(())
    })
}

/// Writes the observation into `out`, which must hold at least
/// `uavnet_env_feature_dim` values.
///
/// # Safety
/// `env` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_observe(env: *const UavnetEnv, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let e = env_ref(env)?;
        let f = e.env.features();
        out_slice(out, len, f.len(), "out")?.copy_from_slice(&f);
        Ok(())
    })
}

/// Writes UAV positions as x, y, z triples into `out` (3 values per UAV).
///
/// # Safety
/// `env` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_uav_positions(env: *const UavnetEnv, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let uavs = &env_ref(env)?.env.state().uavs;
        let dst = out_slice(out, len, 3 * uavs.len(), "out")?;
        for (chunk, q) in dst.chunks_exact_mut(3).zip(uavs) {
            chunk.copy_from_slice(q);
        }
        Ok(())
    })
}

/// Advances one slot with an action in `[-1, 1]^action_dim`: per UAV a
/// velocity triple, then per UGV a heading pair and a speed.
///
/// # Safety
/// `env` must be a live handle, `action` valid for `len` doubles and
/// `result` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uavnet_env_step(
    env: *mut UavnetEnv,
    action: *const f64,
    len: usize,
    result: *mut UavnetStep,
) -> i32 {
    guard(|| {
        non_null(result, "result")?;
        let e = env_mut(env)?;
        let a = slice_arg(action, len, e.env.action_dim(), "action")?;
        let out = e.env.step_unit(a)?;
        *result = UavnetStep {
            reward: out.reward,
            sum_rate: out.state.rates.sum_rate,
            done: out.done as i32,
            violations: out.constraints.violations(),
        };
        Ok(())
    })
}

/// Greedy policy restored from a checkpoint.
pub struct UavnetPolicy {
    model: ActorCritic,
}

/// Loads a checkpoint written for `config` (path or preset name). A
/// checkpoint from a different scenario family is rejected.
///
/// # Safety
/// `config` and `checkpoint` must be NUL-terminated strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uavnet_policy_load(
    config: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut UavnetPolicy,
) -> i32 {
    guard(|| {
        non_null(out, "out")?;
        let cfg = ExperimentConfig::load(string_arg(config, "config")?)?;
        let path = Path::new(string_arg(checkpoint, "checkpoint")?);
        let model = commands::load_model(&cfg, Some(path), 0)?;
        *out = Box::into_raw(Box::new(UavnetPolicy { model }));
        Ok(())
    })
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from `uavnet_policy_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uavnet_policy_free(policy: *mut UavnetPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Greedy action for an observation, written to `action` in `[-1, 1]`.
///
/// # Safety
/// `policy` must be a live handle, `features` valid for `features_len`
/// doubles and `action` valid for `action_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn uavnet_policy_act(
    policy: *const UavnetPolicy,
    features: *const f64,
    features_len: usize,
    action: *mut f64,
    action_len: usize,
) -> i32 {
    guard(|| {
        non_null(policy, "policy")?;
        let m = &(*policy).model;
        let x = slice_arg(features, features_len, m.feature_dim(), "features")?;
        let a = forward_actor(&m.actor, x)?.greedy().action;
        out_slice(action, action_len, a.len(), "action")?.copy_from_slice(&a);
        Ok(())
    })
}

/// Checks that a policy fits an environment's observation and action sizes.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn uavnet_policy_matches(policy: *const UavnetPolicy, env: *const UavnetEnv) -> i32 {
    guard(|| {
        non_null(policy, "policy")?;
        let (m, e) = (&(*policy).model, env_ref(env)?);
        if m.feature_dim() != e.env.feature_dim() || m.action_dim() != e.env.action_dim() {
            return Err(Failure::new(
                UAVNET_ERR_INVALID_ARG,
                format!(
                    "policy is {}x{}, env is {}x{}",
                    m.feature_dim(),
                    m.action_dim(),
                    e.env.feature_dim(),
                    e.env.action_dim()
                ),
            ));
        }
        Ok(())
    })
}

fn link_kind(kind: i32) -> Ffi<LinkKind> {
    match kind {
        UAVNET_LINK_A2G => Ok(LinkKind::A2G),
        UAVNET_LINK_G2A => Ok(LinkKind::G2A),
        k => Err(Failure::new(UAVNET_ERR_INVALID_ARG, format!("unknown link kind {k}"))),
    }
}

/// Expected path loss in dB between a ground point and an airborne point
/// (x, y, z triples) under the default channel parameters.
///
/// # Safety
/// `ground` and `air` must point to 3 doubles, `loss_db` to one.
#[no_mangle]
pub unsafe extern "C" fn uavnet_path_loss_db(kind: i32, ground: *const f64, air: *const f64, loss_db: *mut f64) -> i32 {
    guard(|| {
        non_null(loss_db, "loss_db")?;
        let (g, a) = (point(ground, "ground")?, point(air, "air")?);
        let p = ChannelParams::default();
        let kind = link_kind(kind)?;
        let (tx, rx) = match kind {
            LinkKind::A2G => (a, g),
            LinkKind::G2A => (g, a),
        };
        *loss_db = channel::expected_path_loss(&p, kind, tx, rx)?.loss_db;
        Ok(())
    })
}

/// Line-of-sight probability for an S-curve `(a, b)` at an elevation angle
/// in degrees.
#[no_mangle]
pub extern "C" fn uavnet_p_los(a: f64, b: f64, elevation_deg: f64) -> f64 {
    channel::p_los(channel::SCurve { a, b }, elevation_deg)
}

/// Downlink SINR (linear) at `user` from UAV `serving`, with every other
/// UAV at default power interfering. `uavs` holds `num_uavs` triples.
///
/// # Safety
/// `uavs` must point to `3 * num_uavs` doubles, `user` to 3, `sinr` to one.
#[no_mangle]
pub unsafe extern "C" fn uavnet_sinr_user(
    uavs: *const f64,
    num_uavs: usize,
    serving: usize,
    user: *const f64,
    sinr: *mut f64,
) -> i32 {
    guard(|| {
        non_null(sinr, "sinr")?;
        let flat = slice_arg(uavs, 3 * num_uavs, 3 * num_uavs, "uavs")?;
        let qs: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let p = ChannelParams::default();
        *sinr = channel::sinr_user(&p, serving, &qs, &vec![p.p_uav_w; qs.len()], point(user, "user")?)?;
        Ok(())
    })
}

/// Backhaul SNR (linear) from a UGV to a UAV under default parameters.
///
/// # Safety
/// `ugv` and `uav` must point to 3 doubles, `snr` to one.
#[no_mangle]
pub unsafe extern "C" fn uavnet_snr_backhaul(ugv: *const f64, uav: *const f64, snr: *mut f64) -> i32 {
    guard(|| {
        non_null(snr, "snr")?;
        *snr = channel::sinr_backhaul(&ChannelParams::default(), point(ugv, "ugv")?, point(uav, "uav")?, true)?;
        Ok(())
    })
}

/// Shannon rate in bit/s for a linear SINR over `bandwidth_hz`.
#[no_mangle]
pub extern "C" fn uavnet_rate(bandwidth_hz: f64, sinr: f64) -> f64 {
    channel::rate_with_bandwidth(bandwidth_hz, true, sinr)
}
