#ifndef UAVNET_H
#define UAVNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define UAVNET_OK 0

/**
 * A required pointer argument was null.
 */
#define UAVNET_ERR_NULL -1

/**
 * Bad argument: wrong buffer length, invalid UTF-8, out-of-range value.
 */
#define UAVNET_ERR_INVALID_ARG -2

/**
 * The configuration could not be loaded or failed validation.
 */
#define UAVNET_ERR_CONFIG -3

/**
 * Unreadable, corrupt or mismatched checkpoint.
 */
#define UAVNET_ERR_CHECKPOINT -4

/**
 * `uavnet_env_step` after the final slot; reset first.
 */
#define UAVNET_ERR_EPISODE_DONE -5

/**
 * Any other simulation failure.
 */
#define UAVNET_ERR_RUNTIME -6

/**
 * A Rust panic was caught at the boundary.
 */
#define UAVNET_ERR_PANIC -7

#define UAVNET_NUM_CONSTRAINTS 11

/**
 * Link direction for the channel helpers.
 */
#define UAVNET_LINK_A2G 0

#define UAVNET_LINK_G2A 1

/**
 * Simulator instance bound to one scenario and one task.
 */
typedef struct UavnetEnv UavnetEnv;

/**
 * Greedy policy restored from a checkpoint.
 */
typedef struct UavnetPolicy UavnetPolicy;

/**
 * Outcome of one slot.
 */
typedef struct UavnetStep {
  double reward;
  /**
   * Sum rate over all users in bit/s.
   */
  double sum_rate;
  /**
   * 1 once the final slot has been simulated.
   */
  int32_t done;
  /**
   * Per-constraint violation magnitudes, C1 first.
   */
  double violations[UAVNET_NUM_CONSTRAINTS];
} UavnetStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length in bytes (excluding the NUL), so a call with `len = 0`
 * sizes the buffer.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t uavnet_last_error(char *buf, size_t len);

/**
 * Creates an environment from a TOML config path or preset name
 * ("default", "smoke"). The task is drawn from the config's task
 * distribution with `task_seed`; the first episode starts from `seed`.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t uavnet_env_new(const char *config,
                       uint64_t task_seed,
                       uint64_t seed,
                       struct UavnetEnv **out);

/**
 * Releases an environment. Null is ignored.
 *
 * # Safety
 * `env` must come from `uavnet_env_new` and not be used afterwards.
 */
void uavnet_env_free(struct UavnetEnv *env);

/**
 * Starts a new episode on the same task.
 *
 * # Safety
 * `env` must be a live handle.
 */
int32_t uavnet_env_reset(struct UavnetEnv *env, uint64_t seed);

/**
 * Length of the observation vector, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t uavnet_env_feature_dim(const struct UavnetEnv *env);

/**
 * Length of the action vector, or 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t uavnet_env_action_dim(const struct UavnetEnv *env);

/**
 * Current slot index, 0 right after reset.
 *
 * # Safety
 * `env` must be a live handle and `slot` a valid pointer.
 */
int32_t uavnet_env_slot(const struct UavnetEnv *env, size_t *slot);

/**
 * Writes the observation into `out`, which must hold at least
 * `uavnet_env_feature_dim` values.
 *
 * # Safety
 * `env` must be a live handle and `out` valid for `len` doubles.
 */
int32_t uavnet_env_observe(const struct UavnetEnv *env, double *out, size_t len);

/**
 * Writes UAV positions as x, y, z triples into `out` (3 values per UAV).
 *
 * # Safety
 * `env` must be a live handle and `out` valid for `len` doubles.
 */
int32_t uavnet_env_uav_positions(const struct UavnetEnv *env, double *out, size_t len);

/**
 * Advances one slot with an action in `[-1, 1]^action_dim`: per UAV a
 * velocity triple, then per UGV a heading pair and a speed.
 *
 * # Safety
 * `env` must be a live handle, `action` valid for `len` doubles and
 * `result` a valid pointer.
 */
int32_t uavnet_env_step(struct UavnetEnv *env,
                        const double *action,
                        size_t len,
                        struct UavnetStep *result);

/**
 * Loads a checkpoint written for `config` (path or preset name). A
 * checkpoint from a different scenario family is rejected.
 *
 * # Safety
 * `config` and `checkpoint` must be NUL-terminated strings and `out` a
 * valid pointer.
 */
int32_t uavnet_policy_load(const char *config, const char *checkpoint, struct UavnetPolicy **out);

/**
 * Releases a policy. Null is ignored.
 *
 * # Safety
 * `policy` must come from `uavnet_policy_load` and not be used afterwards.
 */
void uavnet_policy_free(struct UavnetPolicy *policy);

/**
 * Greedy action for an observation, written to `action` in `[-1, 1]`.
 *
 * # Safety
 * `policy` must be a live handle, `features` valid for `features_len`
 * doubles and `action` valid for `action_len` doubles.
 */
int32_t uavnet_policy_act(const struct UavnetPolicy *policy,
                          const double *features,
                          size_t features_len,
                          double *action,
                          size_t action_len);

/**
 * Checks that a policy fits an environment's observation and action sizes.
 *
 * # Safety
 * Both handles must be live.
 */
int32_t uavnet_policy_matches(const struct UavnetPolicy *policy, const struct UavnetEnv *env);

/**
 * Expected path loss in dB between a ground point and an airborne point
 * (x, y, z triples) under the default channel parameters.
 *
 * # Safety
 * `ground` and `air` must point to 3 doubles, `loss_db` to one.
 */
int32_t uavnet_path_loss_db(int32_t kind, const double *ground, const double *air, double *loss_db);

/**
 * Line-of-sight probability for an S-curve `(a, b)` at an elevation angle
 * in degrees.
 */
double uavnet_p_los(double a, double b, double elevation_deg);

/**
 * Downlink SINR (linear) at `user` from UAV `serving`, with every other
 * UAV at default power interfering. `uavs` holds `num_uavs` triples.
 *
 * # Safety
 * `uavs` must point to `3 * num_uavs` doubles, `user` to 3, `sinr` to one.
 */
int32_t uavnet_sinr_user(const double *uavs,
                         size_t num_uavs,
                         size_t serving,
                         const double *user,
                         double *sinr);

/**
 * Backhaul SNR (linear) from a UGV to a UAV under default parameters.
 *
 * # Safety
 * `ugv` and `uav` must point to 3 doubles, `snr` to one.
 */
int32_t uavnet_snr_backhaul(const double *ugv, const double *uav, double *snr);

/**
 * Shannon rate in bit/s for a linear SINR over `bandwidth_hz`.
 */
double uavnet_rate(double bandwidth_hz, double sinr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UAVNET_H */
