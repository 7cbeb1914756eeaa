#ifndef ATTNSPHERE_H
#define ATTNSPHERE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  ATTN_STATUS_OK = 0,
  ATTN_STATUS_NULL_POINTER = 1,
  ATTN_STATUS_INVALID_ARGUMENT = 2,
  ATTN_STATUS_DIMENSION_MISMATCH = 3,
  ATTN_STATUS_DEGENERATE = 4,
  ATTN_STATUS_STIFFNESS = 5,
  ATTN_STATUS_UNREACHABLE = 6,
  ATTN_STATUS_CONFIG = 7,
  ATTN_STATUS_IO = 8,
  ATTN_STATUS_BUFFER_TOO_SMALL = 9,
  ATTN_STATUS_PANIC = 10,
} AttnStatus;

typedef enum {
  ATTN_MODEL_SA = 0,
  ATTN_MODEL_USA = 1,
  ATTN_MODEL_KURAMOTO = 2,
  ATTN_MODEL_HARDMAX = 3,
} AttnModel;

typedef enum {
  ATTN_METHOD_PROJECTED_EULER = 0,
  ATTN_METHOD_PROJECTED_RK4 = 1,
} AttnMethod;

/**
 * Token positions and masses.
 */
typedef struct AttnConfiguration AttnConfiguration;

/**
 * Recorded times, diagnostic series and final state of one integration.
 */
typedef struct AttnTrajectory AttnTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *attn_last_error(void);

/**
 * Builds a configuration from `n * d` row-major coordinates; rows are
 * renormalized and must be nonzero. `masses` may be null for uniform masses,
 * otherwise they must sum to 1.
 *
 * # Safety
 * `coords` must point to `n * d` doubles and `masses`, if non-null, to `n`.
 */
AttnStatus attn_configuration_new(size_t n,
                                  size_t d,
                                  const double *coords,
                                  const double *masses,
                                  AttnConfiguration **out);

/**
 * `n` tokens drawn uniformly from the sphere in `R^d`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
AttnStatus attn_configuration_uniform(size_t n, size_t d, uint64_t seed, AttnConfiguration **out);

/**
 * `n` tokens in `R^d` (`d >= n`) with all pairwise inner products equal to `rho`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
AttnStatus attn_configuration_equiangular(size_t n,
                                          double rho,
                                          size_t d,
                                          uint64_t seed,
                                          AttnConfiguration **out);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards. Null is a no-op.
 */
void attn_configuration_free(AttnConfiguration *cfg);

/**
 * Number of tokens, or 0 for null.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t attn_configuration_len(const AttnConfiguration *cfg);

/**
 * Ambient dimension, or 0 for null.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t attn_configuration_dim(const AttnConfiguration *cfg);

/**
 * Copies the `n * d` row-major coordinates.
 *
 * # Safety
 * `cfg` must be a live handle and `out` must hold `len` doubles.
 */
AttnStatus attn_configuration_coords(const AttnConfiguration *cfg,
                                     double *out,
                                     size_t len,
                                     size_t *needed);

/**
 * Row-major `n * d` velocity field at `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` must hold `len` doubles.
 */
AttnStatus attn_velocity(const AttnConfiguration *cfg,
                         AttnModel model,
                         double beta,
                         double *out,
                         size_t len);

/**
 * Interaction energy of `cfg` at inverse temperature `beta`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid.
 */
AttnStatus attn_interaction_energy(const AttnConfiguration *cfg, double beta, double *out);

/**
 * Integrates `cfg` to `t_final`, recording every diagnostic each
 * `record_every` steps (0 picks a default).
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid.
 */
AttnStatus attn_integrate(const AttnConfiguration *cfg,
                          AttnModel model,
                          double beta,
                          AttnMethod method,
                          double dt,
                          double t_final,
                          size_t record_every,
                          double tau,
                          AttnTrajectory **out);

/**
 * # Safety
 * `traj` must come from this library and not be used afterwards. Null is a no-op.
 */
void attn_trajectory_free(AttnTrajectory *traj);

/**
 * Number of recorded times, or 0 for null.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t attn_trajectory_len(const AttnTrajectory *traj);

/**
 * # Safety
 * `traj` must be a live handle and `out` must hold `len` doubles.
 */
AttnStatus attn_trajectory_times(const AttnTrajectory *traj,
                                 double *out,
                                 size_t len,
                                 size_t *needed);

/**
 * One recorded series by name, e.g. `"energy"`, `"min_pairwise"`,
 * `"cluster_count"`, `"order_parameter"`.
 *
 * # Safety
 * `traj` must be a live handle, `name` a NUL-terminated string and `out` must
 * hold `len` doubles.
 */
AttnStatus attn_trajectory_series(const AttnTrajectory *traj,
                                  const char *name,
                                  double *out,
                                  size_t len,
                                  size_t *needed);

/**
 * A new configuration handle holding the final state.
 *
 * # Safety
 * `traj` must be a live handle and `out` valid.
 */
AttnStatus attn_trajectory_final(const AttnTrajectory *traj, AttnConfiguration **out);

/**
 * First time the equiangular reduction reaches `rho >= tau`.
 * `ATTN_STATUS_UNREACHABLE` when it never does.
 *
 * # Safety
 * `out` must be valid.
 */
AttnStatus attn_threshold_crossing_time(AttnModel model,
                                        size_t n,
                                        double beta,
                                        double rho0,
                                        double tau,
                                        double *out);

/**
 * Output correlation of one attention layer with `beta = gamma ln n`.
 *
 * # Safety
 * `out` must be valid.
 */
AttnStatus attn_longcontext_correlation(double rho, double gamma, double n, double *out);

/**
 * Runs the experiment described by a config file and writes its artifacts to
 * the config's `output` (or `fallback_output` when the config has none).
 * `jobs = 0` uses all cores.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `fallback_output` may be null when
 * the config names an output.
 */
AttnStatus attn_run_config(const char *config_path, const char *fallback_output, size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTNSPHERE_H */
