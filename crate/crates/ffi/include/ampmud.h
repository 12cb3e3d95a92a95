#ifndef AMPMUD_H
#define AMPMUD_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define AMPMUD_DECODER_SOFT 0

#define AMPMUD_DECODER_RBS 1

#define AMPMUD_DECODER_BS 2

typedef enum AmpmudStatus {
  AMPMUD_STATUS_OK = 0,
  AMPMUD_STATUS_NULL_POINTER = 1,
  AMPMUD_STATUS_INVALID_ARGUMENT = 2,
  AMPMUD_STATUS_INVALID_CONFIG = 3,
  AMPMUD_STATUS_NUMERICAL_DIVERGENCE = 4,
  AMPMUD_STATUS_RESOURCE = 5,
  AMPMUD_STATUS_IO = 6,
  AMPMUD_STATUS_PANIC = 7,
} AmpmudStatus;

/**
 * Frontier rows of a rate search.
 */
typedef struct AmpmudFrontier AmpmudFrontier;

/**
 * A state-evolution trajectory.
 */
typedef struct AmpmudSe AmpmudSe;

/**
 * A validated experiment spec.
 */
typedef struct AmpmudSpec AmpmudSpec;

/**
 * Rows of an Eb/N0 sweep.
 */
typedef struct AmpmudSweep AmpmudSweep;

typedef struct AmpmudPointStats {
  uint32_t decoder;
  double ebn0_db;
  double rate;
  size_t channel_uses;
  size_t trials;
  size_t diverged;
  uint64_t block_errors;
  uint64_t decisions;
  double bler;
  double ci_lo;
  double ci_hi;
  double mean_iterations;
  bool stopped_early;
} AmpmudPointStats;

/**
 * `rate`, `channel_uses` and `ci_hi` are NaN / 0 / NaN when infeasible.
 */
typedef struct AmpmudFrontierRow {
  uint32_t decoder;
  double ebn0_db;
  double target_pe;
  bool feasible;
  double rate;
  size_t channel_uses;
  double ci_hi;
} AmpmudFrontierRow;

/**
 * One operating point for single trials and state evolution.
 */
typedef struct AmpmudSystem {
  size_t devices;
  uint32_t bits;
  double rate;
  double ebn0_db;
  double noise_var;
} AmpmudSystem;

typedef struct AmpmudTrialOutcome {
  size_t block_errors;
  size_t devices;
  size_t iterations;
  bool converged;
} AmpmudTrialOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *ampmud_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *ampmud_last_error_message(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer returned by this library, not yet freed.
 */
void ampmud_string_free(char *s);

/**
 * Parses and validates an experiment spec (or manifest) from JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AmpmudStatus ampmud_spec_from_json(const char *json, struct AmpmudSpec **out);

/**
 * Serializes a spec to pretty JSON. Free the result with
 * [`ampmud_string_free`].
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum AmpmudStatus ampmud_spec_to_json(const struct AmpmudSpec *spec, char **out);

/**
 * # Safety
 * `spec` must be a live handle.
 */
enum AmpmudStatus ampmud_spec_set_seed(struct AmpmudSpec *spec, uint64_t seed);

/**
 * # Safety
 * `spec` must be a live handle.
 */
enum AmpmudStatus ampmud_spec_set_trials(struct AmpmudSpec *spec, size_t trials);

/**
 * # Safety
 * `spec` must be null or a handle not yet freed.
 */
void ampmud_spec_free(struct AmpmudSpec *spec);

/**
 * Runs an Eb/N0 sweep. The spec must hold an `EbN0Grid` sweep.
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum AmpmudStatus ampmud_sweep_run(const struct AmpmudSpec *spec, struct AmpmudSweep **out);

/**
 * # Safety
 * `sweep` must be null or a live handle.
 */
size_t ampmud_sweep_len(const struct AmpmudSweep *sweep);

/**
 * # Safety
 * `sweep` must be a live handle; `out` must be writable.
 */
enum AmpmudStatus ampmud_sweep_row(const struct AmpmudSweep *sweep,
                                   size_t index,
                                   struct AmpmudPointStats *out);

/**
 * # Safety
 * `sweep` must be null or a handle not yet freed.
 */
void ampmud_sweep_free(struct AmpmudSweep *sweep);

/**
 * Runs a rate search. The spec must hold a `RateSearch` sweep.
 *
 * # Safety
 * `spec` must be a live handle; `out` must be writable.
 */
enum AmpmudStatus ampmud_frontier_run(const struct AmpmudSpec *spec, struct AmpmudFrontier **out);

/**
 * # Safety
 * `frontier` must be null or a live handle.
 */
size_t ampmud_frontier_len(const struct AmpmudFrontier *frontier);

/**
 * # Safety
 * `frontier` must be a live handle; `out` must be writable.
 */
enum AmpmudStatus ampmud_frontier_row(const struct AmpmudFrontier *frontier,
                                      size_t index,
                                      struct AmpmudFrontierRow *out);

/**
 * # Safety
 * `frontier` must be null or a handle not yet freed.
 */
void ampmud_frontier_free(struct AmpmudFrontier *frontier);

/**
 * State evolution of `decoder` at `system` over `iterations` steps. `seed`
 * drives the Monte Carlo used by the block decoder; `system.devices` is
 * ignored.
 *
 * # Safety
 * `system` must be readable; `out` must be writable.
 */
enum AmpmudStatus ampmud_se_run(const struct AmpmudSystem *system,
                                uint32_t decoder,
                                double soft_alpha,
                                size_t iterations,
                                uint64_t seed,
                                struct AmpmudSe **out);

/**
 * Number of points, `iterations + 1`.
 *
 * # Safety
 * `se` must be null or a live handle.
 */
size_t ampmud_se_len(const struct AmpmudSe *se);

/**
 * `tau_t^2` and the multiuser efficiency at step `t`.
 *
 * # Safety
 * `se` must be a live handle; `tau2` and `xi` must be writable.
 */
enum AmpmudStatus ampmud_se_point(const struct AmpmudSe *se, size_t t, double *tau2, double *xi);

/**
 * # Safety
 * `se` must be null or a handle not yet freed.
 */
void ampmud_se_free(struct AmpmudSe *se);

/**
 * Runs trial `trial` of the seeded ensemble at `system`: fresh dense
 * codebook, messages and noise derived from `master_seed`.
 *
 * # Safety
 * `system` must be readable; `out` must be writable.
 */
enum AmpmudStatus ampmud_trial_run(const struct AmpmudSystem *system,
                                   uint32_t decoder,
                                   double soft_alpha,
                                   size_t max_iterations,
                                   uint64_t master_seed,
                                   uint64_t trial,
                                   struct AmpmudTrialOutcome *out);

/**
 * Applies a denoiser to `len` entries of `v` and reports its divergence.
 * `bits` sets the block length `2^bits` of the block decoder and the
 * activity `2^-bits` of the separable one; `len` must be a multiple of the
 * block length for the block decoder.
 *
 * # Safety
 * `v` and `out` must point to `len` doubles; `divergence` must be writable
 * or null.
 */
enum AmpmudStatus ampmud_denoise(uint32_t decoder,
                                 double power,
                                 uint32_t bits,
                                 double soft_alpha,
                                 const double *v,
                                 size_t len,
                                 double tau2,
                                 double *out,
                                 double *divergence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMPMUD_H */
