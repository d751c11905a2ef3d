#ifndef GAINBUDGET_H
#define GAINBUDGET_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum GbStatus {
  GB_STATUS_OK = 0,
  GB_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  GB_STATUS_INVALID_UTF8 = 2,
  GB_STATUS_CONTRACT = 3,
  GB_STATUS_RANGE = 4,
  GB_STATUS_INFEASIBLE = 5,
  GB_STATUS_INVALID_CONFIG = 6,
  GB_STATUS_NON_FINITE = 7,
  GB_STATUS_IO = 8,
  GB_STATUS_JSON = 9,
  /**
   * A run finished but at least one window bound failed.
   */
  GB_STATUS_BOUND_VIOLATION = 10,
  GB_STATUS_PANIC = 99,
} GbStatus;

/**
 * Opaque recurrent policy.
 */
typedef struct GbPolicy GbPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *gb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gb_version(void);

/**
 * # Safety
 * `s` must be null or a pointer returned by this library.
 */
void gb_string_free(char *s);

/**
 * Certified ℓ2 gain of the prestabilized point mass.
 *
 * # Safety
 * `gamma_hat_out` must point to writable memory.
 */
enum GbStatus gb_point_mass_gain(double m,
                                 double ts,
                                 double b1,
                                 double b2,
                                 double k1,
                                 double k2,
                                 double *gamma_hat_out);

/**
 * Certified ℓ2 gain of `x⁺ = A x + B d`; `a` is n×n and `b` is n×k, both row-major.
 *
 * # Safety
 * `a` must hold `n*n` values, `b` must hold `n*k` values.
 */
enum GbStatus gb_certify_linear(const double *a,
                                size_t n,
                                const double *b,
                                size_t k,
                                double *gamma_hat_out);

/**
 * Random policy with balanced caps at `gamma_bar`, weights at `init_frac` of each cap.
 *
 * # Safety
 * `out` must point to writable memory.
 */
enum GbStatus gb_policy_random(size_t n,
                               size_t m,
                               size_t h,
                               double gamma_bar,
                               double s_rec,
                               double init_frac,
                               uint64_t seed,
                               struct GbPolicy **out);

/**
 * Loads a policy checkpoint.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must point to writable memory.
 */
enum GbStatus gb_policy_from_json(const char *json, struct GbPolicy **out);

/**
 * Serializes a policy checkpoint; free the result with [`gb_string_free`].
 *
 * # Safety
 * `p` must be a live handle; `out` must point to writable memory.
 */
enum GbStatus gb_policy_to_json(const struct GbPolicy *p, char **out);

/**
 * # Safety
 * `p` must be a live handle; each out pointer must be null or writable.
 */
enum GbStatus gb_policy_dims(const struct GbPolicy *p, size_t *n, size_t *m, size_t *h);

/**
 * Certified ℓ2 gain of the policy under its current caps.
 *
 * # Safety
 * `p` must be a live handle; `out` must point to writable memory.
 */
enum GbStatus gb_policy_certified_gain(const struct GbPolicy *p, double *out);

/**
 * Projects the weights so the certified gain is at most `gamma`.
 *
 * # Safety
 * `p` must be a live handle.
 */
enum GbStatus gb_policy_project(struct GbPolicy *p, double gamma);

/**
 * One step: reads `z` (length n), writes `u` (length m), advances the hidden state.
 *
 * # Safety
 * `z` must hold `z_len` values and `u` must have room for `u_len` values.
 */
enum GbStatus gb_policy_step(struct GbPolicy *p,
                             const double *z,
                             size_t z_len,
                             double *u,
                             size_t u_len);

/**
 * Zeroes the hidden state.
 *
 * # Safety
 * `p` must be a live handle.
 */
enum GbStatus gb_policy_reset(struct GbPolicy *p);

/**
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void gb_policy_free(struct GbPolicy *p);

/**
 * Runs the experiment described by a JSON config and returns the run summary
 * as JSON (free with [`gb_string_free`]). Output files are written only when the
 * config names an `output_dir`. Returns `BoundViolation` with the summary still
 * filled in if any window bound failed.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `summary_out` must point to writable memory.
 */
enum GbStatus gb_run_experiment(const char *config_json, char **summary_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAINBUDGET_H */
