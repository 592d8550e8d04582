/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef BAYESDID_H
#define BAYESDID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Standard Gaussian-process sampler.
 */
#define BDID_METHOD_BAYES 0

/**
 * Double-robust sampler with prior adjustment and posterior correction.
 */
#define BDID_METHOD_DR_BAYES 1

#define BDID_BASELINE_OR 0

#define BDID_BASELINE_DR 1

#define BDID_BASELINE_IPW_HT 2

#define BDID_BASELINE_IPW_HAJEK 3

/**
 * Status codes returned by every fallible function.
 */
typedef enum BdidStatus {
  BDID_STATUS_OK = 0,
  BDID_STATUS_NULL_POINTER = 1,
  BDID_STATUS_INVALID_INPUT = 2,
  BDID_STATUS_DATA_ERROR = 3,
  BDID_STATUS_ESTIMATION_ERROR = 4,
  BDID_STATUS_PANIC = 5,
} BdidStatus;

/**
 * Opaque ATT posterior.
 */
typedef struct BdidPosterior BdidPosterior;

/**
 * Opaque canonical DiD sample.
 */
typedef struct BdidSample BdidSample;

/**
 * Sampler settings; obtain defaults from [`bdid_config_default`].
 */
typedef struct BdidConfig {
  size_t draws;
  double c_varsigma;
  double alpha;
  uint64_t seed;
  bool sample_split;
  double ridge;
  /**
   * Fixed prior-adjustment scale; NaN selects the data-driven rule.
   */
  double varsigma_override;
} BdidConfig;

/**
 * Point estimate and credible interval of a posterior.
 */
typedef struct BdidSummary {
  double point;
  double ci_low;
  double ci_high;
  double alpha;
  /**
   * Prior-adjustment scale used; 0 for the standard sampler.
   */
  double varsigma;
  size_t draws;
} BdidSummary;

/**
 * Frequentist estimate with its standard error and Wald interval.
 */
typedef struct BdidEstimate {
  double estimate;
  double std_err;
  double ci_low;
  double ci_high;
} BdidEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *bdid_last_error_message(void);

/**
 * Default sampler settings: 5000 draws, `alpha = 0.05`, seed 0.
 */
struct BdidConfig bdid_config_default(void);

/**
 * Builds a sample from outcome changes `dy`, treatment flags `d` (nonzero
 * means treated) and row-major covariates `x`.
 *
 * # Safety
 * `dy` and `d` must point to `n` values and `x` to `n * p` values; `out`
 * must be writable. Release the result with [`bdid_sample_free`].
 */
enum BdidStatus bdid_sample_new(const double *dy,
                                const uint8_t *d,
                                const double *x,
                                size_t n,
                                size_t p,
                                struct BdidSample **out);

/**
 * Number of units in `sample`, or 0 for null.
 *
 * # Safety
 * `sample` must be null or a live handle from [`bdid_sample_new`].
 */
size_t bdid_sample_len(const struct BdidSample *sample);

/**
 * Releases a sample; null is ignored.
 *
 * # Safety
 * `sample` must be null or a handle from [`bdid_sample_new`] not yet freed.
 */
void bdid_sample_free(struct BdidSample *sample);

/**
 * Runs the sampler `method` (`BDID_METHOD_*`).
 *
 * # Safety
 * `sample` and `config` must be valid pointers and `out` writable. Release
 * the result with [`bdid_posterior_free`].
 */
enum BdidStatus bdid_run(const struct BdidSample *sample,
                         const struct BdidConfig *config,
                         uint32_t method,
                         struct BdidPosterior **out);

/**
 * Writes the point estimate and credible interval to `out`.
 *
 * # Safety
 * `post` must be a live posterior handle and `out` writable.
 */
enum BdidStatus bdid_posterior_summary(const struct BdidPosterior *post, struct BdidSummary *out);

/**
 * Copies up to `capacity` ATT draws into `buf` and stores the total number
 * of draws in `total`. With a null `buf` only `total` is written.
 *
 * # Safety
 * `post` must be a live posterior handle, `total` writable and `buf` null
 * or writable for `capacity` values.
 */
enum BdidStatus bdid_posterior_draws(const struct BdidPosterior *post,
                                     double *buf,
                                     size_t capacity,
                                     size_t *total);

/**
 * Releases a posterior; null is ignored.
 *
 * # Safety
 * `post` must be null or a handle from [`bdid_run`] not yet freed.
 */
void bdid_posterior_free(struct BdidPosterior *post);

/**
 * Runs a frequentist estimator (`BDID_BASELINE_*`) with a logit propensity
 * model penalized by `ridge`, reporting a `1 - alpha` Wald interval.
 *
 * # Safety
 * `sample` must be a live sample handle and `out` writable.
 */
enum BdidStatus bdid_baseline(const struct BdidSample *sample,
                              uint32_t baseline,
                              double alpha,
                              double ridge,
                              struct BdidEstimate *out);

/**
 * Two-way fixed-effects estimate on the two-period panel `(y1, y2, d, x)`
 * with unit-clustered standard errors.
 *
 * # Safety
 * `y1`, `y2` and `d` must point to `n` values, `x` to `n * p` values and
 * `out` must be writable.
 */
enum BdidStatus bdid_twfe(const double *y1,
                          const double *y2,
                          const uint8_t *d,
                          const double *x,
                          size_t n,
                          size_t p,
                          double alpha,
                          struct BdidEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAYESDID_H */
