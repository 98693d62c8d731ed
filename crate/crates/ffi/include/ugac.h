#ifndef UGAC_H
#define UGAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. The nonzero core codes match the CLI exit codes.
 */
typedef enum UgacStatus {
  UGAC_STATUS_OK = 0,
  /**
   * Bad argument value, configuration, or checkpoint metadata.
   */
  UGAC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or malformed file, or mismatched sizes.
   */
  UGAC_STATUS_DATA_ERROR = 3,
  /**
   * Out-of-domain input or a non-finite result.
   */
  UGAC_STATUS_NUMERICAL_ERROR = 4,
  /**
   * A required pointer was NULL.
   */
  UGAC_STATUS_NULL_POINTER = 5,
  /**
   * Internal panic caught at the boundary.
   */
  UGAC_STATUS_PANIC = 6,
} UgacStatus;

/**
 * A trained A-to-B generator loaded from a checkpoint.
 */
typedef struct UgacGenerator UgacGenerator;

/**
 * Per-pixel maps from `ugac_generator_uncertainty`. Each non-NULL pointer
 * must have room for `width * height` doubles; NULL fields are skipped.
 */
typedef struct UgacUncertaintyMaps {
  double *mean_prediction;
  double *alpha;
  double *beta;
  double *sigma_aleatoric;
  double *sigma_epistemic;
  double *sigma_total;
} UgacUncertaintyMaps;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * Valid until the next call into this library on the same thread.
 */
const char *ugac_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ugac_version(void);

/**
 * `ln Γ(x)` for `x > 0`.
 *
 * # Safety
 * `out` must be NULL or point to a writable double.
 */
enum UgacStatus ugac_lgamma(double x, double *out);

/**
 * `ψ(x)` for `x > 0`.
 *
 * # Safety
 * `out` must be NULL or point to a writable double.
 */
enum UgacStatus ugac_digamma(double x, double *out);

/**
 * Log-density of the generalized Gaussian with location `mu`.
 *
 * # Safety
 * `out` must be NULL or point to a writable double.
 */
enum UgacStatus ugac_ggd_logpdf(double x, double mu, double alpha, double beta, double *out);

/**
 * Closed-form variance `α² Γ(3/β) / Γ(1/β)`.
 *
 * # Safety
 * `out` must be NULL or point to a writable double.
 */
enum UgacStatus ugac_ggd_variance(double alpha, double beta, double *out);

/**
 * Mean adaptive cycle loss over `n` pixels. When `grad_recon`,
 * `grad_alpha`, or `grad_beta` is non-NULL it receives `n` partials.
 *
 * # Safety
 * The four inputs must hold `n` doubles; non-NULL gradients must have room for `n`.
 */
enum UgacStatus ugac_l_alpha_beta(const double *recon,
                                  const double *alpha,
                                  const double *beta,
                                  const double *target,
                                  size_t n,
                                  double *out,
                                  double *grad_recon,
                                  double *grad_alpha,
                                  double *grad_beta);

/**
 * PSNR in dB with peak value `max_i`; identical images give +infinity.
 *
 * # Safety
 * `x` and `y` must hold `width * height` doubles.
 */
enum UgacStatus ugac_psnr(const double *x,
                          const double *y,
                          size_t width,
                          size_t height,
                          double max_i,
                          double *out);

/**
 * Mean SSIM (11x11 Gaussian window, σ = 1.5, dynamic range 1).
 *
 * # Safety
 * `x` and `y` must hold `width * height` doubles.
 */
enum UgacStatus ugac_ssim(const double *x,
                          const double *y,
                          size_t width,
                          size_t height,
                          double *out);

/**
 * Loads the A-to-B generator of a training checkpoint. Release it with
 * `ugac_generator_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum UgacStatus ugac_generator_load(const char *path, struct UgacGenerator **out);

/**
 * Image sides must be multiples of this value.
 *
 * # Safety
 * `g` must come from `ugac_generator_load`.
 */
enum UgacStatus ugac_generator_size_multiple(const struct UgacGenerator *g, size_t *out);

/**
 * Deterministic translation (dropout off) of one image into `output`.
 *
 * # Safety
 * `g` must come from `ugac_generator_load`; `input` and `output` must hold
 * `width * height` doubles.
 */
enum UgacStatus ugac_generator_translate(const struct UgacGenerator *g,
                                         const double *input,
                                         size_t width,
                                         size_t height,
                                         double *output_image);

/**
 * Monte Carlo dropout with `passes >= 2` stochastic forward passes seeded
 * by `seed`.
 *
 * # Safety
 * `g` must come from `ugac_generator_load`; `input` must hold
 * `width * height` doubles; see `UgacUncertaintyMaps` for the outputs.
 */
enum UgacStatus ugac_generator_uncertainty(const struct UgacGenerator *g,
                                           const double *input,
                                           size_t width,
                                           size_t height,
                                           size_t passes,
                                           uint64_t seed,
                                           const struct UgacUncertaintyMaps *maps);

/**
 * Releases a generator. NULL is a no-op.
 *
 * # Safety
 * `g` must come from `ugac_generator_load` and not be used afterwards.
 */
void ugac_generator_free(struct UgacGenerator *g);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UGAC_H */
