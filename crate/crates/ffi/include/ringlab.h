#ifndef RINGLAB_H
#define RINGLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RlStatus {
  RL_STATUS_OK = 0,
  RL_STATUS_NULL_POINTER = 1,
  RL_STATUS_INVALID_ARGUMENT = 2,
  RL_STATUS_UNSUPPORTED_SIZE = 3,
  RL_STATUS_NUMERICAL = 4,
  RL_STATUS_FORMAT = 5,
  RL_STATUS_CONFIG = 6,
  RL_STATUS_IO = 7,
  RL_STATUS_PANIC = 8,
} RlStatus;

/**
 * Opaque latent tensor.
 */
typedef struct RlLatent RlLatent;

/**
 * Opaque analytic mixture model.
 */
typedef struct RlModel RlModel;

/**
 * Opaque ring mask and key.
 */
typedef struct RlWatermark RlWatermark;

/**
 * Watermark extraction metrics.
 */
typedef struct RlMetrics {
  double mean_l1;
  double nmae;
  double nmse;
} RlMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rl_last_error(char *buf, size_t len);

/**
 * Zero latent of shape `channels × height × width`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum RlStatus rl_latent_new(size_t channels, size_t height, size_t width, struct RlLatent **out);

/**
 * Standard normal latent from the `(seed, stream)` generator.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum RlStatus rl_latent_sample(uint64_t seed,
                               uint64_t stream,
                               size_t channels,
                               size_t height,
                               size_t width,
                               struct RlLatent **out);

/**
 * # Safety
 * `latent` must be null or a handle from this library, freed at most once.
 */
void rl_latent_free(struct RlLatent *latent);

/**
 * # Safety
 * Pointers must be valid; output pointers may be null.
 */
enum RlStatus rl_latent_shape(const struct RlLatent *latent,
                              size_t *channels,
                              size_t *height,
                              size_t *width);

/**
 * Copies the row-major values (channel, row, column) into `buf`, which
 * must hold exactly `C·H·W` values.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum RlStatus rl_latent_read_values(const struct RlLatent *latent, double *buf, size_t len);

/**
 * Overwrites the latent's values from `buf` (`C·H·W` doubles).
 *
 * # Safety
 * `latent` must be a live handle and `buf` must point to `len` doubles.
 */
enum RlStatus rl_latent_write_values(struct RlLatent *latent, const double *buf, size_t len);

/**
 * Loads an `RLT1` file.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum RlStatus rl_latent_load(const char *file, struct RlLatent **out);

/**
 * Saves an `RLT1` file.
 *
 * # Safety
 * `latent` must be a live handle; `file` a NUL-terminated string.
 */
enum RlStatus rl_latent_save(const struct RlLatent *latent, const char *file);

/**
 * Hermitian ring watermark for `height × width` planes.
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum RlStatus rl_watermark_new(size_t height,
                               size_t width,
                               double radius,
                               size_t channel,
                               uint64_t key_seed,
                               struct RlWatermark **out);

/**
 * # Safety
 * `wm` must be null or a handle from this library, freed at most once.
 */
void rl_watermark_free(struct RlWatermark *wm);

/**
 * Writes the key into a copy of `latent`.
 *
 * # Safety
 * Handles must be live; `out` a valid handle slot.
 */
enum RlStatus rl_watermark_embed(const struct RlWatermark *wm,
                                 const struct RlLatent *latent,
                                 struct RlLatent **out);

/**
 * Distance of the latent's ring spectrum to the key.
 *
 * # Safety
 * Handles must be live; `metrics` must be writable.
 */
enum RlStatus rl_watermark_score(const struct RlWatermark *wm,
                                 const struct RlLatent *latent,
                                 struct RlMetrics *metrics);

/**
 * The default low-frequency mixture at the given shape.
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum RlStatus rl_model_default(size_t channels,
                               size_t height,
                               size_t width,
                               uint64_t seed,
                               struct RlModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed at most once.
 */
void rl_model_free(struct RlModel *model);

/**
 * Number of mixture components.
 *
 * # Safety
 * `model` must be a live handle and `count` writable.
 */
enum RlStatus rl_model_components(const struct RlModel *model, size_t *count);

/**
 * Euler sampling from noise to data under component `k` with guidance.
 *
 * # Safety
 * Handles must be live; `out` a valid handle slot.
 */
enum RlStatus rl_rf_sample(const struct RlModel *model,
                           const struct RlLatent *noise,
                           size_t k,
                           double guidance_scale,
                           size_t steps,
                           struct RlLatent **out);

/**
 * Implicit (backward Euler) inversion from data to noise. `converged`
 * may be null.
 *
 * # Safety
 * Handles must be live; `out` a valid handle slot.
 */
enum RlStatus rl_rf_invert(const struct RlModel *model,
                           const struct RlLatent *sample,
                           size_t k,
                           double guidance_scale,
                           size_t steps,
                           bool *converged,
                           struct RlLatent **out);

/**
 * ROC AUC with watermarked distances expected to be the smaller ones.
 *
 * # Safety
 * Arrays must hold the stated number of doubles; `auc` must be writable.
 */
enum RlStatus rl_roc_auc(const double *watermarked,
                         size_t n_watermarked,
                         const double *clean,
                         size_t n_clean,
                         double *auc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RINGLAB_H */
