#ifndef MTL_WAVENET_H
#define MTL_WAVENET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Condition mode of a loaded model.
 */
typedef enum {
  MTWN_MODE_LINGUISTIC = 0,
  MTWN_MODE_LINGUISTIC_PLUS_F0 = 1,
  MTWN_MODE_MTL = 2,
} MtwnMode;

/**
 * Result of every fallible call.
 */
typedef enum {
  MTWN_STATUS_OK = 0,
  MTWN_STATUS_NULL_POINTER = 1,
  MTWN_STATUS_INVALID_ARGUMENT = 2,
  MTWN_STATUS_DIMENSION = 3,
  MTWN_STATUS_NUMERIC = 4,
  MTWN_STATUS_IO = 5,
  MTWN_STATUS_FORMAT = 6,
  MTWN_STATUS_BUFFER_TOO_SMALL = 7,
  MTWN_STATUS_INTERNAL = 8,
} MtwnStatus;

/**
 * Opaque model handle.
 */
typedef struct MtwnModel MtwnModel;

typedef struct {
  MtwnMode mode;
  /**
   * Rows of the linguistic feature matrix.
   */
  size_t linguistic_dim;
  /**
   * Output samples per frame.
   */
  size_t frame_shift;
  size_t receptive_field;
} MtwnModelInfo;

/**
 * `argmax` non-zero picks the most likely bin; otherwise bins are drawn at
 * `temperature` from a generator seeded with `seed`.
 */
typedef struct {
  int32_t argmax;
  double temperature;
  uint64_t seed;
} MtwnSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library from the same thread.
 */
const char *mtwn_last_error(void);

/**
 * Library version, static storage.
 */
const char *mtwn_version(void);

/**
 * Loads a checkpoint or model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
MtwnStatus mtwn_model_load(const char *path, MtwnModel **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`mtwn_model_load`] and not be used afterwards.
 */
void mtwn_model_free(MtwnModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
MtwnStatus mtwn_model_info(const MtwnModel *model, MtwnModelInfo *out);

/**
 * Synthesizes `n_frames · frame_shift` samples in [−1, 1].
 *
 * `linguistic` is row-major `[linguistic_dim × n_frames]`. `logf0` (natural
 * log Hz) and `vuv` (0 or 1) hold `n_frames` values each; they are required
 * for linguistic+F0 models and ignored otherwise, so may be null. When
 * `out_capacity` is too small, nothing is generated, `*out_len` is set to
 * the required length and `BufferTooSmall` is returned.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out_len` must be writable.
 */
MtwnStatus mtwn_synthesize(const MtwnModel *model,
                           const double *linguistic,
                           size_t n_frames,
                           const double *logf0,
                           const double *vuv,
                           const MtwnSampler *sampler,
                           uint32_t sample_rate,
                           double *out,
                           size_t out_capacity,
                           size_t *out_len);

/**
 * μ-law bin of `x` in [−1, 1].
 *
 * # Safety
 * `out` must be writable.
 */
MtwnStatus mtwn_mulaw_encode(double x, uint8_t *out);

/**
 * Amplitude of μ-law bin `bin` (0..=255).
 *
 * # Safety
 * `out` must be writable.
 */
MtwnStatus mtwn_mulaw_decode(uint32_t bin, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTL_WAVENET_H */
