#ifndef MICLOC_H
#define MICLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MiclocStatus {
  MICLOC_STATUS_OK = 0,
  MICLOC_STATUS_NULL_POINTER = 1,
  MICLOC_STATUS_DOMAIN = 2,
  MICLOC_STATUS_OUT_OF_RANGE = 3,
  MICLOC_STATUS_NO_PEAK = 4,
  MICLOC_STATUS_PARSE = 5,
  MICLOC_STATUS_VERSION = 6,
  MICLOC_STATUS_DIVERGED = 7,
  MICLOC_STATUS_CONFIG = 8,
  MICLOC_STATUS_AUDIO = 9,
  MICLOC_STATUS_IO = 10,
  MICLOC_STATUS_INVALID_UTF8 = 11,
  MICLOC_STATUS_PANIC = 12,
} MiclocStatus;

/**
 * Array geometry plus propagation medium.
 */
typedef struct MiclocArray MiclocArray;

/**
 * A trained azimuth model loaded from disk.
 */
typedef struct MiclocModel MiclocModel;

typedef struct MiclocTdoa {
  /**
   * Arrival time at microphone 1 minus microphone 0, seconds.
   */
  double tau21;
  /**
   * Arrival time at microphone 2 minus microphone 0, seconds.
   */
  double tau31;
} MiclocTdoa;

typedef struct MiclocLocation {
  double x;
  double y;
  /**
   * Degrees in [0, 360), measured at the reference microphone.
   */
  double azimuth_deg;
  double residual;
  bool converged;
  bool range_unreliable;
  uint64_t iterations;
} MiclocLocation;

typedef struct MiclocEstimate {
  struct MiclocTdoa tdoa;
  struct MiclocLocation location;
  /**
   * Model azimuth when a model was given, else the geometric one.
   */
  double azimuth_deg;
  bool model_applied;
} MiclocEstimate;

typedef struct MiclocDelay {
  /**
   * Seconds; positive when the second signal lags the first.
   */
  double tau_hat;
  int64_t peak_lag;
  double peak_value;
} MiclocDelay;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *micloc_version(void);

/**
 * Message for the last failed call on this thread ("" if none).
 */
const char *micloc_last_error(void);

/**
 * Distance resolution `c / fs` in metres.
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum MiclocStatus micloc_quantization_floor(double speed_of_sound, double sample_rate, double *out);

/**
 * Equilateral array with the given spacing (m) and speed of sound (m/s).
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum MiclocStatus micloc_array_new(double spacing, double speed_of_sound, struct MiclocArray **out);

/**
 * # Safety
 * `array` must be NULL or a handle from [`micloc_array_new`] not yet freed.
 */
void micloc_array_free(struct MiclocArray *array);

/**
 * Geometric source fit for one TDOA pair.
 *
 * # Safety
 * `array` must be a live handle; `out` must be valid for writes.
 */
enum MiclocStatus micloc_multilaterate(const struct MiclocArray *array,
                                       struct MiclocTdoa tdoa,
                                       double radius_bound,
                                       struct MiclocLocation *out);

/**
 * Loads a model file written by `micloc train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum MiclocStatus micloc_model_load(const char *path, struct MiclocModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`micloc_model_load`] not yet freed.
 */
void micloc_model_free(struct MiclocModel *model);

/**
 * Model azimuth in degrees for one TDOA pair.
 *
 * # Safety
 * `model` must be a live handle; `out_azimuth_deg` must be valid for writes.
 */
enum MiclocStatus micloc_model_predict(const struct MiclocModel *model,
                                       struct MiclocTdoa tdoa,
                                       double *out_azimuth_deg);

/**
 * Full pipeline on three synchronised channels of `len` samples each:
 * GCC-PHAT delays, geometric fit, then the model azimuth if `model` is not
 * NULL.
 *
 * # Safety
 * `channels` must point to 3 pointers, each valid for `len` reads; `array`
 * must be a live handle; `model` may be NULL; `out` must be valid for writes.
 */
enum MiclocStatus micloc_localize(const struct MiclocArray *array,
                                  const double *const *channels,
                                  size_t len,
                                  double sample_rate,
                                  const struct MiclocModel *model,
                                  double radius_bound,
                                  struct MiclocEstimate *out);

/**
 * GCC-PHAT delay of `y` relative to `x` within `±max_lag` samples.
 *
 * # Safety
 * `x` and `y` must be valid for `len` reads; `out` must be valid for writes.
 */
enum MiclocStatus micloc_gcc_phat(const double *x,
                                  const double *y,
                                  size_t len,
                                  double sample_rate,
                                  size_t max_lag,
                                  bool parabolic,
                                  struct MiclocDelay *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICLOC_H */
