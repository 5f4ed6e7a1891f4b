#ifndef R3DM_H
#define R3DM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum R3dmStatus {
  R3DM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  R3DM_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument, shape or configuration.
   */
  R3DM_STATUS_CONFIG = 2,
  R3DM_STATUS_IO = 3,
  R3DM_STATUS_NUMERICAL = 4,
  R3DM_STATUS_EXTERNAL_MODEL = 5,
  R3DM_STATUS_PANIC = 6,
} R3dmStatus;

typedef enum R3dmPhantomKind {
  R3DM_PHANTOM_KIND_TUBES = 0,
  R3DM_PHANTOM_KIND_ELLIPSOIDS = 1,
  R3DM_PHANTOM_KIND_GAUSSIAN_FIELD = 2,
} R3dmPhantomKind;

typedef enum R3dmMaskKind {
  R3DM_MASK_KIND_UNIFORM = 0,
  R3DM_MASK_KIND_GAUSSIAN = 1,
  R3DM_MASK_KIND_FULL = 2,
} R3dmMaskKind;

typedef enum R3dmStepMode {
  R3DM_STEP_MODE_POWER_ITERATION = 0,
  R3DM_STEP_MODE_PAPER_FORMULA = 1,
  R3DM_STEP_MODE_FIXED = 2,
} R3dmStepMode;

typedef enum R3dmModelKind {
  R3DM_MODEL_KIND_ZERO = 0,
  R3DM_MODEL_KIND_GAUSSIAN = 1,
  R3DM_MODEL_KIND_TWEEDIE_DCT = 2,
} R3dmModelKind;

typedef enum R3dmMethod {
  R3DM_METHOD_ZERO_FILLED = 0,
  R3DM_METHOD_PGD = 1,
  R3DM_METHOD_R3DM = 2,
} R3dmMethod;

/**
 * Opaque undersampling mask.
 */
typedef struct R3dmMask R3dmMask;

/**
 * Opaque undersampled measurement (masked k-space plus mask).
 */
typedef struct R3dmMeasurement R3dmMeasurement;

/**
 * Opaque real or complex image volume.
 */
typedef struct R3dmVolume R3dmVolume;

/**
 * Reconstruction parameters; start from [`r3dm_recon_params_default`].
 */
typedef struct R3dmReconParams {
  /**
   * Diffusion steps T.
   */
  size_t steps;
  /**
   * Proximal-gradient iterations per diffusion step.
   */
  size_t inner_iters;
  double alpha;
  double rho;
  /**
   * Nonzero enables the smoothness term.
   */
  int32_t tv_on;
  enum R3dmStepMode step_mode;
  /**
   * Step size for `Fixed` mode.
   */
  double lambda;
  uint64_t seed;
  enum R3dmModelKind model;
  /**
   * Threshold multiplier of the DCT prior.
   */
  double dct_c;
  double gaussian_mean;
  double gaussian_var;
} R3dmReconParams;

/**
 * Scalar image metrics.
 */
typedef struct R3dmMetrics {
  /**
   * Infinite for identical volumes.
   */
  double psnr;
  double ssim;
} R3dmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *r3dm_version(void);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *r3dm_last_error(void);

/**
 * # Safety
 * `data` must point to `len` doubles and `out` must be writable.
 */
enum R3dmStatus r3dm_volume_from_real(size_t slices,
                                      size_t n,
                                      const double *data,
                                      size_t len,
                                      struct R3dmVolume **out);

/**
 * `data` holds `2 * slices * n * n` interleaved doubles.
 *
 * # Safety
 * `data` must point to `len` doubles and `out` must be writable.
 */
enum R3dmStatus r3dm_volume_from_complex(size_t slices,
                                         size_t n,
                                         const double *data,
                                         size_t len,
                                         struct R3dmVolume **out);

/**
 * # Safety
 * `vol` must be a live handle or null.
 */
void r3dm_volume_free(struct R3dmVolume *vol);

/**
 * # Safety
 * `vol` must be a live handle; `slices` and `n` must be writable.
 */
enum R3dmStatus r3dm_volume_shape(const struct R3dmVolume *vol, size_t *slices, size_t *n);

/**
 * Copies interleaved complex values; `len` must be `2 * slices * n * n`.
 *
 * # Safety
 * `vol` must be a live handle and `out` must hold `len` doubles.
 */
enum R3dmStatus r3dm_volume_copy_complex(const struct R3dmVolume *vol, double *out, size_t len);

/**
 * Copies voxel magnitudes; `len` must be `slices * n * n`.
 *
 * # Safety
 * `vol` must be a live handle and `out` must hold `len` doubles.
 */
enum R3dmStatus r3dm_volume_copy_magnitude(const struct R3dmVolume *vol, double *out, size_t len);

/**
 * Reads a `.raw` volume with its `.json` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum R3dmStatus r3dm_volume_read(const char *path, struct R3dmVolume **out);

/**
 * Writes a complex64 `.raw` volume and sidecar.
 *
 * # Safety
 * `vol` must be a live handle and `path` a NUL-terminated string.
 */
enum R3dmStatus r3dm_volume_write(const struct R3dmVolume *vol, const char *path);

/**
 * Synthetic phantom with default shape parameters for the given kind.
 *
 * # Safety
 * `out` must be writable.
 */
enum R3dmStatus r3dm_phantom_generate(enum R3dmPhantomKind kind,
                                      size_t slices,
                                      size_t n,
                                      uint64_t seed,
                                      struct R3dmVolume **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum R3dmStatus r3dm_mask_generate(enum R3dmMaskKind kind,
                                   size_t n,
                                   double accel,
                                   double center_frac,
                                   uint64_t seed,
                                   struct R3dmMask **out);

/**
 * Mask from an `n * n` row-major 0/1 pattern.
 *
 * # Safety
 * `pattern` must hold `len` bytes and `out` must be writable.
 */
enum R3dmStatus r3dm_mask_from_pattern(size_t n,
                                       const uint8_t *pattern,
                                       size_t len,
                                       struct R3dmMask **out);

/**
 * # Safety
 * `mask` must be a live handle; `n` and `sampled` must be writable.
 */
enum R3dmStatus r3dm_mask_info(const struct R3dmMask *mask, size_t *n, size_t *sampled);

/**
 * # Safety
 * `mask` must be a live handle or null.
 */
void r3dm_mask_free(struct R3dmMask *mask);

/**
 * Simulates masked k-space with complex noise of standard deviation `sigma`.
 *
 * # Safety
 * `gt` and `mask` must be live handles and `out` writable.
 */
enum R3dmStatus r3dm_acquire(const struct R3dmVolume *gt,
                             const struct R3dmMask *mask,
                             double sigma,
                             uint64_t seed,
                             struct R3dmMeasurement **out);

/**
 * # Safety
 * `meas` must be a live handle or null.
 */
void r3dm_measurement_free(struct R3dmMeasurement *meas);

struct R3dmReconParams r3dm_recon_params_default(void);

/**
 * Reconstructs with the given method. `params` may be null for defaults.
 *
 * # Safety
 * `meas` must be a live handle, `params` null or valid, `out` writable.
 */
enum R3dmStatus r3dm_reconstruct(const struct R3dmMeasurement *meas,
                                 const struct R3dmReconParams *params,
                                 enum R3dmMethod method,
                                 struct R3dmVolume **out);

/**
 * Reconstructs with a full JSON configuration, the same document the
 * command line accepts through `--config`. This is the only route to the
 * external score model.
 *
 * # Safety
 * `meas` must be a live handle, `config_json` a NUL-terminated string and
 * `out` writable.
 */
enum R3dmStatus r3dm_reconstruct_json(const struct R3dmMeasurement *meas,
                                      const char *config_json,
                                      enum R3dmMethod method,
                                      struct R3dmVolume **out);

/**
 * 3D PSNR and SSIM of `recon` against `gt`, each normalized by its maximum.
 *
 * # Safety
 * `gt` and `recon` must be live handles and `out` writable.
 */
enum R3dmStatus r3dm_metrics(const struct R3dmVolume *gt,
                             const struct R3dmVolume *recon,
                             struct R3dmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* R3DM_H */
