#ifndef SMSRECON_H
#define SMSRECON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SMSR_OK 0

/**
 * Null pointer, bad UTF-8, invalid argument or configuration.
 */
#define SMSR_ERR_ARGUMENT 2

/**
 * Shape, data, evaluation and file errors.
 */
#define SMSR_ERR_DATA 3

#define SMSR_ERR_TRANSPORT 4

/**
 * Calibration or linear solver failure.
 */
#define SMSR_ERR_SOLVER 5

/**
 * A panic was caught at the boundary.
 */
#define SMSR_ERR_INTERNAL 6

#define SMSR_METHOD_ZERO_FILL 0

#define SMSR_METHOD_SLICE_GRAPPA 1

#define SMSR_METHOD_OCDI_ORACLE 2

#define SMSR_METHOD_OCDI_GRAPPA 3

/**
 * A simulated or loaded case: truth, scheme, mask and collapsed measurement.
 */
typedef struct SmsrCase SmsrCase;

/**
 * Calibrated slice-GRAPPA and in-plane kernels.
 */
typedef struct SmsrKernels SmsrKernels;

/**
 * Reconstructed k-space and RSS images, one per slice.
 */
typedef struct SmsrResult SmsrResult;

typedef struct SmsrPhantomParams {
  size_t rows;
  size_t cols;
  size_t b;
  size_t coils;
  size_t r;
  size_t acs_lines;
  uint64_t variant_seed;
  double noise_sigma;
  uint64_t noise_seed;
} SmsrPhantomParams;

typedef struct SmsrInferenceParams {
  size_t t_m;
  size_t t_u;
  size_t guidance_interval;
  /**
   * Ignored unless kernels are passed.
   */
  bool use_anchor;
  bool dc_enabled;
} SmsrInferenceParams;

typedef struct SmsrMetrics {
  double psnr;
  double ssim;
  double nmse;
  double scale;
} SmsrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *smsr_last_error_message(void);

/**
 * The standard phantom: 96x96, 3 slices, 4 coils, R = 2 with 32 ACS lines.
 */
struct SmsrPhantomParams smsr_phantom_params_default(void);

struct SmsrInferenceParams smsr_inference_params_default(void);

/**
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage.
 */
int32_t smsr_case_simulate(const struct SmsrPhantomParams *params, struct SmsrCase **out);

/**
 * Loads a case directory written by `smsr_case_write` or `smsrecon simulate`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` writable.
 */
int32_t smsr_case_read(const char *dir, struct SmsrCase **out);

/**
 * # Safety
 * `case` must be a live handle and `dir` a NUL-terminated string.
 */
int32_t smsr_case_write(const struct SmsrCase *case_, const char *dir);

/**
 * Slice count, coil count and grid shape of a case. Any output pointer may
 * be null.
 *
 * # Safety
 * `case` must be a live handle; non-null outputs must be writable.
 */
int32_t smsr_case_shape(const struct SmsrCase *case_,
                        size_t *b,
                        size_t *coils,
                        size_t *rows,
                        size_t *cols);

/**
 * # Safety
 * Accepts null; otherwise `case` must come from this library and not be
 * freed twice.
 */
void smsr_case_free(struct SmsrCase *case_);

/**
 * Calibrates kernels from the ACS band of a case. Pass zero window sizes and
 * a negative ridge for the defaults.
 *
 * # Safety
 * `case` must be a live handle and `out` writable.
 */
int32_t smsr_kernels_calibrate(const struct SmsrCase *case_,
                               size_t window_rows,
                               size_t window_cols,
                               double ridge,
                               struct SmsrKernels **out);

/**
 * Largest relative calibration residual over all kernels.
 *
 * # Safety
 * `kernels` must be a live handle and `out` writable.
 */
int32_t smsr_kernels_max_residual(const struct SmsrKernels *kernels, double *out);

/**
 * # Safety
 * Accepts null; otherwise the handle must not be freed twice.
 */
void smsr_kernels_free(struct SmsrKernels *kernels);

/**
 * Reconstructs every slice of `case` with one of the `SMSR_METHOD_*` methods.
 *
 * `kernels` is required for slice-GRAPPA and the calibrated pipeline and
 * optional for the oracle pipeline, where it only feeds the low-frequency
 * anchor. `params` may be null for the defaults; it is ignored by the
 * baseline methods.
 *
 * # Safety
 * Non-null pointers must be live handles or valid structs; `out` writable.
 */
int32_t smsr_reconstruct(const struct SmsrCase *case_,
                         uint32_t method,
                         const struct SmsrKernels *kernels,
                         const struct SmsrInferenceParams *params,
                         struct SmsrResult **out);

/**
 * Copies the RSS magnitude image of `slice` into `buf` (row-major,
 * `rows * cols` values).
 *
 * # Safety
 * `result` must be a live handle and `buf` valid for `len` writes.
 */
int32_t smsr_result_image(const struct SmsrResult *result, size_t slice, double *buf, size_t len);

/**
 * # Safety
 * `result` must be a live handle and `dir` a NUL-terminated string.
 */
int32_t smsr_result_write(const struct SmsrResult *result, const char *dir);

/**
 * Per-slice metrics of `result` against the truth of `case`; `out` receives
 * one record per slice and `len` must equal the slice count.
 *
 * # Safety
 * Handles must be live and `out` valid for `len` writes.
 */
int32_t smsr_evaluate(const struct SmsrResult *result,
                      const struct SmsrCase *case_,
                      struct SmsrMetrics *out,
                      size_t len);

/**
 * # Safety
 * Accepts null; otherwise the handle must not be freed twice.
 */
void smsr_result_free(struct SmsrResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMSRECON_H */
