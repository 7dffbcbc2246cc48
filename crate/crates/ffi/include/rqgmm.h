#ifndef RQGMM_H
#define RQGMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RqMethod {
  RQ_METHOD_GMM = 0,
  RQ_METHOD_KMEANS = 1,
  RQ_METHOD_FLAT_VQ = 2,
} RqMethod;

typedef enum RqStatus {
  RQ_STATUS_OK = 0,
  // A required pointer argument was NULL.
  RQ_STATUS_NULL_POINTER = 1,
  // Bad option value, shape, or more clusters than samples.
  RQ_STATUS_INVALID_ARGUMENT = 2,
  // Input width or output buffer size does not match the model.
  RQ_STATUS_DIMENSION_MISMATCH = 3,
  // Input contains NaN or infinity.
  RQ_STATUS_NON_FINITE = 4,
  // A fit failed on valid input (a mixture component collapsed).
  RQ_STATUS_FIT_FAILED = 5,
  // A model file or byte buffer is malformed or has an unknown version.
  RQ_STATUS_FORMAT = 6,
  RQ_STATUS_IO = 7,
  // An internal panic was caught at the boundary.
  RQ_STATUS_PANIC = 8,
} RqStatus;

// Opaque fitted model.
typedef struct RqModel RqModel;

typedef struct RqFitOptions {
  enum RqMethod method;
  size_t levels;
  size_t k;
  size_t max_iters;
  double tol;
  uint64_t seed;
  // Reseed empty clusters and starved mixture components.
  bool reseed_empty;
} RqFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into this library from the same thread.
const char *rq_last_error(void);

// Library version as a static NUL-terminated string.
const char *rq_version(void);

// Defaults: RQ-GMM, 2 levels of 128 codes, 30 iterations, tolerance 1e-6,
// seed 0, reseeding on.
struct RqFitOptions rq_fit_options_default(void);

// Fits a model to `n` x `d` row-major doubles. On success `*out` holds a
// new handle; on failure it is left untouched.
//
// # Safety
// `data` must point to `n * d` readable doubles, `opts` to a valid options
// struct and `out` to writable storage for one pointer.
enum RqStatus rq_fit_f64(const double *data,
                         size_t n,
                         size_t d,
                         const struct RqFitOptions *opts,
                         struct RqModel **out);

// As [`rq_fit_f64`] for single-precision input. Values are widened to
// double before fitting; model parameters are always double.
//
// # Safety
// As [`rq_fit_f64`].
enum RqStatus rq_fit_f32(const float *data,
                         size_t n,
                         size_t d,
                         const struct RqFitOptions *opts,
                         struct RqModel **out);

// Encodes `n` rows of width `d` (which must equal the model dimension)
// into `codes`, `L` zero-based codes per row. `codes_len` must be `n * L`.
//
// # Safety
// `model` must be a live handle, `data` must point to `n * d` doubles and
// `codes` to `codes_len` writable `uint32_t`.
enum RqStatus rq_encode_batch_f64(const struct RqModel *model,
                                  const double *data,
                                  size_t n,
                                  size_t d,
                                  uint32_t *codes,
                                  size_t codes_len);

// # Safety
// As [`rq_encode_batch_f64`] with `float` input.
enum RqStatus rq_encode_batch_f32(const struct RqModel *model,
                                  const float *data,
                                  size_t n,
                                  size_t d,
                                  uint32_t *codes,
                                  size_t codes_len);

// Sum of the code vectors selected by `n` semantic IDs (`L` codes each)
// written to `out` (`n * D` doubles).
//
// # Safety
// `codes` must point to `n * L` values and `out` to `out_len` doubles.
enum RqStatus rq_reconstruct(const struct RqModel *model,
                             const uint32_t *codes,
                             size_t n,
                             double *out,
                             size_t out_len);

// Reconstruction RMSE over `n` rows and the fraction of codes used at
// each level (`utilization` must hold `L` doubles; may be NULL).
//
// # Safety
// `data` must point to `n * d` doubles, `rmse` to one writable double and
// `utilization`, if not NULL, to `utilization_len` doubles.
enum RqStatus rq_evaluate_f64(const struct RqModel *model,
                              const double *data,
                              size_t n,
                              size_t d,
                              double *rmse,
                              double *utilization,
                              size_t utilization_len);

// Writes the model in the `RQMDL` file format.
//
// # Safety
// `path` must be a NUL-terminated string.
enum RqStatus rq_model_save(const struct RqModel *model, const char *path);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum RqStatus rq_model_load(const char *path, struct RqModel **out);

// Serializes the model in the `RQMDL` format. `*written` receives the
// serialized size. With `buf` NULL only the size is reported; otherwise
// `buf_len` must be at least that size.
//
// # Safety
// `buf`, if not NULL, must hold `buf_len` writable bytes; `written` must be
// writable.
enum RqStatus rq_model_to_bytes(const struct RqModel *model,
                                uint8_t *buf,
                                size_t buf_len,
                                size_t *written);

// # Safety
// `bytes` must point to `len` readable bytes and `out` be writable.
enum RqStatus rq_model_from_bytes(const uint8_t *bytes, size_t len, struct RqModel **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void rq_model_free(struct RqModel *model);

// # Safety
// `model` must be a live handle or NULL (which yields 0).
size_t rq_model_levels(const struct RqModel *model);

// # Safety
// `model` must be a live handle or NULL (which yields 0).
size_t rq_model_k(const struct RqModel *model);

// # Safety
// `model` must be a live handle or NULL (which yields 0).
size_t rq_model_dim(const struct RqModel *model);

// # Safety
// `model` must be a live handle or NULL (which yields `RQ_METHOD_GMM`).
enum RqMethod rq_model_method(const struct RqModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RQGMM_H */
