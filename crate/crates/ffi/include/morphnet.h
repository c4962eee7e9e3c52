#ifndef MORPHNET_H
#define MORPHNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MorphnetStatus {
  MORPHNET_STATUS_OK = 0,
  MORPHNET_STATUS_NULL_POINTER = 1,
  MORPHNET_STATUS_INVALID_ARGUMENT = 2,
  MORPHNET_STATUS_SHAPE_MISMATCH = 3,
  MORPHNET_STATUS_UNDEFINED_OUTPUT = 4,
  MORPHNET_STATUS_NON_FINITE = 5,
  MORPHNET_STATUS_UNDEFINED_METRIC = 6,
  MORPHNET_STATUS_IO = 7,
  MORPHNET_STATUS_PARSE = 8,
  MORPHNET_STATUS_PANIC = 9,
} MorphnetStatus;

typedef enum MorphnetVariant {
  MORPHNET_VARIANT_RELU = 0,
  MORPHNET_VARIANT_MAXOUT = 1,
  MORPHNET_VARIANT_ZHANG = 2,
  MORPHNET_VARIANT_DENSE_MORPH = 3,
  MORPHNET_VARIANT_SPARSE_MORPH = 4,
} MorphnetVariant;

/**
 * Opaque model handle.
 */
typedef struct MorphnetModel MorphnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next morphnet call on the same thread.
 */
const char *morphnet_last_error(void);

/**
 * Builds and initializes a head. `pooling` is the maxout piece count and
 * the sparse budget factor.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum MorphnetStatus morphnet_model_build(enum MorphnetVariant variant,
                                         size_t d_in,
                                         size_t d_hidden,
                                         size_t d_out,
                                         size_t pooling,
                                         bool batchnorm,
                                         uint64_t seed,
                                         struct MorphnetModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void morphnet_model_free(struct MorphnetModel *model);

/**
 * Loads the model stored in a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum MorphnetStatus morphnet_model_load(const char *path, struct MorphnetModel **out);

/**
 * Writes the model as a checkpoint (epoch 0, no optimizer state).
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum MorphnetStatus morphnet_model_save(const struct MorphnetModel *model, const char *path);

/**
 * Input width, output width and active parameter count.
 *
 * # Safety
 * `model` must be a live handle; out pointers writable.
 */
enum MorphnetStatus morphnet_model_info(const struct MorphnetModel *model,
                                        size_t *d_in,
                                        size_t *d_out,
                                        size_t *census);

/**
 * Inference-mode forward pass. `x` is `batch × d_in`, `out` receives
 * `batch × d_out` logits.
 *
 * # Safety
 * `x` must hold `batch · d_in` values and `out` room for `out_len`.
 */
enum MorphnetStatus morphnet_model_forward(const struct MorphnetModel *model,
                                           const double *x,
                                           size_t batch,
                                           double *out,
                                           size_t out_len);

/**
 * Prunes the model in place at `(r1, r2)` under the equal-count protocol
 * and reports the remaining parameter count and the number of max-plus
 * rows left undefined.
 *
 * # Safety
 * `model` must be a live handle; out pointers writable or null.
 */
enum MorphnetStatus morphnet_model_prune(struct MorphnetModel *model,
                                         double r1,
                                         double r2,
                                         size_t *remaining,
                                         size_t *undefined_rows);

/**
 * Remaining parameter count of a head pruned at `(r1, r2)`, without
 * building it.
 *
 * # Safety
 * `out` must be writable.
 */
enum MorphnetStatus morphnet_prune_remaining(enum MorphnetVariant variant,
                                             size_t d_in,
                                             size_t d_hidden,
                                             size_t d_out,
                                             size_t pooling,
                                             double r1,
                                             double r2,
                                             size_t *out);

/**
 * Max-plus product `W ⊞ x` for an `rows × cols` weight matrix with an
 * activity mask (nonzero byte = active) and a `cols × batch` input.
 * Rows with no active entry produce `-INFINITY`.
 *
 * # Safety
 * Buffers must hold `rows·cols`, `rows·cols`, `cols·batch` and
 * `rows·batch` elements respectively.
 */
enum MorphnetStatus morphnet_max_plus_matmul(const double *weights,
                                             const uint8_t *active,
                                             size_t rows,
                                             size_t cols,
                                             const double *x,
                                             size_t batch,
                                             double *out);

/**
 * ROC-AUC of `n` scores against binary labels (nonzero = positive).
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` writable.
 */
enum MorphnetStatus morphnet_roc_auc(const double *scores,
                                     const uint8_t *labels,
                                     size_t n,
                                     double *out);

/**
 * Average precision of `n` scores against binary labels.
 *
 * # Safety
 * As for [`morphnet_roc_auc`].
 */
enum MorphnetStatus morphnet_pr_auc(const double *scores,
                                    const uint8_t *labels,
                                    size_t n,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORPHNET_H */
